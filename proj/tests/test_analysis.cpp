#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <regex>

#include "sarssl/analysis.hpp"
#include "sarssl/byteio.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"
#include "support.hpp"

using namespace sarssl;
using namespace sarssl::analysis;

namespace {

std::vector<double> gaussian_cloud(std::size_t n, int dim, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) x[i * dim + j] = normal(rng) + (j == 0 ? shift : 0.0);
  }
  return x;
}

// Minimum over all permutations of mean |a_i − b_σ(i)|^p, then the p-th root.
double brute_force_assignment(const std::vector<double>& a, std::vector<double> b, double p) {
  std::sort(b.begin(), b.end());
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::pow(std::abs(a[i] - b[i]), p);
    best = std::min(best, s / static_cast<double>(a.size()));
  } while (std::next_permutation(b.begin(), b.end()));
  return std::pow(best, 1.0 / p);
}

vit::VitConfig small_vit() {
  vit::VitConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.channels = tiles::kAmplitudeChannels;
  c.embed_dim = 16;
  c.depth = 1;
  c.heads = 2;
  c.head_output_dim = 32;
  c.head_hidden_dim = 32;
  c.head_bottleneck_dim = 16;
  c.input_offset = 15.0;
  c.input_scale = 0.1;
  return c;
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("wasserstein_1d") {
  const std::vector<double> a{0.0, 1.0}, b{1.0, 2.0};
  CHECK(wasserstein_1d(a, b, 2.0) == 1.0);
  CHECK(wasserstein_1d(a, a, 2.0) == 0.0);
  CHECK(wasserstein_1d(a, b, 1.0) == 1.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 8);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    auto xs = x, ys = y;
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    for (double p : {1.0, 2.0}) {
      CHECK(wasserstein_1d(xs, ys, p) == doctest::Approx(brute_force_assignment(x, y, p)).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(wasserstein_1d(std::vector<double>{}, std::vector<double>{}, 2.0), DataError);
  CHECK_THROWS_AS(wasserstein_1d(a, std::vector<double>{1.0}, 2.0), DimensionError);
  CHECK_THROWS_AS(wasserstein_1d(a, b, 0.5), ParameterError);
}

TEST_CASE("sliced Wasserstein distance") {
  SwdOptions opts;
  opts.n_projections = 10000;
  opts.n_seeds = 3;
  opts.seed = 1;

  SUBCASE("identical sets give exactly 0") {
    const auto x = gaussian_cloud(50, 8, 0.0, 2);
    const auto r = swd(x, x, 8, opts);
    CHECK(r.mean == 0.0);
    CHECK(r.std == 0.0);
    CHECK(r.per_seed.size() == 3u);
  }
  SUBCASE("unit singletons in 2D give 2/pi") {
    const std::vector<double> zero{0.0, 0.0}, e1{1.0, 0.0};
    for (double order : {1.0, 2.0}) {
      opts.order = order;
      CHECK(swd(zero, e1, 2, opts).mean == doctest::Approx(2.0 / std::numbers::pi).epsilon(0.02));
    }
  }
  SUBCASE("symmetric under argument swap") {
    const auto x = gaussian_cloud(40, 6, 0.0, 3);
    const auto y = gaussian_cloud(70, 6, 1.0, 4);
    const auto ab = swd(x, y, 6, opts);
    const auto ba = swd(y, x, 6, opts);
    CHECK(ab.mean == ba.mean);
    CHECK(ab.per_seed == ba.per_seed);
  }
  SUBCASE("linear in the shift of a singleton") {
    const std::vector<double> zero{0.0, 0.0, 0.0};
    const double base = swd(zero, std::vector<double>{1.0, 0.0, 0.0}, 3, opts).mean;
    for (double c : {0.5, 2.0, 7.0}) {
      const double v = swd(zero, std::vector<double>{c, 0.0, 0.0}, 3, opts).mean;
      CHECK(v / c == doctest::Approx(base).epsilon(0.02));
    }
  }
  SUBCASE("seed spread shrinks with more projections") {
    const auto x = gaussian_cloud(30, 5, 0.0, 5);
    const auto y = gaussian_cloud(30, 5, 0.5, 6);
    SwdOptions few = opts, many = opts;
    few.n_projections = 100;
    few.n_seeds = many.n_seeds = 10;
    CHECK(swd(x, y, 5, many).std < swd(x, y, 5, few).std);
  }
  SUBCASE("errors") {
    const std::vector<double> x{0.0, 1.0, 2.0, 3.0};
    CHECK_THROWS_AS(swd(x, std::vector<double>{}, 2, opts), DataError);
    CHECK_THROWS_AS(swd(x, std::vector<double>{1.0, 2.0, 3.0}, 2, opts), DimensionError);
    EmbeddingSet a, b;
    a.dim = 2;
    b.dim = 3;
    a.rows.push_back({"t0", "r", std::nullopt, std::nullopt, {0.0f, 1.0f}});
    b.rows.push_back({"t1", "r", std::nullopt, std::nullopt, {0.0f, 1.0f, 2.0f}});
    CHECK_THROWS_AS(swd(a, b, opts), DimensionError);
  }
  SUBCASE("csv round trip") {
    std::vector<SwdEntry> entries{{"regA", "regB", swd(gaussian_cloud(10, 2, 0, 1), gaussian_cloud(10, 2, 1, 2), 2, opts)}};
    const auto csv = swd_csv(entries);
    CHECK(csv.rfind("region_a,region_b,mean,std,seeds,projections,order\n", 0) == 0);
    const auto back = swd_from_csv(csv);
    REQUIRE(back.size() == 1u);
    CHECK(back[0].region_b == "regB");
    CHECK(back[0].report.mean == doctest::Approx(entries[0].report.mean).epsilon(1e-8));
    CHECK(swd_csv(back) == csv);
  }
}

TEST_CASE("t-SNE affinities") {
  const int n = 60, dim = 5;
  const auto x = gaussian_cloud(n, dim, 0.0, 8);
  for (double perp : {5.0, 15.0}) {
    const auto a = tsne_affinities(x, n, dim, perp);
    for (double h : a.entropy) CHECK(std::abs(h - std::log2(perp)) <= 1e-4);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      CHECK(a.p[i * n + i] == 0.0);
      for (int j = 0; j < n; ++j) {
        total += a.p[i * n + j];
        CHECK(a.p[i * n + j] == doctest::Approx(a.p[j * n + i]).epsilon(1e-12));
      }
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
  CHECK_THROWS_AS(tsne_affinities(x, n, dim, 30.0), DataError);
  CHECK_THROWS_AS(tsne_affinities(std::vector<double>(40, 1.5), 20, 2, 3.0), DataError);
  CHECK_THROWS_AS(tsne_affinities(x, n, dim + 1, 5.0), DimensionError);
}

TEST_CASE("t-SNE layout separates two clusters") {
  const int per = 100, dim = 50;
  auto x = gaussian_cloud(per, dim, 0.0, 10);
  const auto y = gaussian_cloud(per, dim, 10.0, 11);
  x.insert(x.end(), y.begin(), y.end());
  TsneOptions opts;
  opts.seed = 3;
  const auto layout = tsne_fit(x, 2 * per, dim, opts);
  CHECK(layout.final_kl < layout.initial_kl);
  CHECK(layout.final_kl >= 0.0);
  for (double v : layout.coords) CHECK(std::isfinite(v));

  double c[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < 2 * per; ++i) {
    c[i / per][0] += layout.coords[2 * i] / per;
    c[i / per][1] += layout.coords[2 * i + 1] / per;
  }
  int correct = 0;
  for (int i = 0; i < 2 * per; ++i) {
    double d[2];
    for (int k = 0; k < 2; ++k) d[k] = std::hypot(layout.coords[2 * i] - c[k][0], layout.coords[2 * i + 1] - c[k][1]);
    correct += (d[i / per] < d[1 - i / per]) ? 1 : 0;
  }
  CHECK(correct >= 190);

  const auto again = tsne_fit(x, 2 * per, dim, opts);
  CHECK(again.coords == layout.coords);
  const auto p = tsne_affinities(x, 2 * per, dim, opts.perplexity);
  CHECK(tsne_kl(p.p, layout.coords, 2 * per) == doctest::Approx(layout.final_kl).epsilon(1e-9));
}

TEST_CASE("spearman and distance/error correlation") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{10, 20, 30, 40, 50}).rho == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}).rho == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{1, 4, 9, 16, 25}).rho == doctest::Approx(1.0));
  // Hand ranks with ties: y ranks (1.5, 1.5, 3, 4, 5).
  const auto tie = spearman(x, std::vector<double>{7, 7, 8, 9, 10});
  CHECK(tie.rho == doctest::Approx(9.5 / std::sqrt(10.0 * 9.5)).epsilon(1e-12));
  const auto flat = spearman(x, std::vector<double>(5, 3.0));
  CHECK(flat.degenerate_ties);
  CHECK(flat.rho == 0.0);

  EmbeddingSet ft, inf;
  ft.dim = inf.dim = 2;
  ft.rows.push_back({"f0", "A", 1.0, std::nullopt, {-1.0f, 0.0f}});
  ft.rows.push_back({"f1", "A", 1.0, std::nullopt, {1.0f, 0.0f}});
  for (int i = 0; i < 12; ++i) {
    const float r = 0.5f + static_cast<float>(i);
    inf.rows.push_back({"t" + std::to_string(i), "B", 1.0, static_cast<double>(r), {0.0f, r}});
  }
  const auto c = distance_error_correlation(inf, ft);
  CHECK(c.rho == doctest::Approx(1.0));
  CHECK(c.n == 12u);
  for (auto& r : inf.rows) r.abs_error = 2.0;
  const auto d = distance_error_correlation(inf, ft);
  CHECK(d.degenerate_ties);
  CHECK(d.rho == 0.0);

  inf.rows.resize(9);
  CHECK_THROWS_AS(distance_error_correlation(inf, ft), DataError);
}

TEST_CASE("eval matrix") {
  const auto cfg = small_vit();
  auto backbone = finetune::backbone_only(vit::init_student(cfg, 1));
  auto make_test = [](const std::string& region, std::uint64_t seed) {
    return TestSet{region, tiles::synth_region(tiles::reference_recipe(region),
                                               {30, 16, tiles::Modality::amplitude, 5, seed})};
  };
  const std::vector<TestSet> tests{make_test("regA", 1), make_test("regC", 2)};
  // A decoder with zero weights predicts its bias everywhere: the cell is the
  // RMS deviation of the labels around that constant.
  const float mean_a = 35.0f;
  std::vector<FinetunedModel> models{
      {"regA", finetune::combine(backbone, finetune::init_decoder(16, mean_a))}, {"regB", std::nullopt}};
  const auto m = eval_matrix(models, tests, cfg, finetune::DecoderInput::class_token);
  REQUIRE(m.cells.size() == 4u);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0.0;
    for (const auto& t : tests[c].tiles) s += (*t.label - mean_a) * (*t.label - mean_a);
    REQUIRE(m.at(0, c).has_value());
    CHECK(*m.at(0, c) == doctest::Approx(std::sqrt(s / 30.0)).epsilon(1e-6));
    CHECK_FALSE(m.at(1, c).has_value());
  }
  const auto csv = eval_matrix_csv(m);
  CHECK(csv.rfind("finetune_region,regA,regC\n", 0) == 0);
  CHECK(csv.find("\nregB,,\n") != std::string::npos);
  const auto back = eval_matrix_from_csv(csv);
  CHECK(back.rows == m.rows);
  CHECK(back.cols == m.cols);
  CHECK(back.cells == m.cells);

  const auto again = eval_matrix(models, tests, cfg, finetune::DecoderInput::class_token);
  CHECK(again.cells == m.cells);
  CHECK_THROWS_AS(eval_matrix_from_csv("region,a\n"), DataError);
}

TEST_CASE("embeddings") {
  const auto cfg = small_vit();
  const auto params = vit::init_student(cfg, 5);
  auto ts = tiles::synth_region(tiles::reference_recipe("regB"), {6, 16, tiles::Modality::amplitude, 2, 1});
  ts.push_back(ts[2]);
  const auto set = extract_embeddings(ts, params, cfg, 0);
  CHECK(set.dim == cfg.embed_dim);
  REQUIRE(set.rows.size() == 7u);
  CHECK(set.rows[6].vector == set.rows[2].vector);
  const auto direct = vit::backbone_forward<float>(params, cfg, vit::prepare_input<float>(ts[4], cfg), 16);
  CHECK(set.rows[4].vector == direct.class_token);
  CHECK(extract_embeddings(ts, params, cfg, 3).rows.size() == 3u);

  const auto back = embeddings_from_csv(embeddings_to_csv(set));
  CHECK(embeddings_to_csv(back) == embeddings_to_csv(set));
  CHECK(back.rows[0].tile_id == set.rows[0].tile_id);
  CHECK(*back.rows[0].label == doctest::Approx(*set.rows[0].label).epsilon(1e-7));

  auto coh = tiles::synth_region(tiles::reference_recipe("regB"), {1, 16, tiles::Modality::coherence, 2, 1});
  CHECK_THROWS_AS(extract_embeddings(coh, params, cfg), DimensionError);
}

TEST_CASE("report output") {
  testing::TempDir dir("report");
  SUBCASE("empty inputs write only the index") {
    const auto files = emit_report({}, dir.path());
    CHECK(files == std::vector<std::string>{"index.csv"});
    CHECK(testing::read_text(dir.path() / "index.csv") == "kind,name,file\n");
  }
  SUBCASE("one circle per point") {
    Scatter s;
    s.name = "regA_label";
    s.layout.n = 25;
    for (int i = 0; i < 25; ++i) {
      s.layout.coords.push_back(i % 5);
      s.layout.coords.push_back(i / 5);
      s.values.push_back(std::log1p(i));
    }
    NamedMatrix nm{"pretrained", {{"regA"}, {"regA", "regB"}, {1.5, std::nullopt}}};
    ReportInputs in{{s}, {}, {nm}};
    const auto files = emit_report(in, dir.path());
    CHECK(files == std::vector<std::string>{"regA_label.csv", "regA_label.svg", "eval_pretrained.csv", "index.csv"});
    const auto svg = testing::read_text(dir.path() / "regA_label.svg");
    CHECK(count_of(svg, "<circle") == 25u);
    CHECK(svg.find(colormap_hex(0)) != std::string::npos);
    CHECK(svg.find(colormap_hex(255)) != std::string::npos);
    const auto m = eval_matrix_from_csv(testing::read_text(dir.path() / "eval_pretrained.csv"));
    CHECK(m.cells == nm.matrix.cells);
    s.values.pop_back();
    CHECK_THROWS_AS(scatter_svg(s), DimensionError);
  }
  SUBCASE("colormap anchors") {
    CHECK(colormap_hex(0) == "#440154");
    CHECK(colormap_hex(255) == "#fde725");
    CHECK(colormap_hex(-4) == "#440154");
    const std::regex hex("#[0-9a-f]{6}");
    for (int i = 0; i < 256; ++i) CHECK(std::regex_match(colormap_hex(i), hex));
  }
  SUBCASE("scatter values") {
    EmbeddingSet set;
    set.dim = 1;
    set.rows.push_back({"a", "r", 0.0, -3.0, {0.0f}});
    set.rows.push_back({"b", "r", std::exp(1.0) - 1.0, 2.0, {0.0f}});
    const auto logs = scatter_values(set, ColorBy::log_label);
    CHECK(logs[0] == 0.0);
    CHECK(logs[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(scatter_values(set, ColorBy::abs_error) == std::vector<double>{3.0, 2.0});
    set.rows[0].label.reset();
    CHECK_THROWS_AS(scatter_values(set, ColorBy::log_label), DataError);
  }
}
