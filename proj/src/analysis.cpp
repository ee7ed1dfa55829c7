#include "sarssl/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "sarssl/byteio.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/rng.hpp"

namespace sarssl::analysis {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(fmt::format("line {}: '{}' is not a number", line, s));
  }
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

// ---------------------------------------------------------------------------

void EmbeddingSet::validate() const {
  if (dim < 1) throw DimensionError("embedding set has no dimension");
  for (const auto& r : rows) {
    if (r.vector.size() != static_cast<std::size_t>(dim)) {
      throw DimensionError(fmt::format("embedding '{}' has {} entries, expected {}", r.tile_id,
                                       r.vector.size(), dim));
    }
    for (float v : r.vector) {
      if (!std::isfinite(v)) throw NumericError(fmt::format("embedding '{}' is not finite", r.tile_id));
    }
  }
}

EmbeddingSet EmbeddingSet::slice(const std::string& region) const {
  EmbeddingSet out;
  out.dim = dim;
  for (const auto& r : rows) {
    if (r.region == region) out.rows.push_back(r);
  }
  return out;
}

std::vector<std::string> EmbeddingSet::regions() const {
  std::vector<std::string> out;
  for (const auto& r : rows) {
    if (std::find(out.begin(), out.end(), r.region) == out.end()) out.push_back(r.region);
  }
  return out;
}

std::vector<double> EmbeddingSet::matrix() const {
  std::vector<double> m;
  m.reserve(rows.size() * static_cast<std::size_t>(dim));
  for (const auto& r : rows) m.insert(m.end(), r.vector.begin(), r.vector.end());
  return m;
}

EmbeddingSet extract_embeddings(std::span<const tiles::Tile> tiles,
                                const tensor::ParamStore<float>& params,
                                const vit::VitConfig& cfg, std::size_t cap_per_region) {
  cfg.validate();
  EmbeddingSet set;
  set.dim = cfg.embed_dim;
  std::map<std::string, std::size_t> taken;
  for (const auto& t : tiles) {
    if (t.channels != cfg.channels) {
      throw DimensionError(fmt::format("tile '{}' has {} channels, model expects {}", t.id,
                                       t.channels, cfg.channels));
    }
    auto& count = taken[t.region];
    if (cap_per_region > 0 && count >= cap_per_region) continue;
    ++count;
    const auto image = vit::prepare_input<float>(t, cfg);
    auto out = vit::backbone_forward<float>(params, cfg, image, t.height);
    set.rows.push_back({t.id, t.region, t.label, std::nullopt, std::move(out.class_token)});
  }
  return set;
}

std::string embeddings_to_csv(const EmbeddingSet& set) {
  std::string csv = "tile_id,region,label";
  for (int i = 0; i < set.dim; ++i) csv += fmt::format(",v{}", i);
  csv += '\n';
  for (const auto& r : set.rows) {
    csv += r.tile_id;
    csv += ',';
    csv += r.region;
    csv += ',';
    if (r.label) csv += fmt::format("{:.9g}", *r.label);
    for (float v : r.vector) csv += fmt::format(",{:.9g}", v);
    csv += '\n';
  }
  return csv;
}

EmbeddingSet embeddings_from_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw DataError("embeddings CSV is empty");
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 4 || header[0] != "tile_id" || header[1] != "region" || header[2] != "label") {
    throw DataError("embeddings CSV: header must start with tile_id,region,label,v0");
  }
  EmbeddingSet set;
  set.dim = static_cast<int>(header.size() - 3);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != header.size()) {
      throw DataError(fmt::format("line {}: {} fields, expected {}", i + 1, f.size(), header.size()));
    }
    EmbeddingRow row;
    row.tile_id = f[0];
    row.region = f[1];
    if (!f[2].empty()) row.label = parse_double(f[2], i + 1);
    for (std::size_t j = 3; j < f.size(); ++j) {
      row.vector.push_back(static_cast<float>(parse_double(f[j], i + 1)));
    }
    set.rows.push_back(std::move(row));
  }
  return set;
}

// ---------------------------------------------------------------------------

double wasserstein_1d(std::span<const double> a, std::span<const double> b, double order) {
  if (a.empty() || b.empty()) throw DataError("wasserstein_1d: empty sample");
  if (a.size() != b.size()) {
    throw DimensionError(fmt::format("wasserstein_1d: sample sizes {} and {} differ", a.size(), b.size()));
  }
  if (!(order >= 1)) throw ParameterError("wasserstein_1d: order must be >= 1");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    s += order == 2.0 ? d * d : (order == 1.0 ? d : std::pow(d, order));
  }
  s /= static_cast<double>(a.size());
  return order == 2.0 ? std::sqrt(s) : (order == 1.0 ? s : std::pow(s, 1.0 / order));
}

SwdReport swd(std::span<const double> a, std::span<const double> b, int dim, const SwdOptions& opts) {
  if (dim < 1) throw DimensionError("swd: dimension must be positive");
  if (a.empty() || b.empty()) throw DataError("swd: empty sample set");
  const auto d = static_cast<std::size_t>(dim);
  if (a.size() % d != 0 || b.size() % d != 0) {
    throw DimensionError(fmt::format("swd: sample buffers are not multiples of dimension {}", dim));
  }
  if (opts.n_projections < 1 || opts.n_seeds < 1) throw ParameterError("swd: need projections and seeds");
  if (!(opts.order >= 1)) throw ParameterError("swd: order must be >= 1");

  // Order the pair by size so the estimator does not depend on argument order.
  std::span<const double> small = a, large = b;
  if (b.size() < a.size()) std::swap(small, large);
  const std::size_t n = small.size() / d;
  const std::size_t n_large = large.size() / d;

  SwdReport rep;
  rep.n_seeds = opts.n_seeds;
  rep.n_projections = opts.n_projections;
  rep.order = opts.order;
  constexpr std::size_t kChunk = 256;
  for (int s = 0; s < opts.n_seeds; ++s) {
    auto rng = make_rng(opts.seed, {hash_string("swd"), static_cast<std::uint64_t>(s)});
    std::vector<double> resampled;
    std::span<const double> other = large;
    if (n_large != n) {
      std::uniform_int_distribution<std::size_t> pick(0, n_large - 1);
      resampled.resize(n * d);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = pick(rng);
        std::copy_n(large.begin() + static_cast<std::ptrdiff_t>(j * d), d,
                    resampled.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
      other = resampled;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    double total = 0.0;
    std::vector<double> dirs, pa, pb, col_a(n), col_b(n);
    for (int done = 0; done < opts.n_projections;) {
      const std::size_t k = std::min<std::size_t>(kChunk, static_cast<std::size_t>(opts.n_projections - done));
      dirs.assign(k * d, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        double norm = 0.0;
        do {
          norm = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dirs[p * d + j] = normal(rng);
            norm += dirs[p * d + j] * dirs[p * d + j];
          }
        } while (norm == 0.0);
        const double inv = 1.0 / std::sqrt(norm);
        for (std::size_t j = 0; j < d; ++j) dirs[p * d + j] *= inv;
      }
      pa.assign(n * k, 0.0);
      pb.assign(n * k, 0.0);
      // projections[n×k] = samples[n×d] · dirsᵀ
      tensor::kernels::gemm_nt_acc<double>(small, dirs, pa, n, d, k);
      tensor::kernels::gemm_nt_acc<double>(other, dirs, pb, n, d, k);
      for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
          col_a[i] = pa[i * k + p];
          col_b[i] = pb[i * k + p];
        }
        std::sort(col_a.begin(), col_a.end());
        std::sort(col_b.begin(), col_b.end());
        total += wasserstein_1d(col_a, col_b, opts.order);
      }
      done += static_cast<int>(k);
    }
    rep.per_seed.push_back(total / opts.n_projections);
  }
  rep.mean = std::accumulate(rep.per_seed.begin(), rep.per_seed.end(), 0.0) / opts.n_seeds;
  double var = 0.0;
  for (double v : rep.per_seed) var += (v - rep.mean) * (v - rep.mean);
  rep.std = std::sqrt(var / opts.n_seeds);
  return rep;
}

SwdReport swd(const EmbeddingSet& a, const EmbeddingSet& b, const SwdOptions& opts) {
  if (a.dim != b.dim) {
    throw DimensionError(fmt::format("swd: embedding dimensions {} and {} differ", a.dim, b.dim));
  }
  return swd(a.matrix(), b.matrix(), a.dim, opts);
}

std::string swd_csv(std::span<const SwdEntry> entries) {
  std::string csv = "region_a,region_b,mean,std,seeds,projections,order\n";
  for (const auto& e : entries) {
    csv += fmt::format("{},{},{:.9g},{:.9g},{},{},{:g}\n", e.region_a, e.region_b, e.report.mean,
                       e.report.std, e.report.n_seeds, e.report.n_projections, e.report.order);
  }
  return csv;
}

std::vector<SwdEntry> swd_from_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != "region_a,region_b,mean,std,seeds,projections,order") {
    throw DataError("SWD CSV: missing header region_a,region_b,mean,std,seeds,projections,order");
  }
  std::vector<SwdEntry> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != 7) throw DataError(fmt::format("line {}: expected 7 fields", i + 1));
    SwdEntry e;
    e.region_a = f[0];
    e.region_b = f[1];
    e.report.mean = parse_double(f[2], i + 1);
    e.report.std = parse_double(f[3], i + 1);
    e.report.n_seeds = static_cast<int>(parse_double(f[4], i + 1));
    e.report.n_projections = static_cast<int>(parse_double(f[5], i + 1));
    e.report.order = parse_double(f[6], i + 1);
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> squared_distances(std::span<const double> x, int n, int dim) {
  const auto nn = static_cast<std::size_t>(n);
  const auto d = static_cast<std::size_t>(dim);
  std::vector<double> dist(nn * nn, 0.0);
  for (std::size_t i = 0; i < nn; ++i) {
    for (std::size_t j = i + 1; j < nn; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double t = x[i * d + k] - x[j * d + k];
        s += t * t;
      }
      dist[i * nn + j] = dist[j * nn + i] = s;
    }
  }
  return dist;
}

// Conditional row for precision beta; returns entropy in bits.
double conditional_row(std::span<const double> dist_row, std::size_t self, double beta,
                       std::span<double> row) {
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < dist_row.size(); ++j) {
    if (j != self) dmin = std::min(dmin, dist_row[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < dist_row.size(); ++j) {
    row[j] = j == self ? 0.0 : std::exp(-beta * (dist_row[j] - dmin));
    sum += row[j];
  }
  double h = 0.0;
  for (std::size_t j = 0; j < dist_row.size(); ++j) {
    row[j] /= sum;
    if (row[j] > 0) h -= row[j] * std::log2(row[j]);
  }
  return h;
}

}  // namespace

Affinities tsne_affinities(std::span<const double> x, int n, int dim, double perplexity) {
  if (n < 2 || dim < 1) throw DimensionError("tsne: need at least two points");
  if (x.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(dim)) {
    throw DimensionError("tsne: input size does not match n × dim");
  }
  if (!(perplexity > 0)) throw ParameterError("tsne: perplexity must be positive");
  if (!(static_cast<double>(n) > 3.0 * perplexity)) {
    throw DataError(fmt::format("tsne: {} points is too few for perplexity {} (need n > 3·perplexity)",
                                n, perplexity));
  }
  const auto nn = static_cast<std::size_t>(n);
  const auto dist = squared_distances(x, n, dim);
  if (std::all_of(dist.begin(), dist.end(), [](double v) { return v == 0.0; })) {
    throw DataError("tsne: all points are identical");
  }
  const double target = std::log2(perplexity);
  Affinities a;
  a.n = n;
  a.entropy.resize(nn);
  a.beta.resize(nn);
  std::vector<double> cond(nn * nn, 0.0);
  for (std::size_t i = 0; i < nn; ++i) {
    std::span<const double> drow(dist.data() + i * nn, nn);
    std::span<double> row(cond.data() + i * nn, nn);
    // Entropy decreases monotonically in beta. Bracket, then bisect in log space.
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double beta = 1.0;
    double h = conditional_row(drow, i, beta, row);
    for (int it = 0; it < 2000 && std::abs(h - target) > 1e-5; ++it) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : std::sqrt(beta * hi);
      } else {
        hi = beta;
        beta = lo == 0.0 ? beta / 2.0 : std::sqrt(lo * beta);
      }
      h = conditional_row(drow, i, beta, row);
    }
    if (std::abs(h - target) > 1e-4) {
      throw NumericError(fmt::format("tsne: bandwidth search for point {} stalled at entropy {} (target {})",
                                     i, h, target));
    }
    a.entropy[i] = h;
    a.beta[i] = beta;
  }
  a.p.assign(nn * nn, 0.0);
  const double scale = 1.0 / (2.0 * static_cast<double>(nn));
  for (std::size_t i = 0; i < nn; ++i) {
    for (std::size_t j = 0; j < nn; ++j) a.p[i * nn + j] = (cond[i * nn + j] + cond[j * nn + i]) * scale;
  }
  return a;
}

double tsne_kl(std::span<const double> p, std::span<const double> y, int n) {
  const auto nn = static_cast<std::size_t>(n);
  std::vector<double> num(nn * nn, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < nn; ++i) {
    for (std::size_t j = 0; j < nn; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      num[i * nn + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += num[i * nn + j];
    }
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < nn * nn; ++k) {
    if (p[k] > 0) kl += p[k] * std::log(p[k] / std::max(num[k] / z, 1e-300));
  }
  return std::max(kl, 0.0);
}

TsneLayout tsne_fit(std::span<const double> x, int n, int dim, const TsneOptions& opts) {
  if (opts.iterations < 0) throw ParameterError("tsne: iterations must be >= 0");
  const auto aff = tsne_affinities(x, n, dim, opts.perplexity);
  const auto nn = static_cast<std::size_t>(n);
  auto rng = make_rng(opts.seed, {hash_string("tsne")});
  std::normal_distribution<double> init(0.0, 1e-2);

  TsneLayout out;
  out.n = n;
  out.perplexity = opts.perplexity;
  out.iterations = opts.iterations;
  out.coords.resize(2 * nn);
  for (auto& v : out.coords) v = init(rng);
  out.initial_kl = tsne_kl(aff.p, out.coords, n);

  auto& y = out.coords;
  std::vector<double> update(2 * nn, 0.0), gains(2 * nn, 1.0), grad(2 * nn), num(nn * nn);
  for (int it = 0; it < opts.iterations; ++it) {
    const double exag = it < opts.exaggeration_iterations ? opts.exaggeration : 1.0;
    const double momentum = it < opts.momentum_switch ? opts.initial_momentum : opts.final_momentum;
    double z = 0.0;
    for (std::size_t i = 0; i < nn; ++i) {
      num[i * nn + i] = 0.0;
      for (std::size_t j = i + 1; j < nn; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * nn + j] = num[j * nn + i] = q;
        z += 2.0 * q;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < nn; ++i) {
      for (std::size_t j = 0; j < nn; ++j) {
        if (i == j) continue;
        const double w = (exag * aff.p[i * nn + j] - num[i * nn + j] / z) * num[i * nn + j];
        grad[2 * i] += 4.0 * w * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += 4.0 * w * (y[2 * i + 1] - y[2 * j + 1]);
      }
    }
    for (std::size_t k = 0; k < 2 * nn; ++k) {
      const bool same_sign = (grad[k] > 0) == (update[k] > 0);
      gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
      update[k] = momentum * update[k] - opts.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < nn; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(nn);
    my /= static_cast<double>(nn);
    for (std::size_t i = 0; i < nn; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("tsne: layout diverged to non-finite coordinates");
  }
  out.final_kl = tsne_kl(aff.p, out.coords, n);
  return out;
}

TsneLayout tsne_fit(const EmbeddingSet& set, const TsneOptions& opts) {
  set.validate();
  return tsne_fit(set.matrix(), static_cast<int>(set.rows.size()), set.dim, opts);
}

// ---------------------------------------------------------------------------

EvalMatrix eval_matrix(std::span<const FinetunedModel> models, std::span<const TestSet> tests,
                       const vit::VitConfig& cfg, finetune::DecoderInput input) {
  EvalMatrix m;
  for (const auto& model : models) m.rows.push_back(model.name);
  for (const auto& t : tests) m.cols.push_back(t.region);
  m.cells.assign(m.rows.size() * m.cols.size(), std::nullopt);
  for (std::size_t r = 0; r < models.size(); ++r) {
    if (!models[r].params) continue;
    const auto backbone = finetune::backbone_only(*models[r].params);
    const auto decoder = finetune::decoder_only(*models[r].params);
    for (std::size_t c = 0; c < tests.size(); ++c) {
      if (tests[c].tiles.empty()) continue;
      const auto pred = finetune::predict(backbone, decoder, cfg, input, tests[c].tiles);
      m.cells[r * m.cols.size() + c] = finetune::rmse(pred, finetune::labels_of(tests[c].tiles));
    }
  }
  return m;
}

std::string eval_matrix_csv(const EvalMatrix& m) {
  std::string csv = "finetune_region";
  for (const auto& c : m.cols) csv += "," + c;
  csv += '\n';
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    csv += m.rows[r];
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      csv += ',';
      if (const auto& v = m.at(r, c)) csv += fmt::format("{:.17g}", *v);
    }
    csv += '\n';
  }
  return csv;
}

EvalMatrix eval_matrix_from_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw DataError("eval matrix CSV is empty");
  auto header = split_csv_line(lines[0]);
  if (header.empty() || header[0] != "finetune_region") {
    throw DataError("eval matrix CSV: header must start with finetune_region");
  }
  EvalMatrix m;
  m.cols.assign(header.begin() + 1, header.end());
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != header.size()) {
      throw DataError(fmt::format("line {}: {} fields, expected {}", i + 1, f.size(), header.size()));
    }
    m.rows.push_back(f[0]);
    for (std::size_t j = 1; j < f.size(); ++j) {
      m.cells.push_back(f[j].empty() ? std::nullopt : std::optional<double>(parse_double(f[j], i + 1)));
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: samples differ in length");
  Correlation c;
  c.n = x.size();
  if (x.size() < 2) throw DataError("spearman: need at least two samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mean = (static_cast<double>(x.size()) + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) {
    c.degenerate_ties = true;
    return c;
  }
  c.rho = sxy / std::sqrt(sxx * syy);
  return c;
}

Correlation distance_error_correlation(const EmbeddingSet& infer, const EmbeddingSet& finetune) {
  if (infer.rows.size() < 10) {
    throw DataError(fmt::format("distance_error_correlation: {} inference tiles, need at least 10",
                                infer.rows.size()));
  }
  if (finetune.rows.empty()) throw DataError("distance_error_correlation: empty fine-tune set");
  if (infer.dim != finetune.dim) throw DimensionError("distance_error_correlation: dimension mismatch");
  const auto d = static_cast<std::size_t>(finetune.dim);
  std::vector<double> centroid(d, 0.0);
  for (const auto& r : finetune.rows) {
    for (std::size_t k = 0; k < d; ++k) centroid[k] += r.vector[k];
  }
  for (auto& v : centroid) v /= static_cast<double>(finetune.rows.size());
  std::vector<double> dist, err;
  for (const auto& r : infer.rows) {
    if (!r.abs_error) throw DataError(fmt::format("tile '{}' has no error attached", r.tile_id));
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (r.vector[k] - centroid[k]) * (r.vector[k] - centroid[k]);
    dist.push_back(std::sqrt(s));
    err.push_back(std::abs(*r.abs_error));
  }
  return spearman(dist, err);
}

// ---------------------------------------------------------------------------

std::vector<double> scatter_values(const EmbeddingSet& set, ColorBy by) {
  std::vector<double> v;
  v.reserve(set.rows.size());
  for (const auto& r : set.rows) {
    if (by == ColorBy::log_label) {
      if (!r.label) throw DataError(fmt::format("tile '{}' has no label to color by", r.tile_id));
      v.push_back(std::log1p(std::max(*r.label, 0.0)));
    } else {
      if (!r.abs_error) throw DataError(fmt::format("tile '{}' has no error to color by", r.tile_id));
      v.push_back(std::abs(*r.abs_error));
    }
  }
  return v;
}

std::string colormap_hex(int index) {
  static constexpr std::array<std::array<int, 3>, 5> kAnchors{{
      {0x44, 0x01, 0x54}, {0x3b, 0x52, 0x8b}, {0x21, 0x91, 0x8c}, {0x5e, 0xc9, 0x62}, {0xfd, 0xe7, 0x25}}};
  const int i = std::clamp(index, 0, 255);
  const double t = static_cast<double>(i) / 255.0 * 4.0;
  const int seg = std::min(static_cast<int>(t), 3);
  const double f = t - seg;
  std::array<int, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<int>(std::lround(kAnchors[seg][c] + f * (kAnchors[seg + 1][c] - kAnchors[seg][c])));
  }
  return fmt::format("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2]);
}

std::string scatter_svg(const Scatter& s) {
  const auto& L = s.layout;
  if (s.values.size() != static_cast<std::size_t>(L.n)) {
    throw DimensionError(fmt::format("scatter '{}': {} values for {} points", s.name, s.values.size(), L.n));
  }
  constexpr double kSize = 640.0, kMargin = 20.0;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1, vmin = 0, vmax = 1;
  if (L.n > 0) {
    xmin = ymin = vmin = std::numeric_limits<double>::infinity();
    xmax = ymax = vmax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < L.n; ++i) {
      xmin = std::min(xmin, L.coords[2 * i]);
      xmax = std::max(xmax, L.coords[2 * i]);
      ymin = std::min(ymin, L.coords[2 * i + 1]);
      ymax = std::max(ymax, L.coords[2 * i + 1]);
      vmin = std::min(vmin, s.values[i]);
      vmax = std::max(vmax, s.values[i]);
    }
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-12});
  const double scale = (kSize - 2 * kMargin) / span;
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n"
      "<title>{1} ({2})</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kSize, s.name, s.color_by == ColorBy::log_label ? "log(1+label)" : "abs error");
  for (int i = 0; i < L.n; ++i) {
    const double t = vmax > vmin ? (s.values[i] - vmin) / (vmax - vmin) : 0.0;
    const int idx = std::min(255, static_cast<int>(t * 256.0));
    svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n",
                       kMargin + (L.coords[2 * i] - xmin) * scale,
                       kSize - kMargin - (L.coords[2 * i + 1] - ymin) * scale, colormap_hex(idx));
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<std::string> emit_report(const ReportInputs& inputs, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create report directory '{}': {}", dir.string(), ec.message()));

  std::vector<std::string> files;
  std::string index = "kind,name,file\n";
  auto emit = [&](const std::string& kind, const std::string& name, const std::string& file,
                  const std::string& content) {
    byteio::write_text(dir / file, content);
    files.push_back(file);
    index += fmt::format("{},{},{}\n", kind, name, file);
  };
  for (const auto& s : inputs.scatters) {
    std::string csv = "index,x,y,value\n";
    for (int i = 0; i < s.layout.n; ++i) {
      csv += fmt::format("{},{:.9g},{:.9g},{:.9g}\n", i, s.layout.coords[2 * i],
                         s.layout.coords[2 * i + 1], s.values.at(static_cast<std::size_t>(i)));
    }
    emit("tsne_csv", s.name, s.name + ".csv", csv);
    emit("tsne_svg", s.name, s.name + ".svg", scatter_svg(s));
  }
  if (!inputs.swd.empty()) emit("swd", "swd", "swd.csv", swd_csv(inputs.swd));
  for (const auto& m : inputs.matrices) {
    emit("eval_matrix", m.name, "eval_" + m.name + ".csv", eval_matrix_csv(m.matrix));
  }
  byteio::write_text(dir / "index.csv", index);
  files.push_back("index.csv");
  return files;
}

}  // namespace sarssl::analysis
