// Acceptance run: one PASS/FAIL line per criterion, followed by indented
// measurements. Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "sarssl/analysis.hpp"
#include "sarssl/cli.hpp"
#include "sarssl/config.hpp"
#include "sarssl/dino.hpp"
#include "sarssl/model_check.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"

namespace fs = std::filesystem;
using namespace sarssl;

namespace {

// Pinned tolerances and limits.
constexpr double kGradStep = 1e-3;
constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 60;
constexpr double kDinoLossRatio = 0.8;
constexpr double kDinoEntropyFraction = 0.1;
constexpr double kDinoSeconds = 300;
constexpr double kRecurrenceTolerance = 1e-6;
constexpr double kSwdRelTolerance = 0.02;
constexpr double kSwdSeconds = 30;
constexpr double kTsneEntropyTolerance = 1e-4;
constexpr double kTsneMassTolerance = 1e-6;
constexpr double kTsneAccuracy = 0.95;
constexpr double kTsneSeconds = 120;
constexpr double kTrendSeconds = 900;
constexpr double kRhoThreshold = 0.3;
constexpr double kPipelineSeconds = 600;
constexpr std::array<std::uint64_t, 3> kSeeds{0, 1, 2};

const fs::path kConfigs = fs::path(SARSSL_SOURCE_DIR) / "configs";

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> notes;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = cli::run(args, out, err);
  if (status != 0) {
    std::string joined;
    for (const auto& a : args) joined += a + " ";
    throw std::runtime_error(fmt::format("sarssl {}exited {}: {}", joined, status, err.str()));
  }
  return out.str();
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto mc = tiny_model_check_config();
  GradCheckOptions opt;
  opt.step = kGradStep;
  const auto r = check_model_gradients(mc, opt);
  const double secs = seconds_since(t0);
  o.pass = r.max_relative_error < kGradTolerance && secs < kGradSeconds;
  o.summary = fmt::format("max_rel_err {:.3e} (need < {:g}) over all {} coordinates at step {:g}; {:.1f} s (limit {:g} s)",
                          r.max_relative_error, kGradTolerance, r.coordinates_checked, kGradStep, secs, kGradSeconds);
  o.notes.push_back(fmt::format("worst {}[{}]: analytic {:.9g} numeric {:.9g}", r.worst_parameter,
                                r.worst_index, r.worst_analytic, r.worst_numeric));
  // Truncation error of central differences scales with step²; the ratio
  // between steps 1e-2 and 1e-3 separates it from a wrong backward pass.
  GradCheckOptions coarse = opt;
  coarse.step = 1e-2;
  const auto c = check_model_gradients(mc, coarse);
  o.notes.push_back(fmt::format("diagnostic, step 1e-2: max_rel_err {:.3e} at {}[{}]; ratio to step 1e-3 {:.1f} (100 for pure truncation)",
                                c.max_relative_error, c.worst_parameter, c.worst_index,
                                c.max_relative_error / r.max_relative_error));
  GradCheckOptions fine = opt;
  fine.step = 1e-4;
  const auto f = check_model_gradients(mc, fine);
  o.notes.push_back(fmt::format("diagnostic, step 1e-4: max_rel_err {:.3e} at {}[{}] (analytic {:.3g}, numeric {:.3g})",
                                f.max_relative_error, f.worst_parameter, f.worst_index, f.worst_analytic,
                                f.worst_numeric));
  return o;
}

Outcome dino_invariants() {
  Outcome o;
  const auto cfg = config::load_config(kConfigs / "reference.ini");
  std::vector<tiles::Tile> data;
  const std::array<int, 3> counts{67, 67, 66};
  const std::array<const char*, 3> regions{"regA", "regB", "regC"};
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto t = tiles::synth_region(tiles::reference_recipe(regions[i]),
                                 {counts[i], cfg.data.tile_size, cfg.data.modality, cfg.data.tiles_per_band, 0});
    data.insert(data.end(), t.begin(), t.end());
  }
  auto v = cfg.vit;
  vit::fit_input_normalization(v, data);
  auto d = cfg.dino;
  d.seed = 0;

  const auto t0 = Clock::now();
  std::size_t steps = 0, ema_mismatch = 0, touched = 0, below_entropy = 0;
  const auto result = dino::pretrain(data, v, d, [&](const dino::StepView& s) {
    ++steps;
    if (s.teacher_at_step_start->checksum() != s.teacher_before_ema->checksum()) ++touched;
    if (s.record->loss < s.record->teacher_entropy) ++below_entropy;
    const float keep = static_cast<float>(s.ema_momentum);
    const float take = static_cast<float>(1.0 - s.ema_momentum);
    for (std::size_t i = 0; i < s.teacher->size(); ++i) {
      const auto before = s.teacher_before_ema->tensor(i).value();
      const auto stud = s.student->tensor(i).value();
      const auto after = s.teacher->tensor(i).value();
      for (std::size_t j = 0; j < after.size(); ++j) {
        if (after[j] != keep * before[j] + take * stud[j]) ++ema_mismatch;
      }
    }
  });
  const double secs = seconds_since(t0);

  std::map<int, std::pair<double, int>> per_epoch;
  double min_entropy = std::numeric_limits<double>::infinity();
  for (const auto& r : result.history) {
    per_epoch[r.epoch].first += r.loss;
    per_epoch[r.epoch].second += 1;
    min_entropy = std::min(min_entropy, r.teacher_entropy);
  }
  const double first = per_epoch.begin()->second.first / per_epoch.begin()->second.second;
  const double last = per_epoch.rbegin()->second.first / per_epoch.rbegin()->second.second;
  const double entropy_floor = kDinoEntropyFraction * std::log(static_cast<double>(v.head_output_dim));
  o.pass = steps > 0 && ema_mismatch == 0 && touched == 0 && below_entropy == 0 &&
           last <= kDinoLossRatio * first && min_entropy > entropy_floor && secs < kDinoSeconds &&
           static_cast<int>(per_epoch.size()) == d.epochs;
  o.summary = fmt::format("{} steps, EMA mismatches {}, loss<entropy batches {}, loss ratio {:.3f} (need <= {:g}), "
                          "min teacher entropy {:.3f} (need > {:.3f}); {:.1f} s (limit {:g} s)",
                          steps, ema_mismatch, below_entropy, last / first, kDinoLossRatio, min_entropy,
                          entropy_floor, secs, kDinoSeconds);
  o.notes.push_back(fmt::format("{} tiles (regA/regB/regC), {} epochs, first-epoch loss {:.4f}, final-epoch loss {:.4f}, "
                                "teacher modified outside EMA in {} steps",
                                data.size(), d.epochs, first, last, touched));
  return o;
}

Outcome schedule_and_center() {
  Outcome o;
  const auto g = dino::DinoConfig::gssic();
  const auto s = dino::DinoConfig::s1grd();
  bool sched = true;
  for (int e = 0; e <= 20; ++e) sched = sched && dino::teacher_temp_schedule(e, g) == 0.04;
  sched = sched && dino::teacher_temp_schedule(0, s) == 0.01 && dino::teacher_temp_schedule(5, s) == 0.001 &&
          dino::teacher_temp_schedule(19, s) == 0.001 && s.warmup_teacher_temp_epochs == 5;

  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 2.0);
  const std::size_t k = 16;
  dino::CenterState center{std::vector<float>(k, 0.0f)};
  std::vector<double> oracle(k, 0.0);
  double center_err = 0.0;
  for (int step = 0; step < 100; ++step) {
    std::vector<std::vector<float>> logits(4, std::vector<float>(k));
    for (auto& row : logits) for (auto& x : row) x = static_cast<float>(normal(rng));
    dino::update_center(center, logits, g.center_momentum);
    for (std::size_t j = 0; j < k; ++j) {
      double mean = 0.0;
      for (const auto& row : logits) mean += row[j];
      mean /= static_cast<double>(logits.size());
      oracle[j] = g.center_momentum * oracle[j] + (1.0 - g.center_momentum) * mean;
      center_err = std::max(center_err, std::abs(center.center[j] - oracle[j]));
    }
  }

  tensor::ParamStore<float> teacher, student;
  teacher.add("w", {k});
  student.add("w", {k});
  // The teacher is stored in float: the scalar oracle runs the recurrence
  // in the same precision, a double oracle measures storage drift.
  std::vector<float> t_oracle(k);
  std::vector<double> t_double(k);
  for (std::size_t j = 0; j < k; ++j) {
    teacher.at("w")[j] = static_cast<float>(normal(rng));
    t_oracle[j] = teacher.at("w")[j];
    t_double[j] = teacher.at("w")[j];
  }
  const auto keep = static_cast<float>(g.ema_momentum);
  const auto take = static_cast<float>(1.0 - g.ema_momentum);
  double ema_err = 0.0, drift = 0.0;
  for (int step = 0; step < 100; ++step) {
    for (std::size_t j = 0; j < k; ++j) student.at("w")[j] = static_cast<float>(normal(rng));
    dino::ema_update(teacher, student, g.ema_momentum);
    for (std::size_t j = 0; j < k; ++j) {
      t_oracle[j] = keep * t_oracle[j] + take * student.at("w")[j];
      t_double[j] = g.ema_momentum * t_double[j] + (1.0 - g.ema_momentum) * student.at("w")[j];
      ema_err = std::max(ema_err, static_cast<double>(std::abs(teacher.at("w")[j] - t_oracle[j])));
      drift = std::max(drift, std::abs(teacher.at("w")[j] - t_double[j]));
    }
  }
  o.pass = sched && center_err < kRecurrenceTolerance && ema_err < kRecurrenceTolerance;
  o.summary = fmt::format("schedule endpoints {}; center max err {:.2e}, EMA max err {:.2e} over 100 steps (need < {:g})",
                          sched ? "exact" : "WRONG", center_err, ema_err, kRecurrenceTolerance);
  o.notes.push_back(fmt::format("EMA against a double-precision recurrence: max drift {:.2e} (float32 storage rounding)", drift));
  return o;
}

Outcome swd_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  analysis::SwdOptions opts;  // 10 seeds x 10000 projections, order 2
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(60 * 8);
  for (auto& x : a) x = normal(rng);
  const double self = analysis::swd(a, a, 8, opts).mean;

  const std::vector<double> zero{0.0, 0.0}, e1{1.0, 0.0};
  const double singleton = analysis::swd(zero, e1, 2, opts).mean;
  const double expected = 2.0 / std::numbers::pi;
  const double rel = std::abs(singleton - expected) / expected;

  std::uniform_real_distribution<double> u(-5.0, 5.0);
  int instances = 0, mismatches = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 8);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    for (double p : {1.0, 2.0}) {
      std::vector<double> perm = y;
      std::sort(perm.begin(), perm.end());
      double best = std::numeric_limits<double>::infinity();
      do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += std::pow(std::abs(x[i] - perm[i]), p);
        best = std::min(best, s / static_cast<double>(n));
      } while (std::next_permutation(perm.begin(), perm.end()));
      auto xs = x, ys = y;
      std::sort(xs.begin(), xs.end());
      std::sort(ys.begin(), ys.end());
      const double w = analysis::wasserstein_1d(xs, ys, p);
      ++instances;
      if (std::abs(w - std::pow(best, 1.0 / p)) > 1e-12 * std::max(1.0, w)) ++mismatches;
    }
  }

  std::vector<double> b(60 * 8);
  for (auto& x : b) x = normal(rng) + 0.5;
  auto few = opts;
  few.n_projections = 100;
  const double std_many = analysis::swd(a, b, 8, opts).std;
  const double std_few = analysis::swd(a, b, 8, few).std;
  const double secs = seconds_since(t0);
  o.pass = self == 0.0 && rel <= kSwdRelTolerance && mismatches == 0 && std_many < std_few && secs < kSwdSeconds;
  o.summary = fmt::format("swd(A,A) = {:g}; singleton pair {:.5f} vs 2/pi {:.5f} (rel {:.4f}, need <= {:g}); "
                          "brute-force mismatches {}/{}; seed std {:.2e} (10000 proj) vs {:.2e} (100 proj); {:.1f} s (limit {:g} s)",
                          self, singleton, expected, rel, kSwdRelTolerance, mismatches, instances, std_many,
                          std_few, secs, kSwdSeconds);
  return o;
}

Outcome tsne_correctness() {
  Outcome o;
  const int per = 200, dim = 50;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(2 * per * dim));
  for (int i = 0; i < 2 * per; ++i) {
    for (int j = 0; j < dim; ++j) x[i * dim + j] = normal(rng) + (i >= per && j == 0 ? 10.0 : 0.0);
  }
  const auto t0 = Clock::now();
  analysis::TsneOptions opts;
  opts.seed = 0;
  const auto aff = analysis::tsne_affinities(x, 2 * per, dim, opts.perplexity);
  double entropy_err = 0.0;
  for (double h : aff.entropy) entropy_err = std::max(entropy_err, std::abs(h - std::log2(opts.perplexity)));
  double mass = 0.0, asym = 0.0;
  const int n = 2 * per;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      mass += aff.p[i * n + j];
      asym = std::max(asym, std::abs(aff.p[i * n + j] - aff.p[j * n + i]));
    }
  }
  const auto layout = analysis::tsne_fit(x, n, dim, opts);
  const double secs = seconds_since(t0);

  double c[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < n; ++i) {
    c[i / per][0] += layout.coords[2 * i] / per;
    c[i / per][1] += layout.coords[2 * i + 1] / per;
  }
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const int own = i / per;
    const double d_own = std::hypot(layout.coords[2 * i] - c[own][0], layout.coords[2 * i + 1] - c[own][1]);
    const double d_other = std::hypot(layout.coords[2 * i] - c[1 - own][0], layout.coords[2 * i + 1] - c[1 - own][1]);
    correct += d_own < d_other ? 1 : 0;
  }
  const double acc = static_cast<double>(correct) / n;
  o.pass = entropy_err <= kTsneEntropyTolerance && std::abs(mass - 1.0) <= kTsneMassTolerance &&
           asym <= kTsneMassTolerance && layout.final_kl < layout.initial_kl && acc >= kTsneAccuracy &&
           secs < kTsneSeconds;
  o.summary = fmt::format("entropy err {:.1e} bits (need <= {:g}); |sum P - 1| {:.1e}, asym {:.1e} (need <= {:g}); "
                          "KL {:.4f} -> {:.4f}; centroid accuracy {:.3f} (need >= {:g}); n={} {:.1f} s (limit {:g} s)",
                          entropy_err, kTsneEntropyTolerance, std::abs(mass - 1.0), asym, kTsneMassTolerance,
                          layout.initial_kl, layout.final_kl, acc, kTsneAccuracy, n, secs, kTsneSeconds);
  return o;
}

Outcome split_and_tiles() {
  Outcome o;
  std::vector<std::uint32_t> bands(10);
  std::iota(bands.begin(), bands.end(), 0u);
  bool exact = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::array<int, 3> n{0, 0, 0};
    for (const auto& [b, s] : tiles::assign_splits(bands, seed)) ++n[static_cast<std::size_t>(s)];
    exact = exact && n == std::array<int, 3>{6, 2, 2};
  }

  std::size_t spans = 0, roundtrip_bad = 0, total = 0;
  for (const char* region : {"regA", "regB", "regC", "regD"}) {
    const auto ts = tiles::synth_region(tiles::reference_recipe(region), {400, 32, tiles::Modality::amplitude, 40, 0});
    tiles::DatasetManifest m;
    for (const auto& t : ts) m.entries.push_back({t.id, t.region, t.band_index, tiles::Split::train, t.id});
    tiles::assign_manifest_splits(m, 0);
    std::map<std::uint32_t, std::set<tiles::Split>> per_band;
    for (const auto& e : m.entries) per_band[e.band_index].insert(e.split);
    for (const auto& [b, s] : per_band) spans += s.size() > 1 ? 1 : 0;
    for (const auto& t : ts) {
      ++total;
      const auto bytes = tiles::encode_tile(t);
      const auto back = tiles::decode_tile(bytes);
      if (tiles::encode_tile(back) != bytes || back.data != t.data || back.label != t.label) ++roundtrip_bad;
    }
  }
  const auto coh = tiles::synth_region(tiles::reference_recipe("regA"), {4, 32, tiles::Modality::coherence, 4, 0});
  for (const auto& t : coh) {
    ++total;
    if (tiles::encode_tile(tiles::decode_tile(tiles::encode_tile(t))) != tiles::encode_tile(t)) ++roundtrip_bad;
  }

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> db(-25.0f, 0.0f), cc(0.0f, 1.0f);
  tiles::SeasonalStack st;
  st.height = st.width = 16;
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<float> vv(256), vh(256), c12(256), c24(256);
    for (auto& v : vv) v = db(rng);
    for (auto& v : vh) v = db(rng);
    for (auto& v : c12) v = cc(rng);
    for (auto& v : c24) v = cc(rng);
    st.vv_db[k] = vv;
    st.vh_db[k] = vh;
    st.coh_12d[k] = c12;
    st.coh_24d[k] = c24;
  }
  const auto amp = tiles::compose_s1grd_channels(st);
  const auto gs = tiles::compose_gssic_channels(st);
  std::size_t identity_bad = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t p = 0; p < 256; ++p) {
      const float vv = amp.data[(3 * k) * 256 + p], vh = amp.data[(3 * k + 1) * 256 + p];
      if (amp.data[(3 * k + 2) * 256 + p] != vv - vh || vv != (*st.vv_db[k])[p] || vh != (*st.vh_db[k])[p]) ++identity_bad;
    }
  }
  o.pass = exact && spans == 0 && roundtrip_bad == 0 && amp.channels == 12 && gs.channels == 8 &&
           amp.data.size() == 12u * 256u && gs.data.size() == 8u * 256u && identity_bad == 0;
  o.summary = fmt::format("10 bands -> 6/2/2 for 100 seeds: {}; bands spanning splits {}; round-trip failures {}/{}; "
                          "channels {} and {}; VV-VH identity violations {}",
                          exact ? "yes" : "no", spans, roundtrip_bad, total, amp.channels, gs.channels, identity_bad);
  return o;
}

// ---------------------------------------------------------------------------
// Reference experiment shared by criteria 7 and 8.

struct SeedRun {
  fs::path dir;
  double seconds_pretrain_finetune = 0.0;
};

std::vector<std::string> ref_args(const std::string& command, const fs::path& root, const std::string& run_id,
                                  std::optional<std::uint64_t> seed) {
  std::vector<std::string> a{command, "--config", (kConfigs / "reference.ini").string(), "--out", root.string(),
                             "--run-id", run_id};
  if (seed) {
    a.push_back("--seed");
    a.push_back(std::to_string(*seed));
  }
  return a;
}

struct Experiment {
  fs::path root;
  std::vector<SeedRun> runs;
  double synth_seconds = 0.0;
};

Experiment run_reference(const fs::path& root) {
  Experiment ex;
  ex.root = root;
  fs::remove_all(root);
  fs::create_directories(root);
  auto t0 = Clock::now();
  cli(ref_args("synth-data", root, "base", std::nullopt));
  cli(ref_args("split", root, "base", std::nullopt));
  ex.synth_seconds = seconds_since(t0);
  for (auto seed : kSeeds) {
    SeedRun r;
    const auto id = fmt::format("s{}", seed);
    r.dir = root / id;
    fs::create_directories(r.dir);
    fs::create_directory_symlink(fs::absolute(root / "base" / "data"), r.dir / "data");
    t0 = Clock::now();
    cli(ref_args("pretrain", root, id, seed));
    cli(ref_args("finetune", root, id, seed));
    r.seconds_pretrain_finetune = seconds_since(t0);
    for (const char* c : {"eval-matrix", "embed", "tsne", "swd", "report"}) cli(ref_args(c, root, id, seed));
    ex.runs.push_back(r);
  }
  return ex;
}

double test_rmse(const fs::path& report) {
  std::istringstream in(read_text(report));
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("test_rmse,", 0) == 0) return std::stod(line.substr(10));
  }
  throw std::runtime_error("no test_rmse in " + report.string());
}

Outcome pretraining_benefit(const Experiment& ex) {
  Outcome o;
  const auto cfg = config::load_config(kConfigs / "reference.ini");
  const auto regions = cfg.pretrain_regions();
  int wins = 0;
  double secs = ex.synth_seconds;
  for (const auto& r : ex.runs) secs += r.seconds_pretrain_finetune;
  for (const auto& region : regions) {
    std::vector<double> pre, scr;
    for (const auto& r : ex.runs) {
      pre.push_back(test_rmse(r.dir / "reports" / fmt::format("finetune_pretrained_{}.csv", region)));
      scr.push_back(test_rmse(r.dir / "reports" / fmt::format("finetune_scratch_{}.csv", region)));
    }
    const bool win = median(pre) <= median(scr);
    wins += win ? 1 : 0;
    o.notes.push_back(fmt::format("{}: pretrained median {:.3f} [{:.3f} {:.3f} {:.3f}] vs scratch median {:.3f} [{:.3f} {:.3f} {:.3f}] -> {}",
                                  region, median(pre), pre[0], pre[1], pre[2], median(scr), scr[0], scr[1],
                                  scr[2], win ? "pretrained" : "scratch"));
  }
  o.pass = wins >= 2 && secs < kTrendSeconds;
  o.summary = fmt::format("pretrained <= scratch in {}/{} regions (need >= 2), {:g}% labels, seeds 0-2; {:.0f} s (limit {:g} s)",
                          wins, regions.size(), cfg.finetune.label_fraction * 100.0, secs, kTrendSeconds);
  return o;
}

Outcome generalizability(const Experiment& ex) {
  Outcome o;
  bool diag_all = true, swd_all = true;
  std::vector<double> rho_medians;
  for (std::size_t s = 0; s < ex.runs.size(); ++s) {
    const auto& dir = ex.runs[s].dir;
    const auto m = analysis::eval_matrix_from_csv(read_text(dir / "reports" / "eval_matrix_pretrained.csv"));
    int violations = 0;
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      const auto row = std::find(m.rows.begin(), m.rows.end(), m.cols[c]);
      if (row == m.rows.end()) continue;
      const auto dr = static_cast<std::size_t>(row - m.rows.begin());
      for (std::size_t r = 0; r < m.rows.size(); ++r) {
        if (r == dr) continue;
        if (!m.at(dr, c) || !m.at(r, c) || *m.at(dr, c) > *m.at(r, c)) ++violations;
      }
    }
    diag_all = diag_all && violations == 0;

    std::vector<double> rhos;
    std::string rho_text;
    std::istringstream in(read_text(dir / "reports" / "distance_error_pretrained.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
      rhos.push_back(std::stod(f.at(2)));
      rho_text += fmt::format(" {}:{:+.3f}", f[0], rhos.back());
    }
    if (rhos.empty()) throw std::runtime_error("no distance/error correlations in " + dir.string());
    rho_medians.push_back(median(rhos));

    const auto entries = analysis::swd_from_csv(read_text(dir / "reports" / "swd.csv"));
    std::map<std::string, double> within;
    for (const auto& e : entries) {
      const auto slash = e.region_a.find('/');
      if (slash != std::string::npos) within[e.region_a.substr(0, slash)] = e.report.mean;
    }
    int swd_bad = 0, pairs = 0;
    double tightest = std::numeric_limits<double>::infinity();
    std::string tight_pair;
    for (const auto& e : entries) {
      if (e.region_a.find('/') != std::string::npos) continue;
      ++pairs;
      const double w = std::max(within.at(e.region_a), within.at(e.region_b));
      if (!(e.report.mean > w)) ++swd_bad;
      if (e.report.mean / w < tightest) {
        tightest = e.report.mean / w;
        tight_pair = fmt::format("{}-{} {:.3f} vs {:.3f}", e.region_a, e.region_b, e.report.mean, w);
      }
    }
    swd_all = swd_all && swd_bad == 0 && pairs > 0;
    o.notes.push_back(fmt::format("seed {}: (a) diagonal violations {}; (b) rho{} median {:+.3f}; (c) SWD pairs failing {}/{}, tightest {}",
                                  kSeeds[s], violations, rho_text, rho_medians.back(), swd_bad, pairs, tight_pair));
  }
  const double rho = median(rho_medians);
  const bool rho_ok = rho >= kRhoThreshold;
  o.pass = diag_all && rho_ok && swd_all;
  o.summary = fmt::format("(a) diagonal dominance on every seed: {}; (b) median rho {:+.3f} (need >= {:g}): {}; "
                          "(c) between > within SWD on every seed: {}",
                          diag_all ? "PASS" : "FAIL", rho, kRhoThreshold, rho_ok ? "PASS" : "FAIL",
                          swd_all ? "PASS" : "FAIL");
  o.notes.push_back("rho per seed is the median over the fine-tune regions; the reported value is the median over seeds");
  return o;
}

// Relative path -> contents for every CSV below `dir`, following symlinks.
std::map<std::string, std::string> csv_tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir, fs::directory_options::follow_directory_symlink)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") {
      out[e.path().lexically_relative(dir).generic_string()] = read_text(e.path());
    }
  }
  return out;
}

std::string compare_trees(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b,
                          int& differing) {
  differing = 0;
  std::string first;
  std::set<std::string> names;
  for (const auto& [k, v] : a) names.insert(k);
  for (const auto& [k, v] : b) names.insert(k);
  for (const auto& n : names) {
    const auto ia = a.find(n), ib = b.find(n);
    if (ia == a.end() || ib == b.end() || ia->second != ib->second) {
      ++differing;
      if (first.empty()) first = n;
    }
  }
  return first;
}

Outcome determinism(const fs::path& work, const Experiment* ex) {
  Outcome o;
  const auto root = work / "determinism";
  fs::remove_all(root);
  const auto tiny = (kConfigs / "tiny.ini").string();
  for (const char* id : {"tiny_a", "tiny_b"}) {
    for (const char* c : {"synth-data", "split", "pretrain", "finetune", "eval-matrix", "embed", "tsne", "swd", "report"}) {
      cli({c, "--config", tiny, "--out", root.string(), "--run-id", id});
    }
  }
  int tiny_diff = 0;
  const auto ta = csv_tree(root / "tiny_a"), tb = csv_tree(root / "tiny_b");
  const auto tiny_first = compare_trees(ta, tb, tiny_diff);

  const auto t0 = Clock::now();
  for (const char* c : {"synth-data", "split", "pretrain", "finetune", "eval-matrix", "embed", "tsne", "swd", "report"}) {
    cli(ref_args(c, root, "ref_s0", std::uint64_t{0}));
  }
  const double secs = seconds_since(t0);
  int ref_diff = 0;
  std::string ref_first;
  std::size_t ref_files = 0;
  if (ex != nullptr) {
    const auto ra = csv_tree(ex->runs.front().dir), rb = csv_tree(root / "ref_s0");
    ref_files = rb.size();
    ref_first = compare_trees(ra, rb, ref_diff);
  } else {
    for (const char* c : {"pretrain", "finetune", "eval-matrix", "embed", "tsne", "swd", "report"}) {
      cli(ref_args(c, root, "ref_s0_again", std::uint64_t{0}));
    }
    fs::remove_all(root / "ref_s0_again" / "data");
    fs::create_directory_symlink(fs::absolute(root / "ref_s0" / "data"), root / "ref_s0_again" / "data");
    const auto ra = csv_tree(root / "ref_s0_again"), rb = csv_tree(root / "ref_s0");
    ref_files = rb.size();
    ref_first = compare_trees(ra, rb, ref_diff);
  }
  o.pass = tiny_diff == 0 && ref_diff == 0 && !ta.empty() && ref_files > 0 && secs < kPipelineSeconds;
  o.summary = fmt::format("tiny pipeline twice: {} of {} CSVs differ; reference seed-0 pipeline twice: {} of {} CSVs differ; "
                          "full reference pipeline {:.0f} s (limit {:g} s)",
                          tiny_diff, ta.size(), ref_diff, ref_files, secs, kPipelineSeconds);
  if (!tiny_first.empty()) o.notes.push_back("first differing tiny file: " + tiny_first);
  if (!ref_first.empty()) o.notes.push_back("first differing reference file: " + ref_first);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sarssl acceptance run"};
  fs::path work = fs::path(SARSSL_BINARY_DIR) / "acceptance_work";
  std::vector<int> only;
  bool keep_tiles = false;
  app.add_option("--work", work, "scratch directory for pipeline runs");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_flag("--keep-tiles", keep_tiles, "keep synthesized tile files after the run");
  CLI11_PARSE(app, argc, argv);
  auto selected = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  const std::map<int, std::string> names{{1, "gradient fidelity"},      {2, "DINO invariants"},
                                         {3, "schedule/center exactness"}, {4, "SWD correctness"},
                                         {5, "t-SNE correctness"},      {6, "split/leakage"},
                                         {7, "pre-training benefit"},   {8, "generalizability"},
                                         {9, "end-to-end determinism"}};
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    if (!selected(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("error: ") + e.what();
    }
    failures += o.pass ? 0 : 1;
    std::cout << fmt::format("criterion {} {} {}: {}\n", id, o.pass ? "PASS" : "FAIL", names.at(id), o.summary);
    for (const auto& n : o.notes) std::cout << "    " << n << '\n';
    std::cout.flush();
  };

  fs::create_directories(work);
  report(1, gradient_fidelity);
  report(2, dino_invariants);
  report(3, schedule_and_center);
  report(4, swd_correctness);
  report(5, tsne_correctness);
  report(6, split_and_tiles);

  std::optional<Experiment> ex;
  std::string ex_error;
  if (selected(7) || selected(8)) {
    try {
      ex = run_reference(work / "reference");
    } catch (const std::exception& e) {
      ex_error = e.what();
    }
  }
  auto with_experiment = [&](const std::function<Outcome(const Experiment&)>& fn) {
    return [&, fn] {
      if (!ex) throw std::runtime_error("reference experiment failed: " + ex_error);
      return fn(*ex);
    };
  };
  report(7, with_experiment(pretraining_benefit));
  report(8, with_experiment(generalizability));
  report(9, [&] { return determinism(work, ex ? &*ex : nullptr); });

  if (!keep_tiles) {
    for (const auto& dir : {work / "reference" / "base" / "data" / "tiles", work / "determinism" / "ref_s0" / "data" / "tiles",
                            work / "determinism" / "tiny_a" / "data" / "tiles", work / "determinism" / "tiny_b" / "data" / "tiles"}) {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  }
  std::cout << fmt::format("{} criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
