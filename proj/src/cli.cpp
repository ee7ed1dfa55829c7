#include "sarssl/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "sarssl/analysis.hpp"
#include "sarssl/byteio.hpp"
#include "sarssl/checkpoint.hpp"
#include "sarssl/config.hpp"
#include "sarssl/dino.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/finetune.hpp"
#include "sarssl/model_check.hpp"
#include "sarssl/rng.hpp"
#include "sarssl/tiles.hpp"

namespace sarssl::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kCommands{"synth-data", "split",       "pretrain", "finetune",
                                         "embed",      "tsne",        "swd",      "eval-matrix",
                                         "report",     "gradcheck"};

struct Context {
  config::RunConfig cfg;
  fs::path dir;
  std::ostream& out;

  [[nodiscard]] fs::path data() const { return dir / "data"; }
  [[nodiscard]] fs::path manifest() const { return data() / "manifest.csv"; }
  [[nodiscard]] fs::path checkpoints() const { return dir / "checkpoints"; }
  [[nodiscard]] fs::path embeddings() const { return dir / "embeddings"; }
  [[nodiscard]] fs::path reports() const { return dir / "reports"; }
};

std::string read_text(const fs::path& path) {
  const auto bytes = byteio::read_file(path);
  return {bytes.begin(), bytes.end()};
}

void require_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw IoError(fmt::format("missing input file '{}' (run `{}` first)", path.string(), producer));
  }
}

tiles::DatasetManifest load_manifest(const Context& ctx) {
  require_file(ctx.manifest(), "synth-data");
  return tiles::read_manifest(ctx.manifest());
}

std::vector<tiles::Tile> load_tiles(const Context& ctx, const tiles::DatasetManifest& m,
                                    const std::string& region, tiles::Split split) {
  std::vector<tiles::Tile> out;
  for (const auto* e : m.select(region, split)) {
    const auto path = ctx.data() / e->path;
    require_file(path, "synth-data");
    out.push_back(tiles::read_tile(path));
  }
  return out;
}

std::vector<tiles::Tile> pretrain_tiles(const Context& ctx, const tiles::DatasetManifest& m) {
  const auto regions = ctx.cfg.pretrain_regions();
  const int max_tiles = ctx.cfg.dino_max_tiles;
  const std::size_t per_region =
      max_tiles > 0 ? (static_cast<std::size_t>(max_tiles) + regions.size() - 1) / regions.size() : 0;
  std::vector<tiles::Tile> out;
  for (const auto& r : regions) {
    auto t = load_tiles(ctx, m, r, tiles::Split::train);
    if (per_region > 0 && t.size() > per_region) t.resize(per_region);
    for (auto& tile : t) out.push_back(std::move(tile));
  }
  if (max_tiles > 0 && out.size() > static_cast<std::size_t>(max_tiles)) out.resize(static_cast<std::size_t>(max_tiles));
  return out;
}

// Model config with input normalization fitted on the pre-training tiles.
// The fitted values are stored once and reloaded, so every command uses
// the same float-rounded numbers.
vit::VitConfig model_config(const Context& ctx, const tiles::DatasetManifest& m) {
  auto v = ctx.cfg.vit;
  if (ctx.cfg.vit_normalize == "none") return v;
  const auto path = ctx.checkpoints() / "input_norm.dslp";
  if (!fs::exists(path)) {
    const auto tiles = pretrain_tiles(ctx, m);
    if (tiles.empty()) throw DataError("no pre-training tiles to fit input normalization on");
    auto fitted = v;
    vit::fit_input_normalization(fitted, tiles);
    tensor::ParamStore<float> p;
    p.add("input.channel_offset", {fitted.channel_offset.size()});
    p.add("input.channel_scale", {fitted.channel_scale.size()});
    auto& off = p.at("input.channel_offset");
    auto& scale = p.at("input.channel_scale");
    for (std::size_t i = 0; i < fitted.channel_offset.size(); ++i) {
      off[i] = static_cast<float>(fitted.channel_offset[i]);
      scale[i] = static_cast<float>(fitted.channel_scale[i]);
    }
    fs::create_directories(ctx.checkpoints());
    save_checkpoint(path, p);
  }
  const auto p = load_checkpoint(path);
  const auto off = p.at("input.channel_offset").value();
  const auto scale = p.at("input.channel_scale").value();
  v.channel_offset.assign(off.begin(), off.end());
  v.channel_scale.assign(scale.begin(), scale.end());
  v.validate();
  return v;
}

std::vector<std::string> finetune_regions(const config::RunConfig& cfg) {
  return cfg.finetune.regions.empty() ? cfg.data.regions : cfg.finetune.regions;
}

fs::path finetune_checkpoint(const Context& ctx, const std::string& init, const std::string& name) {
  return ctx.checkpoints() / fmt::format("finetune_{}_{}.dslp", init, name);
}

// ---------------------------------------------------------------------------

void cmd_synth(Context& ctx) {
  const auto& d = ctx.cfg.data;
  tiles::DatasetManifest m;
  for (const auto& region : d.regions) {
    const auto tiles = tiles::synth_region(
        tiles::reference_recipe(region),
        {d.tiles_per_region, d.tile_size, d.modality, d.tiles_per_band, d.seed});
    for (const auto& t : tiles) {
      const auto rel = fs::path("tiles") / region / (t.id + ".sart");
      fs::create_directories(ctx.data() / rel.parent_path());
      tiles::write_tile(ctx.data() / rel, t);
      m.entries.push_back({t.id, t.region, t.band_index, tiles::Split::train, rel.generic_string()});
    }
  }
  tiles::assign_manifest_splits(m, d.seed);
  tiles::write_manifest(ctx.manifest(), m);
  ctx.out << fmt::format("synth-data: {} tiles in {} regions -> {}\n", m.entries.size(),
                         d.regions.size(), ctx.manifest().string());
}

void cmd_split(Context& ctx) {
  auto m = load_manifest(ctx);
  tiles::assign_manifest_splits(m, ctx.cfg.data.seed);
  tiles::write_manifest(ctx.manifest(), m);
  std::map<std::string, int> counts;
  for (const auto& e : m.entries) ++counts[tiles::to_string(e.split)];
  ctx.out << fmt::format("split: train {} / val {} / test {} tiles -> {}\n", counts["train"],
                         counts["val"], counts["test"], ctx.manifest().string());
}

void cmd_pretrain(Context& ctx) {
  const auto m = load_manifest(ctx);
  const auto v = model_config(ctx, m);
  const auto tiles = pretrain_tiles(ctx, m);
  auto dcfg = ctx.cfg.dino;
  dcfg.seed = ctx.cfg.run.seed;
  const auto result = dino::pretrain(tiles, v, dcfg);
  fs::create_directories(ctx.checkpoints());
  fs::create_directories(ctx.reports());
  save_checkpoint(ctx.checkpoints() / "student.dslp", result.student);
  save_checkpoint(ctx.checkpoints() / "teacher.dslp", result.teacher);
  save_checkpoint(ctx.checkpoints() / "center.dslp", dino::center_to_params(result.center));
  byteio::write_text(ctx.reports() / "loss_history.csv", dino::loss_history_csv(result.history));
  const double last = result.history.empty() ? 0.0 : result.history.back().loss;
  ctx.out << fmt::format("pretrain: {} tiles, {} epochs, last batch loss {:.6g} -> {}\n", tiles.size(),
                         dcfg.epochs, last, ctx.checkpoints().string());
}

struct FinetuneData {
  std::vector<tiles::Tile> train, val, test;
};

FinetuneData finetune_data(const Context& ctx, const tiles::DatasetManifest& m, const std::string& region) {
  FinetuneData d;
  const auto all_train = load_tiles(ctx, m, region, tiles::Split::train);
  if (all_train.empty()) throw DataError(fmt::format("region '{}' has no training tiles", region));
  const auto idx = finetune::subsample_labels(all_train.size(), ctx.cfg.finetune.label_fraction,
                                              derive_seed(ctx.cfg.run.seed, {hash_string(region)}));
  for (auto i : idx) d.train.push_back(all_train[i]);
  d.val = load_tiles(ctx, m, region, tiles::Split::val);
  d.test = load_tiles(ctx, m, region, tiles::Split::test);
  return d;
}

void cmd_finetune(Context& ctx) {
  const auto m = load_manifest(ctx);
  const auto v = model_config(ctx, m);
  fs::create_directories(ctx.checkpoints());
  fs::create_directories(ctx.reports());
  for (const auto& init : ctx.cfg.finetune_inits()) {
    tensor::ParamStore<float> start;
    if (init == "pretrained") {
      require_file(ctx.checkpoints() / "student.dslp", "pretrain");
      start = load_checkpoint(ctx.checkpoints() / "student.dslp");
    } else {
      start = vit::init_student(v, derive_seed(ctx.cfg.run.seed, {hash_string("scratch")}));
    }
    std::vector<std::pair<std::string, FinetuneData>> jobs;
    for (const auto& r : finetune_regions(ctx.cfg)) jobs.emplace_back(r, finetune_data(ctx, m, r));
    if (ctx.cfg.finetune_combined) {
      FinetuneData all;
      for (const auto& [r, d] : jobs) {
        all.train.insert(all.train.end(), d.train.begin(), d.train.end());
        all.val.insert(all.val.end(), d.val.begin(), d.val.end());
        all.test.insert(all.test.end(), d.test.begin(), d.test.end());
      }
      jobs.emplace_back("combined", std::move(all));
    }
    for (const auto& [name, d] : jobs) {
      auto fcfg = ctx.cfg.finetune;
      fcfg.seed = derive_seed(ctx.cfg.run.seed, {hash_string(name)});
      const auto res = finetune::finetune_fit(start, v, d.train, d.val, fcfg);
      std::optional<double> test_rmse;
      if (!d.test.empty()) {
        const auto pred = finetune::predict(res.backbone, res.decoder, v, fcfg.decoder_input, d.test);
        test_rmse = finetune::rmse(pred, finetune::labels_of(d.test));
      }
      save_checkpoint(finetune_checkpoint(ctx, init, name), finetune::combine(res.backbone, res.decoder));
      byteio::write_text(ctx.reports() / fmt::format("finetune_{}_{}.csv", init, name),
                         finetune::report_csv(res.curve, test_rmse));
      ctx.out << fmt::format("finetune: {} {} ({} labels) best epoch {} val RMSE {:.4f} test RMSE {}\n",
                             init, name, d.train.size(), res.best_epoch, res.best_val_rmse,
                             test_rmse ? fmt::format("{:.4f}", *test_rmse) : "n/a");
    }
  }
}

std::vector<analysis::TestSet> test_sets(const Context& ctx, const tiles::DatasetManifest& m) {
  std::vector<analysis::TestSet> tests;
  for (const auto& r : ctx.cfg.data.regions) tests.push_back({r, load_tiles(ctx, m, r, tiles::Split::test)});
  return tests;
}

void cmd_eval_matrix(Context& ctx) {
  const auto m = load_manifest(ctx);
  const auto v = model_config(ctx, m);
  const auto tests = test_sets(ctx, m);
  fs::create_directories(ctx.reports());
  for (const auto& init : ctx.cfg.finetune_inits()) {
    std::vector<analysis::FinetunedModel> models;
    auto names = finetune_regions(ctx.cfg);
    if (fs::exists(finetune_checkpoint(ctx, init, "combined"))) names.push_back("combined");
    for (const auto& name : names) {
      analysis::FinetunedModel model{name, std::nullopt};
      const auto path = finetune_checkpoint(ctx, init, name);
      if (fs::exists(path)) model.params = load_checkpoint(path);
      models.push_back(std::move(model));
    }
    const auto matrix = analysis::eval_matrix(models, tests, v, ctx.cfg.finetune.decoder_input);
    const auto path = ctx.reports() / fmt::format("eval_matrix_{}.csv", init);
    byteio::write_text(path, analysis::eval_matrix_csv(matrix));
    ctx.out << fmt::format("eval-matrix: {} models x {} regions -> {}\n", matrix.rows.size(),
                           matrix.cols.size(), path.string());
  }
}

fs::path embeddings_path(const Context& ctx) { return ctx.embeddings() / "test_embeddings.csv"; }

void cmd_embed(Context& ctx) {
  const auto m = load_manifest(ctx);
  const auto v = model_config(ctx, m);
  require_file(ctx.checkpoints() / "student.dslp", "pretrain");
  const auto student = load_checkpoint(ctx.checkpoints() / "student.dslp");
  std::vector<tiles::Tile> all;
  for (const auto& r : ctx.cfg.data.regions) {
    auto t = load_tiles(ctx, m, r, tiles::Split::test);
    all.insert(all.end(), t.begin(), t.end());
  }
  const auto set = analysis::extract_embeddings(all, student, v,
                                                static_cast<std::size_t>(ctx.cfg.analysis.embed_cap));
  fs::create_directories(ctx.embeddings());
  byteio::write_text(embeddings_path(ctx), analysis::embeddings_to_csv(set));
  ctx.out << fmt::format("embed: {} tiles, dim {} -> {}\n", set.rows.size(), set.dim,
                         embeddings_path(ctx).string());
}

analysis::EmbeddingSet load_embeddings(const Context& ctx) {
  require_file(embeddings_path(ctx), "embed");
  return analysis::embeddings_from_csv(read_text(embeddings_path(ctx)));
}

analysis::EmbeddingSet cap_per_region(const analysis::EmbeddingSet& set, int cap) {
  analysis::EmbeddingSet out;
  out.dim = set.dim;
  std::map<std::string, int> taken;
  for (const auto& r : set.rows) {
    if (taken[r.region]++ < cap) out.rows.push_back(r);
  }
  return out;
}

analysis::TsneOptions tsne_options(const Context& ctx) {
  analysis::TsneOptions o;
  o.perplexity = ctx.cfg.analysis.tsne_perplexity;
  o.iterations = ctx.cfg.analysis.tsne_iterations;
  o.seed = ctx.cfg.run.seed;
  return o;
}

void cmd_tsne(Context& ctx) {
  const auto set = cap_per_region(load_embeddings(ctx), ctx.cfg.analysis.tsne_max_per_region);
  const auto layout = analysis::tsne_fit(set, tsne_options(ctx));
  std::string csv = "tile_id,region,label,x,y\n";
  for (std::size_t i = 0; i < set.rows.size(); ++i) {
    const auto& r = set.rows[i];
    csv += fmt::format("{},{},{},{:.9g},{:.9g}\n", r.tile_id, r.region,
                       r.label ? fmt::format("{:.9g}", *r.label) : "", layout.coords[2 * i],
                       layout.coords[2 * i + 1]);
  }
  fs::create_directories(ctx.reports());
  byteio::write_text(ctx.reports() / "tsne_layout.csv", csv);
  byteio::write_text(ctx.reports() / "tsne_summary.csv",
                     fmt::format("points,perplexity,iterations,initial_kl,final_kl\n{},{:g},{},{:.9g},{:.9g}\n",
                                 layout.n, layout.perplexity, layout.iterations, layout.initial_kl,
                                 layout.final_kl));
  ctx.out << fmt::format("tsne: {} points, KL {:.4f} -> {:.4f}\n", layout.n, layout.initial_kl, layout.final_kl);
}

void cmd_swd(Context& ctx) {
  const auto& a = ctx.cfg.analysis;
  const auto set = cap_per_region(load_embeddings(ctx), a.swd_max_per_region);
  const auto regions = set.regions();
  analysis::SwdOptions o{a.swd_projections, a.swd_seeds, a.swd_order, ctx.cfg.run.seed};
  std::vector<analysis::SwdEntry> entries;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      entries.push_back({regions[i], regions[j], analysis::swd(set.slice(regions[i]), set.slice(regions[j]), o)});
    }
  }
  for (const auto& r : regions) {
    const auto s = set.slice(r);
    analysis::EmbeddingSet h1, h2;
    h1.dim = h2.dim = s.dim;
    for (std::size_t i = 0; i < s.rows.size(); ++i) (i % 2 == 0 ? h1 : h2).rows.push_back(s.rows[i]);
    if (h1.rows.empty() || h2.rows.empty()) continue;
    entries.push_back({r + "/half1", r + "/half2", analysis::swd(h1, h2, o)});
  }
  fs::create_directories(ctx.reports());
  byteio::write_text(ctx.reports() / "swd.csv", analysis::swd_csv(entries));
  ctx.out << fmt::format("swd: {} pairs -> {}\n", entries.size(), (ctx.reports() / "swd.csv").string());
}

analysis::EmbeddingSet embed_with_errors(const tensor::ParamStore<float>& model, const vit::VitConfig& v,
                                         finetune::DecoderInput input, std::span<const tiles::Tile> tiles,
                                         bool with_errors) {
  const auto backbone = finetune::backbone_only(model);
  auto set = analysis::extract_embeddings(tiles, backbone, v, 0);
  if (with_errors) {
    const auto pred = finetune::predict(backbone, finetune::decoder_only(model), v, input, tiles);
    for (std::size_t i = 0; i < tiles.size(); ++i) set.rows[i].abs_error = std::abs(pred[i] - *tiles[i].label);
  }
  return set;
}

void cmd_report(Context& ctx) {
  const auto& a = ctx.cfg.analysis;
  const auto m = load_manifest(ctx);
  const auto v = model_config(ctx, m);
  analysis::ReportInputs inputs;

  // t-SNE of the pre-trained embeddings, colored by log vegetation.
  const auto layout_path = ctx.reports() / "tsne_layout.csv";
  require_file(layout_path, "tsne");
  {
    analysis::Scatter s;
    s.name = "tsne_label";
    s.color_by = analysis::ColorBy::log_label;
    std::istringstream in(read_text(layout_path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
      if (f.size() != 5) throw DataError(fmt::format("{}: malformed row '{}'", layout_path.string(), line));
      s.layout.coords.push_back(std::stod(f[3]));
      s.layout.coords.push_back(std::stod(f[4]));
      s.values.push_back(f[2].empty() ? 0.0 : std::log1p(std::max(0.0, std::stod(f[2]))));
    }
    s.layout.n = static_cast<int>(s.values.size());
    inputs.scatters.push_back(std::move(s));
  }
  if (fs::exists(ctx.reports() / "swd.csv")) inputs.swd = analysis::swd_from_csv(read_text(ctx.reports() / "swd.csv"));
  for (const auto& init : ctx.cfg.finetune_inits()) {
    const auto path = ctx.reports() / fmt::format("eval_matrix_{}.csv", init);
    if (fs::exists(path)) inputs.matrices.push_back({init, analysis::eval_matrix_from_csv(read_text(path))});
  }

  // Distance-to-centroid vs error on the held-out region, per fine-tuned model.
  const auto& held = ctx.cfg.data.held_out;
  std::string corr_csv = "finetune_region,infer_region,rho,n,degenerate_ties\n";
  if (!held.empty()) {
    auto held_test = load_tiles(ctx, m, held, tiles::Split::test);
    if (a.embed_cap > 0 && held_test.size() > static_cast<std::size_t>(a.embed_cap)) held_test.resize(static_cast<std::size_t>(a.embed_cap));
    bool scatter_done = false;
    for (const auto& r : ctx.cfg.pretrain_regions()) {
      const auto path = finetune_checkpoint(ctx, a.init, r);
      if (!fs::exists(path) || held_test.size() < 10) continue;
      const auto model = load_checkpoint(path);
      auto ft_tiles = load_tiles(ctx, m, r, tiles::Split::train);
      if (a.embed_cap > 0 && ft_tiles.size() > static_cast<std::size_t>(a.embed_cap)) ft_tiles.resize(static_cast<std::size_t>(a.embed_cap));
      const auto infer = embed_with_errors(model, v, ctx.cfg.finetune.decoder_input, held_test, true);
      const auto ftset = embed_with_errors(model, v, ctx.cfg.finetune.decoder_input, ft_tiles, false);
      const auto c = analysis::distance_error_correlation(infer, ftset);
      corr_csv += fmt::format("{},{},{:.9g},{},{}\n", r, held, c.rho, c.n, c.degenerate_ties ? 1 : 0);
      const auto capped = cap_per_region(infer, a.tsne_max_per_region);
      if (!scatter_done && static_cast<double>(capped.rows.size()) > 3.0 * a.tsne_perplexity) {
        analysis::Scatter s;
        s.name = fmt::format("tsne_error_{}_on_{}", r, held);
        s.color_by = analysis::ColorBy::abs_error;
        s.layout = analysis::tsne_fit(capped, tsne_options(ctx));
        s.values = analysis::scatter_values(capped, analysis::ColorBy::abs_error);
        inputs.scatters.push_back(std::move(s));
        scatter_done = true;
      }
    }
  }
  const auto dir = ctx.reports() / "figures";
  const auto files = analysis::emit_report(inputs, dir);
  byteio::write_text(ctx.reports() / fmt::format("distance_error_{}.csv", a.init), corr_csv);
  ctx.out << fmt::format("report: {} files -> {}\n", files.size(), dir.string());
}

int cmd_gradcheck(Context& ctx) {
  const auto& g = ctx.cfg.gradcheck;
  ModelCheckConfig mc;
  mc.vit = g.vit;
  mc.student_temp = g.student_temp;
  mc.teacher_temp = g.teacher_temp;
  mc.input_std = g.input_std;
  mc.seed = ctx.cfg.run.seed;
  GradCheckOptions o;
  o.step = g.step;
  o.max_coordinates = g.max_coordinates;
  o.seed = ctx.cfg.run.seed;
  o.denominator_floor = g.denominator_floor;
  const auto r = check_model_gradients(mc, o);
  ctx.out << fmt::format("gradcheck: max_rel_err={:.6e} coordinates={} worst={}[{}] analytic={:.9g} numeric={:.9g}\n",
                         r.max_relative_error, r.coordinates_checked, r.worst_parameter, r.worst_index,
                         r.worst_analytic, r.worst_numeric);
  if (!(r.max_relative_error < g.threshold)) {
    throw VerificationError(fmt::format("max relative error {:.6e} is not below {:g}", r.max_relative_error, g.threshold));
  }
  return 0;
}

std::string error_line(const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  return j.dump();
}

}  // namespace

std::string usage() {
  return "usage: sarssl <command> [--config FILE] [--seed N] [--set section.key=value]... "
         "[--out DIR] [--run-id ID]\n"
         "commands: synth-data split pretrain finetune embed tsne swd eval-matrix report gradcheck\n"
         "output: <out>/<run_id>/{data,checkpoints,embeddings,reports,config.resolved}; "
         "<out> defaults to $SARSSL_OUT, else ./runs\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || args[0] == "-h" || args[0] == "--help") {
    (args.empty() ? err : out) << usage();
    return args.empty() ? 2 : 0;
  }
  const std::string command = args[0];
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
    err << fmt::format("unknown command '{}'\n", command) << usage();
    return 2;
  }

  CLI::App app{"sarssl " + command};
  std::string config_path, out_root, run_id;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI configuration file");
  app.add_option("--seed", seed, "overrides run.seed");
  app.add_option("--set", overrides, "section.key=value override (repeatable)");
  app.add_option("--out", out_root, "output root (overrides run.out)");
  app.add_option("--run-id", run_id, "run identifier (overrides run.run_id)");
  std::vector<std::string> rest(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << '\n' << usage();
    return 2;
  }

  try {
    if (seed) overrides.push_back(fmt::format("run.seed={}", *seed));
    if (!run_id.empty()) overrides.push_back("run.run_id=" + run_id);
    if (!out_root.empty()) overrides.push_back("run.out=" + out_root);
    auto cfg = config_path.empty() ? config::parse_config("", "<defaults>", overrides)
                                   : config::load_config(config_path, overrides);
    fs::path root = cfg.run.out;
    if (root.empty()) {
      const char* env = std::getenv("SARSSL_OUT");
      root = env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
    }
    Context ctx{cfg, root / cfg.run.run_id, out};
    fs::create_directories(ctx.dir);
    byteio::write_text(ctx.dir / "config.resolved", config::resolved_ini(cfg));

    if (command == "synth-data") cmd_synth(ctx);
    else if (command == "split") cmd_split(ctx);
    else if (command == "pretrain") cmd_pretrain(ctx);
    else if (command == "finetune") cmd_finetune(ctx);
    else if (command == "embed") cmd_embed(ctx);
    else if (command == "tsne") cmd_tsne(ctx);
    else if (command == "swd") cmd_swd(ctx);
    else if (command == "eval-matrix") cmd_eval_matrix(ctx);
    else if (command == "report") cmd_report(ctx);
    else return cmd_gradcheck(ctx);
    return 0;
  } catch (const Error& e) {
    err << error_line(e.kind(), e.what()) << '\n';
  } catch (const fs::filesystem_error& e) {
    err << error_line("io", e.what()) << '\n';
  } catch (const std::exception& e) {
    err << error_line("internal", e.what()) << '\n';
  }
  return 1;
}

}  // namespace sarssl::cli
