#include "sarssl/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "sarssl/byteio.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/model_check.hpp"

namespace sarssl::config {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Binding {
  std::string section;
  std::string key;
  Setter set;
  Getter get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& s);

template <>
std::string parse_value<std::string>(const std::string& s) {
  return s;
}

template <>
double parse_value<double>(const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw ConfigError(fmt::format("'{}' is not a number", s));
  return v;
}

template <class I>
I parse_integer(const std::string& s) {
  I v{};
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError(fmt::format("'{}' is not a valid integer", s));
  }
  return v;
}

template <>
int parse_value<int>(const std::string& s) {
  return parse_integer<int>(s);
}
template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& s) {
  return parse_integer<std::uint64_t>(s);
}
template <>
bool parse_value<bool>(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(fmt::format("'{}' is not a boolean (true/false)", s));
}
template <>
std::vector<std::string> parse_value<std::vector<std::string>>(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_value(const std::string& v) { return v; }
std::string format_value(double v) { return fmt::format("{}", v); }
std::string format_value(int v) { return fmt::format("{}", v); }
std::string format_value(std::uint64_t v) { return fmt::format("{}", v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::vector<std::string>& v) { return fmt::format("{}", fmt::join(v, ",")); }

// Binds a member reached through `ref`.
template <class Ref>
Binding field(std::string section, std::string key, Ref ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  return Binding{std::move(section), std::move(key),
                 [ref](RunConfig& c, const std::string& s) { ref(c) = parse_value<T>(s); },
                 [ref](const RunConfig& c) { return format_value(ref(const_cast<RunConfig&>(c))); }};
}

void apply_preset(RunConfig& c, const std::string& name) {
  dino::DinoConfig p;
  if (name == "gssic") {
    p = dino::DinoConfig::gssic();
  } else if (name == "s1grd") {
    p = dino::DinoConfig::s1grd();
  } else {
    throw ConfigError(fmt::format("unknown dino preset '{}' (expected gssic or s1grd)", name));
  }
  c.dino_preset = name;
  c.dino.learning_rate = p.learning_rate;
  c.dino.teacher_temp = p.teacher_temp;
  c.dino.student_temp = p.student_temp;
  c.dino.warmup_teacher_temp = p.warmup_teacher_temp;
  c.dino.warmup_teacher_temp_epochs = p.warmup_teacher_temp_epochs;
  c.dino.center_momentum = p.center_momentum;
}

void add_vit_fields(std::vector<Binding>& b, const std::string& sec,
                    vit::VitConfig& (*sel)(RunConfig&), bool full) {
  auto f = [&](const char* key, auto member) {
    b.push_back(field(sec, key, [sel, member](RunConfig& c) -> auto& { return sel(c).*member; }));
  };
  f("image_size", &vit::VitConfig::image_size);
  f("patch_size", &vit::VitConfig::patch_size);
  f("channels", &vit::VitConfig::channels);
  f("embed_dim", &vit::VitConfig::embed_dim);
  f("depth", &vit::VitConfig::depth);
  f("heads", &vit::VitConfig::heads);
  f("head_output_dim", &vit::VitConfig::head_output_dim);
  f("head_hidden_dim", &vit::VitConfig::head_hidden_dim);
  f("head_bottleneck_dim", &vit::VitConfig::head_bottleneck_dim);
  f("init_std", &vit::VitConfig::init_std);
  if (full) {
    f("head_last_init_std", &vit::VitConfig::head_last_init_std);
    f("layer_norm_eps", &vit::VitConfig::layer_norm_eps);
    f("input_offset", &vit::VitConfig::input_offset);
    f("input_scale", &vit::VitConfig::input_scale);
  }
}

const std::vector<Binding>& registry() {
  static const std::vector<Binding> bindings = [] {
    std::vector<Binding> b;
    b.push_back(field("run", "seed", [](RunConfig& c) -> auto& { return c.run.seed; }));
    b.push_back(field("run", "run_id", [](RunConfig& c) -> auto& { return c.run.run_id; }));
    b.push_back(field("run", "out", [](RunConfig& c) -> auto& { return c.run.out; }));

    b.push_back(field("data", "seed", [](RunConfig& c) -> auto& { return c.data.seed; }));
    b.push_back(Binding{"data", "modality",
                        [](RunConfig& c, const std::string& s) { c.data.modality = tiles::parse_modality(s); },
                        [](const RunConfig& c) { return tiles::to_string(c.data.modality); }});
    b.push_back(field("data", "regions", [](RunConfig& c) -> auto& { return c.data.regions; }));
    b.push_back(field("data", "held_out", [](RunConfig& c) -> auto& { return c.data.held_out; }));
    b.push_back(field("data", "tiles_per_region", [](RunConfig& c) -> auto& { return c.data.tiles_per_region; }));
    b.push_back(field("data", "tile_size", [](RunConfig& c) -> auto& { return c.data.tile_size; }));
    b.push_back(field("data", "tiles_per_band", [](RunConfig& c) -> auto& { return c.data.tiles_per_band; }));

    add_vit_fields(b, "vit", [](RunConfig& c) -> vit::VitConfig& { return c.vit; }, true);
    b.push_back(field("vit", "normalize", [](RunConfig& c) -> auto& { return c.vit_normalize; }));

    b.push_back(Binding{"dino", "preset", [](RunConfig& c, const std::string& s) { apply_preset(c, s); },
                        [](const RunConfig& c) { return c.dino_preset; }});
    auto d = [&](const char* key, auto member) {
      b.push_back(field("dino", key, [member](RunConfig& c) -> auto& { return c.dino.*member; }));
    };
    d("learning_rate", &dino::DinoConfig::learning_rate);
    d("teacher_temp", &dino::DinoConfig::teacher_temp);
    d("student_temp", &dino::DinoConfig::student_temp);
    d("warmup_teacher_temp", &dino::DinoConfig::warmup_teacher_temp);
    d("warmup_teacher_temp_epochs", &dino::DinoConfig::warmup_teacher_temp_epochs);
    d("center_momentum", &dino::DinoConfig::center_momentum);
    d("ema_momentum", &dino::DinoConfig::ema_momentum);
    d("n_global_crops", &dino::DinoConfig::n_global_crops);
    d("n_local_crops", &dino::DinoConfig::n_local_crops);
    d("local_crop_size", &dino::DinoConfig::local_crop_size);
    d("global_crop_size", &dino::DinoConfig::global_crop_size);
    d("flip_prob", &dino::DinoConfig::flip_prob);
    d("epochs", &dino::DinoConfig::epochs);
    d("batch_size", &dino::DinoConfig::batch_size);
    b.push_back(field("dino", "global_scale_min", [](RunConfig& c) -> auto& { return c.dino.global_crop_scale.min; }));
    b.push_back(field("dino", "global_scale_max", [](RunConfig& c) -> auto& { return c.dino.global_crop_scale.max; }));
    b.push_back(field("dino", "local_scale_min", [](RunConfig& c) -> auto& { return c.dino.local_crop_scale.min; }));
    b.push_back(field("dino", "local_scale_max", [](RunConfig& c) -> auto& { return c.dino.local_crop_scale.max; }));
    b.push_back(field("dino", "max_tiles", [](RunConfig& c) -> auto& { return c.dino_max_tiles; }));

    auto ft = [&](const char* key, auto member) {
      b.push_back(field("finetune", key, [member](RunConfig& c) -> auto& { return c.finetune.*member; }));
    };
    ft("label_fraction", &finetune::FinetuneConfig::label_fraction);
    b.push_back(Binding{"finetune", "mode",
                        [](RunConfig& c, const std::string& s) { c.finetune.mode = finetune::parse_mode(s); },
                        [](const RunConfig& c) { return finetune::to_string(c.finetune.mode); }});
    b.push_back(Binding{"finetune", "decoder_input",
                        [](RunConfig& c, const std::string& s) {
                          c.finetune.decoder_input = finetune::parse_decoder_input(s);
                        },
                        [](const RunConfig& c) { return finetune::to_string(c.finetune.decoder_input); }});
    ft("learning_rate", &finetune::FinetuneConfig::learning_rate);
    ft("backbone_learning_rate", &finetune::FinetuneConfig::backbone_learning_rate);
    ft("epochs", &finetune::FinetuneConfig::epochs);
    ft("batch_size", &finetune::FinetuneConfig::batch_size);
    ft("max_val_tiles", &finetune::FinetuneConfig::max_val_tiles);
    ft("regions", &finetune::FinetuneConfig::regions);
    b.push_back(field("finetune", "init", [](RunConfig& c) -> auto& { return c.finetune_init; }));
    b.push_back(field("finetune", "combined", [](RunConfig& c) -> auto& { return c.finetune_combined; }));

    auto an = [&](const char* key, auto member) {
      b.push_back(field("analysis", key, [member](RunConfig& c) -> auto& { return c.analysis.*member; }));
    };
    an("init", &AnalysisSection::init);
    an("embed_cap", &AnalysisSection::embed_cap);
    an("tsne_perplexity", &AnalysisSection::tsne_perplexity);
    an("tsne_iterations", &AnalysisSection::tsne_iterations);
    an("tsne_max_per_region", &AnalysisSection::tsne_max_per_region);
    an("swd_projections", &AnalysisSection::swd_projections);
    an("swd_seeds", &AnalysisSection::swd_seeds);
    an("swd_order", &AnalysisSection::swd_order);
    an("swd_max_per_region", &AnalysisSection::swd_max_per_region);

    add_vit_fields(b, "gradcheck", [](RunConfig& c) -> vit::VitConfig& { return c.gradcheck.vit; }, false);
    auto gc = [&](const char* key, auto member) {
      b.push_back(field("gradcheck", key, [member](RunConfig& c) -> auto& { return c.gradcheck.*member; }));
    };
    gc("student_temp", &GradcheckSection::student_temp);
    gc("teacher_temp", &GradcheckSection::teacher_temp);
    gc("input_std", &GradcheckSection::input_std);
    gc("step", &GradcheckSection::step);
    gc("threshold", &GradcheckSection::threshold);
    gc("denominator_floor", &GradcheckSection::denominator_floor);
    b.push_back(Binding{"gradcheck", "max_coordinates",
                        [](RunConfig& c, const std::string& s) {
                          c.gradcheck.max_coordinates = parse_value<std::uint64_t>(s);
                        },
                        [](const RunConfig& c) { return format_value(static_cast<std::uint64_t>(c.gradcheck.max_coordinates)); }});
    return b;
  }();
  return bindings;
}

const Binding& find_binding(const std::string& section, const std::string& key) {
  for (const auto& b : registry()) {
    if (b.section == section && b.key == key) return b;
  }
  throw ConfigError(fmt::format("unknown key '{}' in section [{}]", key, section));
}

struct Assignment {
  std::string section, key, value, origin;
};

// 1-based line of `key` inside `[section]`, 0 when not found.
int line_of(const std::string& text, const std::string& section, const std::string& key) {
  std::istringstream in(text);
  std::string current;
  int n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      current = trim(t.substr(1, t.size() - 2));
    } else if (current == section) {
      const auto eq = t.find('=');
      if (eq != std::string::npos && trim(t.substr(0, eq)) == key) return n;
    }
  }
  return 0;
}

}  // namespace

RunConfig::RunConfig() {
  const auto mc = tiny_model_check_config();
  gradcheck.vit = mc.vit;
  gradcheck.student_temp = mc.student_temp;
  gradcheck.teacher_temp = mc.teacher_temp;
  gradcheck.input_std = mc.input_std;
}

void RunConfig::validate() const {
  vit.validate();
  dino.validate();
  finetune.validate();
  gradcheck.vit.validate();
  if (data.regions.empty()) throw ConfigError("data.regions is empty");
  for (const auto& r : data.regions) (void)tiles::reference_recipe(r);
  if (!data.held_out.empty() &&
      std::find(data.regions.begin(), data.regions.end(), data.held_out) == data.regions.end()) {
    throw ConfigError(fmt::format("data.held_out '{}' is not in data.regions", data.held_out));
  }
  if (pretrain_regions().empty()) throw ConfigError("no regions left for pre-training");
  if (data.tiles_per_region < 1 || data.tile_size < 1 || data.tiles_per_band < 1) {
    throw ConfigError("data sizes must be positive");
  }
  const int channels = data.modality == tiles::Modality::amplitude ? 12 : 8;
  if (vit.channels != channels) {
    throw ConfigError(fmt::format("vit.channels = {} but {} tiles have {} channels", vit.channels,
                                  tiles::to_string(data.modality), channels));
  }
  if (vit.image_size != data.tile_size) {
    throw ConfigError(fmt::format("vit.image_size {} must equal data.tile_size {}", vit.image_size, data.tile_size));
  }
  if (dino.global_crop_size != vit.image_size) {
    throw ConfigError("dino global crops must match vit.image_size");
  }
  if (vit_normalize != "standardize" && vit_normalize != "none") {
    throw ConfigError(fmt::format("vit.normalize '{}' (expected standardize or none)", vit_normalize));
  }
  if (dino_max_tiles < 0) throw ConfigError("dino.max_tiles must be >= 0");
  (void)finetune_inits();
  for (const auto& r : finetune.regions) {
    if (std::find(data.regions.begin(), data.regions.end(), r) == data.regions.end()) {
      throw ConfigError(fmt::format("finetune region '{}' is not in data.regions", r));
    }
  }
  if (analysis.init != "pretrained" && analysis.init != "scratch") {
    throw ConfigError(fmt::format("analysis.init '{}' (expected pretrained or scratch)", analysis.init));
  }
  if (analysis.embed_cap < 0 || analysis.tsne_iterations < 0 || analysis.tsne_max_per_region < 1 ||
      analysis.swd_projections < 1 || analysis.swd_seeds < 1 || analysis.swd_max_per_region < 1 ||
      !(analysis.swd_order >= 1) || !(analysis.tsne_perplexity > 0)) {
    throw ConfigError("analysis settings out of range");
  }
  if (!(gradcheck.step > 0) || !(gradcheck.threshold > 0) || !(gradcheck.denominator_floor > 0)) {
    throw ConfigError("gradcheck step, threshold and floor must be positive");
  }
}

std::vector<std::string> RunConfig::pretrain_regions() const {
  std::vector<std::string> out;
  for (const auto& r : data.regions) {
    if (r != data.held_out) out.push_back(r);
  }
  return out;
}

std::vector<std::string> RunConfig::finetune_inits() const {
  if (finetune_init == "both") return {"pretrained", "scratch"};
  if (finetune_init == "pretrained" || finetune_init == "scratch") return {finetune_init};
  throw ConfigError(fmt::format("finetune.init '{}' (expected pretrained, scratch or both)", finetune_init));
}

RunConfig parse_config(const std::string& text, const std::string& source,
                       const std::vector<std::string>& overrides) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}:{}: {}", source, e.line(), e.message()));
  }

  std::vector<Assignment> assignments;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError(fmt::format("{}: key '{}' is outside any [section]", source, section));
    }
    for (const auto& [key, value] : body) {
      const auto origin = fmt::format("{}:{}", source, line_of(text, section, key));
      try {
        (void)find_binding(section, key);
      } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", origin, e.what()));
      }
      assignments.push_back({section, key, trim(value.data()), origin});
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError(fmt::format("override '{}' must look like section.key=value", o));
    }
    const auto section = trim(o.substr(0, dot));
    const auto key = trim(o.substr(dot + 1, eq - dot - 1));
    (void)find_binding(section, key);
    assignments.push_back({section, key, trim(o.substr(eq + 1)), "override"});
  }

  RunConfig cfg;
  // Presets first so that explicit keys refine them regardless of order.
  std::stable_partition(assignments.begin(), assignments.end(), [](const Assignment& a) {
    return a.section == "dino" && a.key == "preset";
  });
  for (const auto& a : assignments) {
    try {
      find_binding(a.section, a.key).set(cfg, a.value);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}: [{}] {}: {}", a.origin, a.section, a.key, e.what()));
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  const auto bytes = byteio::read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), path.string(), overrides);
}

std::string resolved_ini(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& b : registry()) {
    if (b.section != section) {
      if (!section.empty()) out += '\n';
      section = b.section;
      out += fmt::format("[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", b.key, b.get(cfg));
  }
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& b : registry()) keys.push_back(b.section + "." + b.key);
  return keys;
}

}  // namespace sarssl::config
