#include "sarssl/tiles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "sarssl/byteio.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/rng.hpp"

namespace sarssl::tiles {

void Tile::validate() const {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw DataError(fmt::format("tile '{}' has non-positive geometry", id));
  }
  if (data.size() != static_cast<std::size_t>(channels) * height * width) {
    throw DataError(fmt::format("tile '{}' holds {} values, expected {}×{}×{}", id, data.size(),
                                channels, height, width));
  }
  if (label && !(*label >= 0.0f && *label <= 100.0f)) {
    throw DataError(fmt::format("tile '{}' label {} outside [0, 100]", id, *label));
  }
}

std::span<const float> Tile::channel(int c) const {
  const auto plane = static_cast<std::size_t>(height) * width;
  return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * plane, plane);
}

std::vector<std::uint8_t> encode_tile(const Tile& tile) {
  tile.validate();
  if (tile.channels > 0xffff || tile.height > 0xffff || tile.width > 0xffff) {
    throw DataError(fmt::format("tile '{}' geometry exceeds 16-bit limits", tile.id));
  }
  byteio::Writer w;
  w.bytes("SART");
  w.u16(kTileVersion);
  w.str16(tile.id);
  w.str16(tile.region);
  w.u32(tile.band_index);
  w.u16(static_cast<std::uint16_t>(tile.channels));
  w.u16(static_cast<std::uint16_t>(tile.height));
  w.u16(static_cast<std::uint16_t>(tile.width));
  w.f32(tile.label ? *tile.label : std::numeric_limits<float>::quiet_NaN());
  for (float v : tile.data) w.f32(v);
  return std::move(w.buffer());
}

Tile decode_tile(std::span<const std::uint8_t> bytes) {
  byteio::Reader r(bytes, "tile");
  if (r.bytes(4) != "SART") throw DataError("tile magic mismatch");
  const auto version = r.u16();
  if (version != kTileVersion) throw DataError(fmt::format("unsupported tile version {}", version));
  Tile t;
  t.id = r.str16();
  t.region = r.str16();
  t.band_index = r.u32();
  t.channels = r.u16();
  t.height = r.u16();
  t.width = r.u16();
  const float label = r.f32();
  if (!std::isnan(label)) t.label = label;
  t.data.resize(static_cast<std::size_t>(t.channels) * t.height * t.width);
  for (auto& v : t.data) v = r.f32();
  if (!r.at_end()) throw DataError(fmt::format("trailing bytes after tile '{}'", t.id));
  t.validate();
  return t;
}

void write_tile(const std::filesystem::path& path, const Tile& tile) {
  byteio::write_file(path, encode_tile(tile));
}

Tile read_tile(const std::filesystem::path& path) { return decode_tile(byteio::read_file(path)); }

// ---------------------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError(fmt::format("unknown split '{}'", s));
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  std::map<std::pair<std::string, std::uint32_t>, Split> band_split;
  for (const auto& e : entries) {
    if (!ids.insert(e.tile_id).second) throw DataError(fmt::format("duplicate tile id '{}'", e.tile_id));
    auto [it, inserted] = band_split.emplace(std::pair{e.region, e.band_index}, e.split);
    if (!inserted && it->second != e.split) {
      throw DataError(fmt::format("band {} of region '{}' spans two splits", e.band_index, e.region));
    }
  }
}

std::vector<const ManifestEntry*> DatasetManifest::select(const std::string& region,
                                                          Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.region == region && e.split == split) out.push_back(&e);
  }
  return out;
}

std::string manifest_to_csv(const DatasetManifest& manifest) {
  std::string csv = "tile_id,region,band_index,split,path\n";
  for (const auto& e : manifest.entries) {
    csv += fmt::format("{},{},{},{},{}\n", e.tile_id, e.region, e.band_index, to_string(e.split),
                       e.path);
  }
  return csv;
}

DatasetManifest manifest_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "tile_id,region,band_index,split,path") {
    throw DataError("manifest header must be 'tile_id,region,band_index,split,path'");
  }
  DatasetManifest m;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) {
      throw DataError(fmt::format("manifest line {}: expected 5 fields, got {}", lineno, fields.size()));
    }
    ManifestEntry e;
    e.tile_id = fields[0];
    e.region = fields[1];
    try {
      e.band_index = static_cast<std::uint32_t>(std::stoul(fields[2]));
    } catch (const std::exception&) {
      throw DataError(fmt::format("manifest line {}: bad band index '{}'", lineno, fields[2]));
    }
    e.split = parse_split(fields[3]);
    e.path = fields[4];
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  byteio::write_text(path, manifest_to_csv(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  auto bytes = byteio::read_file(path);
  return manifest_from_csv(std::string(bytes.begin(), bytes.end()));
}

namespace {

constexpr std::array<Split, 5> kCycle = {Split::train, Split::train, Split::train, Split::val,
                                         Split::test};

std::vector<std::uint32_t> unique_bands(std::span<const std::uint32_t> bands) {
  std::vector<std::uint32_t> out(bands.begin(), bands.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::array<std::size_t, 3> cycle_counts(std::size_t n, int offset) {
  std::array<std::size_t, 3> counts{};
  for (std::size_t i = 0; i < n; ++i) {
    counts[static_cast<std::size_t>(kCycle[(i + static_cast<std::size_t>(offset)) % 5])]++;
  }
  return counts;
}

}  // namespace

std::vector<int> admissible_offsets(std::size_t n_bands) {
  constexpr std::array<double, 3> fractions = {0.6, 0.2, 0.2};
  std::vector<int> out;
  for (int offset = 0; offset < 5; ++offset) {
    auto counts = cycle_counts(n_bands, offset);
    bool ok = true;
    for (std::size_t s = 0; s < 3; ++s) {
      const double target = fractions[s] * static_cast<double>(n_bands);
      ok = ok && std::abs(static_cast<double>(counts[s]) - target) <= 1.0 + 1e-9;
    }
    if (ok) out.push_back(offset);
  }
  return out;
}

std::map<std::uint32_t, Split> splits_for_offset(std::span<const std::uint32_t> bands, int offset) {
  auto sorted = unique_bands(bands);
  std::map<std::uint32_t, Split> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    out[sorted[i]] = kCycle[(i + static_cast<std::size_t>(offset)) % 5];
  }
  return out;
}

std::map<std::uint32_t, Split> assign_splits(std::span<const std::uint32_t> bands,
                                             std::uint64_t seed) {
  auto sorted = unique_bands(bands);
  if (sorted.size() < 5) {
    throw ConfigError(
        fmt::format("band split needs at least 5 bands per region, got {}", sorted.size()));
  }
  auto offsets = admissible_offsets(sorted.size());
  if (offsets.empty()) throw ConfigError("no admissible band-cycle offset");
  auto rng = make_rng(seed, {0x73706c6974});
  std::uniform_int_distribution<std::size_t> pick(0, offsets.size() - 1);
  return splits_for_offset(sorted, offsets[pick(rng)]);
}

void assign_manifest_splits(DatasetManifest& manifest, std::uint64_t seed) {
  std::map<std::string, std::vector<std::uint32_t>> bands;
  for (const auto& e : manifest.entries) bands[e.region].push_back(e.band_index);
  for (const auto& [region, list] : bands) {
    auto split = assign_splits(list, derive_seed(seed, {hash_string(region)}));
    for (auto& e : manifest.entries) {
      if (e.region == region) e.split = split.at(e.band_index);
    }
  }
  manifest.validate();
}

// ---------------------------------------------------------------------------

std::string to_string(Season s) {
  constexpr std::array<const char*, 4> names = {"spring", "summer", "autumn", "winter"};
  return names[static_cast<std::size_t>(s)];
}

namespace {

const std::vector<float>& require(const std::optional<std::vector<float>>& raster, Season s,
                                  const char* what, std::size_t plane) {
  if (!raster) throw DataError(fmt::format("missing {} raster for season {}", what, to_string(s)));
  if (raster->size() != plane) {
    throw DataError(fmt::format("{} raster for season {} has {} values, expected {}", what,
                                to_string(s), raster->size(), plane));
  }
  return *raster;
}

}  // namespace

ComposedRaster compose_s1grd_channels(const SeasonalStack& stack) {
  const auto plane = static_cast<std::size_t>(stack.height) * stack.width;
  ComposedRaster out{kAmplitudeChannels, stack.height, stack.width, {}, 0};
  out.data.reserve(plane * kAmplitudeChannels);
  for (Season s : kSeasons) {
    const auto i = static_cast<std::size_t>(s);
    const auto& vv = require(stack.vv_db[i], s, "VV", plane);
    const auto& vh = require(stack.vh_db[i], s, "VH", plane);
    out.data.insert(out.data.end(), vv.begin(), vv.end());
    out.data.insert(out.data.end(), vh.begin(), vh.end());
    for (std::size_t p = 0; p < plane; ++p) out.data.push_back(vv[p] - vh[p]);
  }
  return out;
}

ComposedRaster compose_gssic_channels(const SeasonalStack& stack) {
  const auto plane = static_cast<std::size_t>(stack.height) * stack.width;
  ComposedRaster out{kCoherenceChannels, stack.height, stack.width, {}, 0};
  out.data.reserve(plane * kCoherenceChannels);
  for (Season s : kSeasons) {
    const auto i = static_cast<std::size_t>(s);
    for (const auto* raster : {&stack.coh_12d[i], &stack.coh_24d[i]}) {
      const auto& r = require(*raster, s, raster == &stack.coh_12d[i] ? "coh_12d" : "coh_24d", plane);
      for (float v : r) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        if (c != v) ++out.clamped;
        out.data.push_back(c);
      }
    }
  }
  return out;
}

double compute_label(std::span<const float> vegetation) {
  if (vegetation.empty()) throw DataError("vegetation raster is empty");
  double sum = 0.0;
  for (float v : vegetation) sum += v;
  return sum / static_cast<double>(vegetation.size());
}

// ---------------------------------------------------------------------------

std::string to_string(Modality m) { return m == Modality::amplitude ? "amplitude" : "coherence"; }

Modality parse_modality(const std::string& s) {
  if (s == "amplitude") return Modality::amplitude;
  if (s == "coherence") return Modality::coherence;
  throw ConfigError(fmt::format("unknown modality '{}'", s));
}

std::vector<RegionRecipe> reference_recipes() {
  std::vector<RegionRecipe> out(4);
  auto& a = out[0];
  a.name = "regA";
  a.veg_mean = 45;
  a.veg_std = 14;
  a.veg_trend = 20;
  a.vv_base = -10.5;
  a.vh_base = -18.5;
  a.coh_base = 0.72;

  auto& b = out[1];
  b.name = "regB";
  b.veg_mean = 24;
  b.veg_std = 9;
  b.veg_trend = 10;
  b.vv_base = -8.6;
  b.vv_gain = 3.0;
  b.vh_base = -16.6;
  b.vh_gain = 6.0;
  b.coh_base = 0.62;
  b.season_amp = {0.3, 0.9, 0.1, -0.9};

  auto& c = out[2];
  c.name = "regC";
  c.veg_mean = 12;
  c.veg_std = 7;
  c.veg_trend = 8;
  c.vv_base = -12.6;
  c.vv_gain = 5.0;
  c.vh_base = -20.8;
  c.vh_gain = 8.0;
  c.coh_base = 0.82;
  c.season_amp = {-0.2, 0.4, 0.4, -0.2};

  auto& d = out[3];
  d.name = "regD";
  d.veg_mean = 58;
  d.veg_std = 22;
  d.veg_trend = 25;
  d.vv_base = -10.9;
  d.vv_gain = 4.4;
  d.vh_base = -18.9;
  d.vh_gain = 7.4;
  d.coh_base = 0.76;
  d.season_amp = {0.2, 0.5, 0.3, 0.1};
  return out;
}

const RegionRecipe& reference_recipe(const std::string& name) {
  static const std::vector<RegionRecipe> recipes = reference_recipes();
  for (const auto& r : recipes) {
    if (r.name == name) return r;
  }
  throw ConfigError(fmt::format("unknown region recipe '{}'", name));
}

std::vector<SynthTile> synth_region_detailed(const RegionRecipe& recipe, const SynthOptions& opt) {
  if (opt.n_tiles < 1) throw ConfigError("synth_region needs at least one tile");
  if (opt.size < 1 || opt.tiles_per_band < 1) throw ConfigError("synth_region geometry must be positive");
  const int n_bands = (opt.n_tiles + opt.tiles_per_band - 1) / opt.tiles_per_band;
  const int S = opt.size;
  const auto plane = static_cast<std::size_t>(S) * S;
  const std::uint64_t region_key = hash_string(recipe.name);

  std::vector<SynthTile> out;
  out.reserve(static_cast<std::size_t>(opt.n_tiles));
  for (int i = 0; i < opt.n_tiles; ++i) {
    auto rng = make_rng(opt.seed, {region_key, static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const int band = i / opt.tiles_per_band;
    const double lat = n_bands > 1 ? static_cast<double>(band) / (n_bands - 1) - 0.5 : 0.0;
    const double mu = recipe.veg_mean + recipe.veg_trend * lat + recipe.veg_std * normal(rng);

    // Smooth field: three low-frequency plane waves.
    struct Wave {
      double fx, fy, phase, weight;
    };
    std::array<Wave, 3> waves{};
    for (auto& w : waves) {
      w.fx = (uniform(rng) * 2.0 - 1.0) * 1.5;
      w.fy = (uniform(rng) * 2.0 - 1.0) * 1.5;
      w.phase = uniform(rng) * 2.0 * std::numbers::pi;
      w.weight = 0.5 + uniform(rng);
    }
    const double wsum = waves[0].weight + waves[1].weight + waves[2].weight;
    std::vector<float> veg(plane);
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        double f = 0.0;
        for (const auto& w : waves) {
          f += w.weight * std::cos(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) / S + w.phase);
        }
        const double value = mu + recipe.field_amplitude * f / wsum;
        veg[static_cast<std::size_t>(y) * S + x] = static_cast<float>(std::clamp(value, 0.0, 100.0));
      }
    }

    SeasonalStack stack;
    stack.height = S;
    stack.width = S;
    for (Season s : kSeasons) {
      const auto si = static_cast<std::size_t>(s);
      if (opt.modality == Modality::amplitude) {
        std::vector<float> vv(plane), vh(plane);
        for (std::size_t p = 0; p < plane; ++p) {
          const double frac = veg[p] / 100.0;
          vv[p] = static_cast<float>(recipe.vv_base + recipe.vv_gain * frac + recipe.season_amp[si] +
                                     recipe.amp_noise * normal(rng));
          vh[p] = static_cast<float>(recipe.vh_base + recipe.vh_gain * frac +
                                     1.5 * recipe.season_amp[si] + recipe.amp_noise * normal(rng));
        }
        stack.vv_db[si] = std::move(vv);
        stack.vh_db[si] = std::move(vh);
      } else {
        std::vector<float> c12(plane), c24(plane);
        for (std::size_t p = 0; p < plane; ++p) {
          const double frac = veg[p] / 100.0;
          const double base = recipe.coh_base - recipe.coh_gain * frac * frac + recipe.season_coh[si];
          c12[p] = static_cast<float>(base + recipe.coh_noise * normal(rng));
          c24[p] = static_cast<float>(base * recipe.coh_decay + recipe.coh_noise * normal(rng));
        }
        stack.coh_12d[si] = std::move(c12);
        stack.coh_24d[si] = std::move(c24);
      }
    }
    auto composed = opt.modality == Modality::amplitude ? compose_s1grd_channels(stack)
                                                        : compose_gssic_channels(stack);

    SynthTile st;
    st.tile.id = fmt::format("{}_{:05d}", recipe.name, i);
    st.tile.region = recipe.name;
    st.tile.band_index = static_cast<std::uint32_t>(band);
    st.tile.channels = composed.channels;
    st.tile.height = S;
    st.tile.width = S;
    st.tile.data = std::move(composed.data);
    st.tile.label = static_cast<float>(compute_label(veg));
    st.vegetation = std::move(veg);
    out.push_back(std::move(st));
  }
  return out;
}

std::vector<Tile> synth_region(const RegionRecipe& recipe, const SynthOptions& opt) {
  auto detailed = synth_region_detailed(recipe, opt);
  std::vector<Tile> out;
  out.reserve(detailed.size());
  for (auto& d : detailed) out.push_back(std::move(d.tile));
  return out;
}

}  // namespace sarssl::tiles
