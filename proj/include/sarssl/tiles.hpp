#pragma once

// Tile container, SAR channel composition, band-based splitting and the
// synthetic region generator that stands in for Sentinel-1/MODIS data.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sarssl::tiles {

// One multi-channel raster chip. `data` is channel-major, row-major within
// a channel. `label` is the mean vegetation percentage, when known.
struct Tile {
  std::string id;
  std::string region;
  std::uint32_t band_index = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;
  std::optional<float> label;

  void validate() const;
  [[nodiscard]] std::span<const float> channel(int c) const;
};

inline constexpr std::uint16_t kTileVersion = 1;

std::vector<std::uint8_t> encode_tile(const Tile& tile);
Tile decode_tile(std::span<const std::uint8_t> bytes);
void write_tile(const std::filesystem::path& path, const Tile& tile);
Tile read_tile(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string tile_id;
  std::string region;
  std::uint32_t band_index = 0;
  Split split = Split::train;
  std::string path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  void validate() const;
  [[nodiscard]] std::vector<const ManifestEntry*> select(const std::string& region,
                                                         Split split) const;
};

// CSV with header `tile_id,region,band_index,split,path`.
std::string manifest_to_csv(const DatasetManifest& manifest);
DatasetManifest manifest_from_csv(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Realized split for one cycle offset: bands (sorted ascending) take
// cycle [train, train, train, val, test] starting at `offset`.
std::map<std::uint32_t, Split> splits_for_offset(std::span<const std::uint32_t> bands, int offset);

// Band-level split for one region. Bands are the unit of assignment; the
// cycle offset is drawn by seed among offsets whose realized counts are
// within one band of the 60/20/20 targets.
std::map<std::uint32_t, Split> assign_splits(std::span<const std::uint32_t> bands,
                                             std::uint64_t seed);

// Offsets whose realized counts stay within one band of every target.
std::vector<int> admissible_offsets(std::size_t n_bands);

// Fills in `split` for every entry, region by region.
void assign_manifest_splits(DatasetManifest& manifest, std::uint64_t seed);

// ---------------------------------------------------------------------------

enum class Season { spring = 0, summer = 1, autumn = 2, winter = 3 };
inline constexpr std::array<Season, 4> kSeasons = {Season::spring, Season::summer, Season::autumn,
                                                   Season::winter};
std::string to_string(Season s);

// Seasonal rasters of raw observables sharing one H×W grid. Amplitudes are
// in dB; coherence is dimensionless.
struct SeasonalStack {
  int height = 0;
  int width = 0;
  std::array<std::optional<std::vector<float>>, 4> vv_db;
  std::array<std::optional<std::vector<float>>, 4> vh_db;
  std::array<std::optional<std::vector<float>>, 4> coh_12d;
  std::array<std::optional<std::vector<float>>, 4> coh_24d;
};

struct ComposedRaster {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;
  // Number of coherence samples clamped into [0, 1].
  std::size_t clamped = 0;
};

// Per season: [VV, VH, VV−VH] in dB → 12 channels.
ComposedRaster compose_s1grd_channels(const SeasonalStack& stack);
// Per season: [coh_12d, coh_24d] clamped to [0, 1] → 8 channels.
ComposedRaster compose_gssic_channels(const SeasonalStack& stack);

inline constexpr int kAmplitudeChannels = 12;
inline constexpr int kCoherenceChannels = 8;

// Arithmetic mean of a vegetation raster in [0, 100].
double compute_label(std::span<const float> vegetation);

// ---------------------------------------------------------------------------

enum class Modality { amplitude, coherence };
std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

// Generative description of one synthetic region.
struct RegionRecipe {
  std::string name;
  // Tile-mean vegetation: mean + trend·(band position − 0.5) + N(0, std).
  double veg_mean = 50.0;
  double veg_std = 15.0;
  double veg_trend = 0.0;
  // Amplitude of the smooth within-tile vegetation field.
  double field_amplitude = 10.0;
  // Amplitude recipe, dB: base + gain·(v/100) + season offset + noise.
  double vv_base = -11.0;
  double vv_gain = 4.0;
  double vh_base = -19.0;
  double vh_gain = 7.0;
  double amp_noise = 0.5;
  // Coherence recipe: base − gain·(v/100)² + season offset + noise; 24-day
  // coherence is scaled by `coh_decay`.
  double coh_base = 0.75;
  double coh_gain = 0.5;
  double coh_decay = 0.8;
  double coh_noise = 0.03;
  // Per-season additive offsets (amplitude dB / coherence units).
  std::array<double, 4> season_amp = {0.0, 0.6, 0.2, -0.5};
  std::array<double, 4> season_coh = {0.0, -0.05, 0.02, 0.06};
};

// The four named reference recipes "regA".."regD"; regD is the held-out
// region in the reference experiments.
std::vector<RegionRecipe> reference_recipes();
const RegionRecipe& reference_recipe(const std::string& name);

struct SynthOptions {
  int n_tiles = 100;
  int size = 32;
  Modality modality = Modality::amplitude;
  // Tiles per latitudinal row; band_index = tile index / tiles_per_band.
  int tiles_per_band = 10;
  std::uint64_t seed = 0;
};

struct SynthTile {
  Tile tile;
  std::vector<float> vegetation;
};

std::vector<SynthTile> synth_region_detailed(const RegionRecipe& recipe, const SynthOptions& opt);
std::vector<Tile> synth_region(const RegionRecipe& recipe, const SynthOptions& opt);

}  // namespace sarssl::tiles
