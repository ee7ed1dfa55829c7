#pragma once

// INI run configuration: one section per module, `key = value` entries.
// Unknown sections and keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sarssl/dino.hpp"
#include "sarssl/finetune.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"

namespace sarssl::config {

struct RunSection {
  std::uint64_t seed = 0;
  std::string run_id = "reference";
  std::string out;  // empty: $SARSSL_OUT, else "runs"
};

struct DataSection {
  std::uint64_t seed = 0;
  tiles::Modality modality = tiles::Modality::amplitude;
  std::vector<std::string> regions{"regA", "regB", "regC", "regD"};
  std::string held_out = "regD";
  int tiles_per_region = 400;
  int tile_size = 32;
  int tiles_per_band = 10;
};

struct AnalysisSection {
  std::string init = "pretrained";  // which fine-tuned models feed eval/report
  int embed_cap = 2000;
  double tsne_perplexity = 30.0;
  int tsne_iterations = 1000;
  int tsne_max_per_region = 100;
  int swd_projections = 10000;
  int swd_seeds = 10;
  double swd_order = 2.0;
  int swd_max_per_region = 200;
};

struct GradcheckSection {
  vit::VitConfig vit;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double input_std = 1.0;
  double step = 1e-3;
  std::size_t max_coordinates = 0;
  double threshold = 1e-4;
  double denominator_floor = 1e-8;
};

struct RunConfig {
  RunSection run;
  DataSection data;
  vit::VitConfig vit;
  std::string vit_normalize = "standardize";  // or "none"
  std::string dino_preset = "gssic";
  dino::DinoConfig dino;
  int dino_max_tiles = 0;
  finetune::FinetuneConfig finetune;
  std::string finetune_init = "both";  // pretrained, scratch, both
  bool finetune_combined = false;
  AnalysisSection analysis;
  GradcheckSection gradcheck;

  RunConfig();
  // Cross-field checks; raises ConfigError.
  void validate() const;
  [[nodiscard]] std::vector<std::string> pretrain_regions() const;
  [[nodiscard]] std::vector<std::string> finetune_inits() const;
};

// Parses INI text, then applies `section.key=value` overrides in order.
// `source` names the text in error messages.
RunConfig parse_config(const std::string& text, const std::string& source,
                       const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});

// Every key with its effective value, in registry order; parses back to
// an identical configuration.
std::string resolved_ini(const RunConfig& cfg);

// `section.key` names accepted by the parser.
std::vector<std::string> known_keys();

}  // namespace sarssl::config
