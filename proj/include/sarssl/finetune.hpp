#pragma once

// Supervised fine-tuning of a linear decoder (optionally together with the
// backbone) that predicts mean vegetation percentage per tile.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sarssl/tensor.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"

namespace sarssl::finetune {

using tensor::ParamStore;

enum class Mode { frozen_backbone, full };
// Decoder input: final-block class-token attention maps, or the final
// class-token embedding.
enum class DecoderInput { attention, class_token };

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);
std::string to_string(DecoderInput d);
DecoderInput parse_decoder_input(const std::string& s);

struct FinetuneConfig {
  double label_fraction = 0.01;
  Mode mode = Mode::full;
  DecoderInput decoder_input = DecoderInput::attention;
  double learning_rate = 1e-2;           // decoder
  double backbone_learning_rate = 1e-4;  // full mode only
  int epochs = 30;
  int batch_size = 8;
  // Validation tiles scored per epoch; 0 uses the whole split.
  int max_val_tiles = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> regions;

  void validate() const;
};

// Indices of a uniform random subset of size ceil(fraction·n), drawn
// without replacement and returned in ascending order.
std::vector<std::size_t> subsample_labels(std::size_t n, double fraction, std::uint64_t seed);

int feature_dim(const vit::VitConfig& cfg, DecoderInput input);

// decoder.weight = 0, decoder.bias = `bias`.
ParamStore<float> init_decoder(int features, float bias);

// w·f + b, clamped to [0, 100] when `clamp` is set.
template <class T>
T decoder_forward(std::span<const T> features, const ParamStore<T>& decoder, bool clamp);

// Decoder features of one tile through `backbone` at full tile size.
template <class T>
std::vector<T> tile_features(const ParamStore<T>& backbone, const vit::VitConfig& cfg,
                             const tiles::Tile& tile, DecoderInput input,
                             vit::BackboneCache<T>* cache = nullptr);

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_rmse = 0.0;
};

struct FinetuneResult {
  ParamStore<float> backbone;
  ParamStore<float> decoder;
  std::vector<EpochRecord> curve;
  int best_epoch = -1;
  double best_val_rmse = 0.0;
};

// Minimizes MSE of unclamped decoder outputs against labels; returns the
// parameters of the epoch with the lowest validation RMSE.
FinetuneResult finetune_fit(const ParamStore<float>& backbone, const vit::VitConfig& vit_cfg,
                            std::span<const tiles::Tile> train, std::span<const tiles::Tile> val,
                            const FinetuneConfig& cfg);

// Clamped predictions.
std::vector<double> predict(const ParamStore<float>& backbone, const ParamStore<float>& decoder,
                            const vit::VitConfig& vit_cfg, DecoderInput input,
                            std::span<const tiles::Tile> tiles);

std::vector<double> labels_of(std::span<const tiles::Tile> tiles);

// sqrt(mean((p − y)²))
double rmse(std::span<const double> predictions, std::span<const double> labels);

// `epoch,train_mse,val_rmse` rows, then `test_rmse,<value>` when given.
std::string report_csv(std::span<const EpochRecord> curve, std::optional<double> test_rmse);

// Backbone parameters without the DINO head.
ParamStore<float> backbone_only(const ParamStore<float>& params);
// Backbone plus decoder in one store (decoder entries appended last).
ParamStore<float> combine(const ParamStore<float>& backbone, const ParamStore<float>& decoder);
ParamStore<float> decoder_only(const ParamStore<float>& combined);

}  // namespace sarssl::finetune
