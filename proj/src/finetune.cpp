#include "sarssl/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sarssl/checkpoint.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/rng.hpp"

namespace sarssl::finetune {

std::string to_string(Mode m) { return m == Mode::full ? "full" : "frozen_backbone"; }

Mode parse_mode(const std::string& s) {
  if (s == "full") return Mode::full;
  if (s == "frozen_backbone" || s == "frozen") return Mode::frozen_backbone;
  throw ConfigError(fmt::format("unknown fine-tune mode '{}' (expected full or frozen_backbone)", s));
}

std::string to_string(DecoderInput d) {
  return d == DecoderInput::attention ? "attention" : "class_token";
}

DecoderInput parse_decoder_input(const std::string& s) {
  if (s == "attention") return DecoderInput::attention;
  if (s == "class_token") return DecoderInput::class_token;
  throw ConfigError(fmt::format("unknown decoder input '{}' (expected attention or class_token)", s));
}

void FinetuneConfig::validate() const {
  if (!(label_fraction > 0 && label_fraction <= 1)) {
    throw ConfigError(fmt::format("label_fraction {} outside (0, 1]", label_fraction));
  }
  if (!(learning_rate > 0) || !(backbone_learning_rate > 0)) {
    throw ConfigError("fine-tune learning rates must be positive");
  }
  if (epochs < 1 || batch_size < 1) throw ConfigError("fine-tune epochs and batch_size must be >= 1");
  if (max_val_tiles < 0) throw ConfigError("max_val_tiles must be >= 0");
}

std::vector<std::size_t> subsample_labels(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) {
    throw ParameterError(fmt::format("label fraction {} outside (0, 1]", fraction));
  }
  if (n == 0) throw DataError("subsample_labels: no entries to sample from");
  auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_rng(seed, {hash_string("subsample_labels")});
  // Partial Fisher-Yates: the first k slots end up a uniform sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

int feature_dim(const vit::VitConfig& cfg, DecoderInput input) {
  return input == DecoderInput::attention ? cfg.heads * cfg.num_patches() : cfg.embed_dim;
}

ParamStore<float> init_decoder(int features, float bias) {
  if (features < 1) throw ParameterError("decoder needs at least one feature");
  ParamStore<float> d;
  d.add("decoder.weight", {static_cast<std::size_t>(features)});
  d.add("decoder.bias", {1})[0] = bias;
  return d;
}

template <class T>
T decoder_forward(std::span<const T> features, const ParamStore<T>& decoder, bool clamp) {
  const auto w = decoder.at("decoder.weight").value();
  if (w.size() != features.size()) {
    throw DimensionError(
        fmt::format("decoder expects {} features, got {}", w.size(), features.size()));
  }
  T y = decoder.at("decoder.bias")[0];
  for (std::size_t i = 0; i < w.size(); ++i) y += w[i] * features[i];
  if (clamp) y = std::clamp(y, T(0), T(100));
  return y;
}

template <class T>
std::vector<T> tile_features(const ParamStore<T>& backbone, const vit::VitConfig& cfg,
                             const tiles::Tile& tile, DecoderInput input,
                             vit::BackboneCache<T>* cache) {
  if (tile.height != cfg.image_size || tile.width != cfg.image_size) {
    throw DimensionError(fmt::format("tile '{}' is {}x{}, model expects {}x{}", tile.id, tile.height,
                                     tile.width, cfg.image_size, cfg.image_size));
  }
  const auto image = vit::prepare_input<T>(tile, cfg);
  auto out = vit::backbone_forward<T>(backbone, cfg, image, cfg.image_size, cache);
  if (input == DecoderInput::class_token) return std::move(out.class_token);
  return vit::extract_attention_features(out);
}

namespace {

double label_of(const tiles::Tile& t) {
  if (!t.label) throw DataError(fmt::format("tile '{}' has no label", t.id));
  return *t.label;
}

ParamStore<float> copy_values(const ParamStore<float>& src) {
  ParamStore<float> out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto v = src.tensor(i).value();
    out.add(src.name(i), tensor::Tensor<float>(src.tensor(i).shape(), {v.begin(), v.end()}, true));
  }
  return out;
}

}  // namespace

FinetuneResult finetune_fit(const ParamStore<float>& backbone_in, const vit::VitConfig& vit_cfg,
                            std::span<const tiles::Tile> train, std::span<const tiles::Tile> val,
                            const FinetuneConfig& cfg) {
  vit_cfg.validate();
  cfg.validate();
  if (train.empty()) throw DataError("finetune: empty training set");
  if (val.empty()) throw DataError("finetune: empty validation set");

  std::vector<double> y_train(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) y_train[i] = label_of(train[i]);
  const std::size_t n_val = cfg.max_val_tiles > 0
                                ? std::min(val.size(), static_cast<std::size_t>(cfg.max_val_tiles))
                                : val.size();
  const auto val_used = val.first(n_val);
  const auto y_val = labels_of(val_used);

  const double mean_label =
      std::accumulate(y_train.begin(), y_train.end(), 0.0) / static_cast<double>(y_train.size());
  const int nf = feature_dim(vit_cfg, cfg.decoder_input);
  const bool full = cfg.mode == Mode::full;

  auto backbone = backbone_only(backbone_in);
  backbone.reset_optimizer();
  auto decoder = init_decoder(nf, static_cast<float>(mean_label));
  const tensor::AdamConfig dec_adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  const tensor::AdamConfig bb_adam{cfg.backbone_learning_rate, 0.9, 0.999, 1e-8};

  // Frozen backbone: features never change, compute them once.
  std::vector<std::vector<float>> frozen_train, frozen_val;
  if (!full) {
    for (const auto& t : train) frozen_train.push_back(tile_features<float>(backbone, vit_cfg, t, cfg.decoder_input));
    for (const auto& t : val_used) frozen_val.push_back(tile_features<float>(backbone, vit_cfg, t, cfg.decoder_input));
  }

  FinetuneResult result;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(cfg.seed, {hash_string("finetune"), static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    double sq_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const float scale = 2.0f / static_cast<float>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        vit::BackboneCache<float> cache;
        std::vector<float> f = full ? tile_features<float>(backbone, vit_cfg, train[idx], cfg.decoder_input, &cache)
                                    : frozen_train[idx];
        const float pred = decoder_forward<float>(f, decoder, false);
        const double err = static_cast<double>(pred) - y_train[idx];
        if (!std::isfinite(err)) {
          throw NumericError(fmt::format("non-finite fine-tune prediction at epoch {} tile '{}' (lr={})",
                                         epoch, train[idx].id, cfg.learning_rate));
        }
        sq_sum += err * err;
        const float dpred = scale * static_cast<float>(err);
        auto dw = decoder.at("decoder.weight").grad();
        const auto w = decoder.at("decoder.weight").value();
        for (std::size_t i = 0; i < f.size(); ++i) dw[i] += dpred * f[i];
        decoder.at("decoder.bias").grad()[0] += dpred;
        if (full) {
          std::vector<float> df(f.size());
          for (std::size_t i = 0; i < f.size(); ++i) df[i] = dpred * w[i];
          if (cfg.decoder_input == DecoderInput::class_token) {
            vit::backbone_backward<float>(backbone, vit_cfg, cache, df, {});
          } else {
            const std::vector<float> zero(static_cast<std::size_t>(vit_cfg.embed_dim), 0.0f);
            vit::backbone_backward<float>(backbone, vit_cfg, cache, zero, df);
          }
        }
      }
      tensor::adam_step(decoder, dec_adam);
      if (full) tensor::adam_step(backbone, bb_adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = sq_sum / static_cast<double>(train.size());
    if (!std::isfinite(rec.train_mse)) {
      throw NumericError(fmt::format("non-finite fine-tune loss at epoch {} (lr={}, backbone_lr={})",
                                     epoch, cfg.learning_rate, cfg.backbone_learning_rate));
    }
    std::vector<double> pv(n_val);
    for (std::size_t i = 0; i < n_val; ++i) {
      const auto f = full ? tile_features<float>(backbone, vit_cfg, val_used[i], cfg.decoder_input)
                          : frozen_val[i];
      pv[i] = decoder_forward<float>(f, decoder, true);
    }
    rec.val_rmse = rmse(pv, y_val);
    result.curve.push_back(rec);
    if (result.best_epoch < 0 || rec.val_rmse < result.best_val_rmse) {
      result.best_epoch = epoch;
      result.best_val_rmse = rec.val_rmse;
      result.backbone = copy_values(backbone);
      result.decoder = copy_values(decoder);
    }
  }
  return result;
}

std::vector<double> predict(const ParamStore<float>& backbone, const ParamStore<float>& decoder,
                            const vit::VitConfig& vit_cfg, DecoderInput input,
                            std::span<const tiles::Tile> tiles) {
  std::vector<double> out;
  out.reserve(tiles.size());
  for (const auto& t : tiles) {
    const auto f = tile_features<float>(backbone, vit_cfg, t, input);
    out.push_back(decoder_forward<float>(f, decoder, true));
  }
  return out;
}

std::vector<double> labels_of(std::span<const tiles::Tile> tiles) {
  std::vector<double> y;
  y.reserve(tiles.size());
  for (const auto& t : tiles) y.push_back(label_of(t));
  return y;
}

double rmse(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) {
    throw DimensionError(fmt::format("rmse: {} predictions vs {} labels", predictions.size(), labels.size()));
  }
  if (predictions.empty()) throw DataError("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double d = predictions[i] - labels[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(labels.size()));
}

std::string report_csv(std::span<const EpochRecord> curve, std::optional<double> test_rmse) {
  std::string csv = "epoch,train_mse,val_rmse\n";
  for (const auto& r : curve) csv += fmt::format("{},{:.9g},{:.9g}\n", r.epoch, r.train_mse, r.val_rmse);
  if (test_rmse) csv += fmt::format("test_rmse,{:.9g}\n", *test_rmse);
  return csv;
}

ParamStore<float> backbone_only(const ParamStore<float>& params) {
  auto out = select_params(params, "head.", false);
  return select_params(out, "decoder.", false);
}

ParamStore<float> combine(const ParamStore<float>& backbone, const ParamStore<float>& decoder) {
  auto out = select_params(backbone, "decoder.", false);
  merge_params(out, select_params(decoder, "decoder.", true));
  return out;
}

ParamStore<float> decoder_only(const ParamStore<float>& combined) {
  auto out = select_params(combined, "decoder.", true);
  if (!out.contains("decoder.weight") || !out.contains("decoder.bias")) {
    throw DataError("checkpoint has no decoder parameters");
  }
  return out;
}

template float decoder_forward<float>(std::span<const float>, const ParamStore<float>&, bool);
template double decoder_forward<double>(std::span<const double>, const ParamStore<double>&, bool);
template std::vector<float> tile_features<float>(const ParamStore<float>&, const vit::VitConfig&,
                                                 const tiles::Tile&, DecoderInput,
                                                 vit::BackboneCache<float>*);
template std::vector<double> tile_features<double>(const ParamStore<double>&, const vit::VitConfig&,
                                                   const tiles::Tile&, DecoderInput,
                                                   vit::BackboneCache<double>*);

}  // namespace sarssl::finetune
