#include "sarssl/dino.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sarssl/errors.hpp"

namespace sarssl::dino {

DinoConfig DinoConfig::gssic() {
  DinoConfig c;
  c.learning_rate = 1e-5;
  c.teacher_temp = 0.04;
  c.student_temp = 0.1;
  c.warmup_teacher_temp = 0.04;
  c.warmup_teacher_temp_epochs = 10;
  c.center_momentum = 0.90;
  return c;
}

DinoConfig DinoConfig::s1grd() {
  DinoConfig c;
  c.learning_rate = 1e-6;
  c.teacher_temp = 0.001;
  c.student_temp = 0.03;
  c.warmup_teacher_temp = 0.01;
  c.warmup_teacher_temp_epochs = 5;
  c.center_momentum = 0.99;
  return c;
}

void DinoConfig::validate() const {
  if (!(teacher_temp > 0) || !(student_temp > 0) || !(warmup_teacher_temp > 0)) {
    throw ConfigError("dino: temperatures must be positive");
  }
  if (warmup_teacher_temp_epochs < 0) throw ConfigError("dino: warm-up epochs must be >= 0");
  if (!(center_momentum >= 0 && center_momentum < 1) || !(ema_momentum >= 0 && ema_momentum < 1)) {
    throw ConfigError("dino: momenta must lie in [0, 1)");
  }
  if (!(learning_rate > 0)) throw ConfigError("dino: learning rate must be positive");
  for (const auto& r : {global_crop_scale, local_crop_scale}) {
    if (!(r.min > 0 && r.min <= r.max && r.max <= 1)) {
      throw ConfigError(fmt::format("dino: crop scale range [{}, {}] not inside (0, 1]", r.min, r.max));
    }
  }
  if (n_global_crops < 1 || n_local_crops < 0) throw ConfigError("dino: need at least one global crop");
  if (global_crop_size < local_crop_size || local_crop_size < 1) {
    throw ConfigError("dino: global crop size must be >= local crop size >= 1");
  }
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("dino: flip_prob must lie in [0, 1]");
  if (epochs < 0 || batch_size < 1) throw ConfigError("dino: epochs >= 0 and batch_size >= 1 required");
}

std::vector<float> horizontal_flip(std::span<const float> data, int channels, int height, int width) {
  if (data.size() != static_cast<std::size_t>(channels) * height * width) {
    throw DimensionError("horizontal_flip: data size does not match geometry");
  }
  std::vector<float> out(data.size());
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < height; ++y) {
      const auto row = (static_cast<std::size_t>(c) * height + y) * width;
      for (int x = 0; x < width; ++x) out[row + x] = data[row + (width - 1 - x)];
    }
  }
  return out;
}

std::vector<float> resize_crop(std::span<const float> data, int channels, int side, int x0, int y0,
                               int crop, int out, bool flip) {
  if (crop < 1 || out < 1 || x0 < 0 || y0 < 0 || x0 + crop > side || y0 + crop > side) {
    throw ParameterError(fmt::format("crop {}+{} / {}+{} does not fit a {}-pixel tile", x0, crop, y0,
                                     crop, side));
  }
  const double ratio = static_cast<double>(crop) / out;
  struct Axis {
    int lo, hi;
    float w;
  };
  std::vector<Axis> axis(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double s = std::clamp((o + 0.5) * ratio - 0.5, 0.0, static_cast<double>(crop - 1));
    const int lo = static_cast<int>(std::floor(s));
    axis[static_cast<std::size_t>(o)] = {lo, std::min(lo + 1, crop - 1), static_cast<float>(s - lo)};
  }
  std::vector<float> result(static_cast<std::size_t>(channels) * out * out);
  const auto plane = static_cast<std::size_t>(side) * side;
  for (int c = 0; c < channels; ++c) {
    const float* src = data.data() + c * plane;
    for (int oy = 0; oy < out; ++oy) {
      const auto& ay = axis[static_cast<std::size_t>(oy)];
      const float* r0 = src + static_cast<std::size_t>(y0 + ay.lo) * side + x0;
      const float* r1 = src + static_cast<std::size_t>(y0 + ay.hi) * side + x0;
      for (int ox = 0; ox < out; ++ox) {
        const auto& ax = axis[static_cast<std::size_t>(ox)];
        float top = r0[ax.lo];
        float bottom = r1[ax.lo];
        if (ax.w != 0.0f) {
          top += ax.w * (r0[ax.hi] - r0[ax.lo]);
          bottom += ax.w * (r1[ax.hi] - r1[ax.lo]);
        }
        const float value = ay.w != 0.0f ? top + ay.w * (bottom - top) : top;
        const int dst_x = flip ? out - 1 - ox : ox;
        result[(static_cast<std::size_t>(c) * out + oy) * out + dst_x] = value;
      }
    }
  }
  return result;
}

std::vector<Crop> make_crops(const tiles::Tile& tile, const DinoConfig& cfg, Rng& rng) {
  if (tile.height != tile.width) {
    throw ParameterError(fmt::format("tile '{}' is not square", tile.id));
  }
  const int side = tile.height;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Crop> crops;
  crops.reserve(static_cast<std::size_t>(cfg.n_crops()));
  for (int i = 0; i < cfg.n_crops(); ++i) {
    const bool global = i < cfg.n_global_crops;
    const auto& range = global ? cfg.global_crop_scale : cfg.local_crop_scale;
    if (range.max > 1.0 || range.min <= 0.0) {
      throw ParameterError(fmt::format("crop scale range [{}, {}] exceeds the tile", range.min, range.max));
    }
    const double scale = range.min + (range.max - range.min) * unit(rng);
    const int crop = std::clamp(static_cast<int>(std::lround(std::sqrt(scale) * side)), 1, side);
    std::uniform_int_distribution<int> pos(0, side - crop);
    const int x0 = pos(rng);
    const int y0 = pos(rng);
    const bool flip = unit(rng) < cfg.flip_prob;
    const int out = global ? cfg.global_crop_size : cfg.local_crop_size;
    crops.push_back({out, global, flip, resize_crop(tile.data, tile.channels, side, x0, y0, crop, out, flip)});
  }
  return crops;
}

double teacher_temp_schedule(double epoch, const DinoConfig& cfg) {
  if (epoch < 0) throw ParameterError("epoch must be non-negative");
  if (cfg.warmup_teacher_temp_epochs <= 0 || epoch >= cfg.warmup_teacher_temp_epochs) {
    return cfg.teacher_temp;
  }
  const double t = epoch / cfg.warmup_teacher_temp_epochs;
  return cfg.warmup_teacher_temp + t * (cfg.teacher_temp - cfg.warmup_teacher_temp);
}

template <class T>
DinoLossResult<T> dino_loss(const std::vector<std::vector<T>>& student_logits,
                            const std::vector<std::vector<T>>& teacher_logits,
                            std::span<const T> center, T student_temp, T teacher_temp) {
  const std::size_t n_s = student_logits.size();
  const std::size_t n_t = teacher_logits.size();
  if (n_t > n_s) throw ConfigError("more teacher crops than student crops");
  const std::size_t pairs = n_t * n_s - n_t;
  if (n_t == 0 || pairs == 0) throw ConfigError("dino_loss needs at least two crops to form a pair");
  const std::size_t K = center.size();
  for (const auto* group : {&student_logits, &teacher_logits}) {
    for (const auto& l : *group) {
      if (l.size() != K) {
        throw DimensionError(fmt::format("logit vector of length {}, center has {}", l.size(), K));
      }
    }
  }

  DinoLossResult<T> r;
  r.teacher_probs.reserve(n_t);
  for (const auto& l : teacher_logits) {
    std::vector<T> centered(K);
    for (std::size_t k = 0; k < K; ++k) centered[k] = l[k] - center[k];
    r.teacher_probs.push_back(tensor::softmax_with_temperature<T>(centered, teacher_temp));
    T h{0};
    for (T p : r.teacher_probs.back()) {
      if (p > T{0}) h -= p * std::log(p);
    }
    r.teacher_entropy += h;
  }
  r.teacher_entropy /= static_cast<T>(n_t);

  // log-softmax of the student views.
  std::vector<std::vector<T>> student_probs(n_s), student_logp(n_s);
  for (std::size_t v = 0; v < n_s; ++v) {
    student_probs[v] = tensor::softmax_with_temperature<T>(student_logits[v], student_temp);
    T mx = -std::numeric_limits<T>::infinity();
    for (T x : student_logits[v]) mx = std::max(mx, x / student_temp);
    T sum{0};
    for (T x : student_logits[v]) sum += std::exp(x / student_temp - mx);
    const T lse = mx + std::log(sum);
    student_logp[v].resize(K);
    for (std::size_t k = 0; k < K; ++k) student_logp[v][k] = student_logits[v][k] / student_temp - lse;
  }

  const T inv_pairs = T{1} / static_cast<T>(pairs);
  r.d_student.assign(n_s, std::vector<T>(K, T{0}));
  for (std::size_t g = 0; g < n_t; ++g) {
    const auto& pt = r.teacher_probs[g];
    for (std::size_t v = 0; v < n_s; ++v) {
      if (v == g) continue;
      T ce{0};
      for (std::size_t k = 0; k < K; ++k) ce -= pt[k] * student_logp[v][k];
      r.loss += ce * inv_pairs;
      // d/dz_v of −Σ p_t log softmax(z_v/τ_s) = (softmax(z_v/τ_s) − p_t)/τ_s
      for (std::size_t k = 0; k < K; ++k) {
        r.d_student[v][k] += (student_probs[v][k] - pt[k]) * inv_pairs / student_temp;
      }
    }
  }
  return r;
}

template DinoLossResult<float> dino_loss<float>(const std::vector<std::vector<float>>&,
                                                const std::vector<std::vector<float>>&,
                                                std::span<const float>, float, float);
template DinoLossResult<double> dino_loss<double>(const std::vector<std::vector<double>>&,
                                                  const std::vector<std::vector<double>>&,
                                                  std::span<const double>, double, double);

void update_center(CenterState& state, const std::vector<std::vector<float>>& teacher_logits,
                   double momentum) {
  if (teacher_logits.empty()) throw ParameterError("update_center: empty teacher batch");
  const std::size_t K = state.center.size();
  std::vector<double> mean(K, 0.0);
  for (const auto& l : teacher_logits) {
    if (l.size() != K) throw DimensionError("update_center: logit length differs from center");
    for (std::size_t k = 0; k < K; ++k) mean[k] += l[k];
  }
  const double inv = 1.0 / static_cast<double>(teacher_logits.size());
  for (std::size_t k = 0; k < K; ++k) {
    state.center[k] = static_cast<float>(momentum * state.center[k] + (1.0 - momentum) * mean[k] * inv);
  }
}

void ema_update(ParamStore<float>& teacher, const ParamStore<float>& student, double momentum) {
  if (!teacher.same_layout(student)) {
    throw StateError("ema_update: teacher and student parameter layouts differ");
  }
  const float keep = static_cast<float>(momentum);
  const float take = static_cast<float>(1.0 - momentum);
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    auto t = teacher.tensor(i).value();
    auto s = student.tensor(i).value();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = keep * t[j] + take * s[j];
  }
}

namespace {

ParamStore<float> copy_values(const ParamStore<float>& src) { return src.cast<float>(); }

}  // namespace

PretrainResult pretrain(std::span<const tiles::Tile> dataset, const vit::VitConfig& vit_cfg,
                        const DinoConfig& cfg, const StepObserver& observer) {
  vit_cfg.validate();
  cfg.validate();
  if (dataset.empty()) throw DataError("pretrain: dataset is empty");
  if (cfg.global_crop_size != vit_cfg.image_size) {
    throw ConfigError(fmt::format("dino global crop size {} must equal vit image size {}",
                                  cfg.global_crop_size, vit_cfg.image_size));
  }
  if (cfg.local_crop_size % vit_cfg.patch_size != 0) {
    throw ConfigError(fmt::format("dino local crop size {} must be a multiple of patch size {}",
                                  cfg.local_crop_size, vit_cfg.patch_size));
  }
  for (const auto& t : dataset) {
    if (t.channels != vit_cfg.channels) {
      throw DimensionError(fmt::format("tile '{}' has {} channels, model expects {}", t.id,
                                       t.channels, vit_cfg.channels));
    }
  }

  PretrainResult result;
  result.student = vit::init_student(vit_cfg, cfg.seed);
  result.teacher = copy_values(result.student);
  result.center.center.assign(static_cast<std::size_t>(vit_cfg.head_output_dim), 0.0f);
  const tensor::AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  const auto n_global = static_cast<std::size_t>(cfg.n_global_crops);

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double teacher_temp = teacher_temp_schedule(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = make_rng(cfg.seed, {0x73687566, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    int batch = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const float inv_batch = 1.0f / static_cast<float>(end - start);
      std::optional<ParamStore<float>> teacher_at_start;
      if (observer) teacher_at_start = copy_values(result.teacher);

      double loss_sum = 0.0;
      double entropy_sum = 0.0;
      std::vector<std::vector<float>> batch_teacher_logits;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto& tile = dataset[idx];
        auto rng = make_rng(cfg.seed, {0x63726f70, static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(idx)});
        const auto crops = make_crops(tile, cfg, rng);

        std::vector<vit::BackboneCache<float>> bcache(crops.size());
        std::vector<vit::HeadCache<float>> hcache(crops.size());
        std::vector<std::vector<float>> student_logits(crops.size());
        std::vector<std::vector<float>> teacher_logits;
        for (std::size_t c = 0; c < crops.size(); ++c) {
          const auto input = vit::normalize_pixels<float>(crops[c].data, vit_cfg, crops[c].side);
          auto out = vit::backbone_forward<float>(result.student, vit_cfg, input, crops[c].side, &bcache[c]);
          student_logits[c] = vit::head_forward<float>(result.student, vit_cfg, out.class_token, &hcache[c]);
          if (c < n_global) {
            // Teacher: forward only, no cache, const parameters.
            const ParamStore<float>& teacher = result.teacher;
            auto tout = vit::backbone_forward<float>(teacher, vit_cfg, input, crops[c].side);
            teacher_logits.push_back(vit::head_forward<float>(teacher, vit_cfg, tout.class_token));
          }
        }
        auto loss = dino_loss<float>(student_logits, teacher_logits, result.center.center,
                                     static_cast<float>(cfg.student_temp),
                                     static_cast<float>(teacher_temp));
        loss_sum += loss.loss;
        entropy_sum += loss.teacher_entropy;
        for (std::size_t c = 0; c < crops.size(); ++c) {
          for (auto& gk : loss.d_student[c]) gk *= inv_batch;
          auto dcls = vit::head_backward<float>(result.student, vit_cfg, hcache[c], loss.d_student[c]);
          vit::backbone_backward<float>(result.student, vit_cfg, bcache[c], dcls, {});
        }
        for (auto& l : teacher_logits) batch_teacher_logits.push_back(std::move(l));
      }

      const double n = static_cast<double>(end - start);
      LossRecord rec{epoch, batch, loss_sum / n, entropy_sum / n, teacher_temp};
      if (!std::isfinite(rec.loss)) {
        throw NumericError(fmt::format(
            "non-finite DINO loss at epoch {} batch {} (teacher_temp={}, student_temp={})", epoch,
            batch, teacher_temp, cfg.student_temp));
      }
      tensor::adam_step(result.student, adam);
      std::optional<ParamStore<float>> teacher_before_ema;
      if (observer) teacher_before_ema = copy_values(result.teacher);
      ema_update(result.teacher, result.student, cfg.ema_momentum);
      update_center(result.center, batch_teacher_logits, cfg.center_momentum);
      result.history.push_back(rec);
      if (observer) {
        observer(StepView{epoch, batch, cfg.ema_momentum, &*teacher_at_start, &*teacher_before_ema,
                          &result.student, &result.teacher, &result.history.back()});
      }
    }
  }
  return result;
}

std::string loss_history_csv(std::span<const LossRecord> history) {
  std::string csv = "epoch,batch,loss,teacher_entropy,teacher_temp\n";
  for (const auto& r : history) {
    csv += fmt::format("{},{},{:.9g},{:.9g},{:.9g}\n", r.epoch, r.batch, r.loss, r.teacher_entropy,
                       r.teacher_temp);
  }
  return csv;
}

ParamStore<float> center_to_params(const CenterState& state) {
  ParamStore<float> p;
  p.add("center", tensor::Tensor<float>({state.center.size()}, state.center, true));
  return p;
}

CenterState center_from_params(const ParamStore<float>& params) {
  auto v = params.at("center").value();
  return CenterState{std::vector<float>(v.begin(), v.end())};
}

}  // namespace sarssl::dino
