#pragma once

// DINO self-distillation: SAR-safe multi-crop augmentation (crop + horizontal
// flip only), centered and sharpened teacher targets, cross-entropy matching
// and EMA teacher updates.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sarssl/rng.hpp"
#include "sarssl/tensor.hpp"
#include "sarssl/tiles.hpp"
#include "sarssl/vit.hpp"

namespace sarssl::dino {

using tensor::ParamStore;

struct ScaleRange {
  double min = 0.5;
  double max = 1.0;
};

struct DinoConfig {
  double teacher_temp = 0.04;
  double student_temp = 0.1;
  double warmup_teacher_temp = 0.04;
  int warmup_teacher_temp_epochs = 10;
  double center_momentum = 0.9;
  double ema_momentum = 0.996;
  double learning_rate = 1e-5;
  int n_global_crops = 2;
  int n_local_crops = 4;
  ScaleRange global_crop_scale{0.5, 1.0};
  ScaleRange local_crop_scale{0.2, 0.5};
  int global_crop_size = 32;
  int local_crop_size = 16;
  double flip_prob = 0.5;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;

  // Pre-training settings for the coherence (8-channel) and amplitude
  // (12-channel) inputs; crop geometry and schedule lengths keep the
  // desk-scale defaults above.
  static DinoConfig gssic();
  static DinoConfig s1grd();

  void validate() const;
  [[nodiscard]] int n_crops() const { return n_global_crops + n_local_crops; }
};

struct CenterState {
  std::vector<float> center;
};

struct Crop {
  int side = 0;
  bool global = false;
  bool flipped = false;
  std::vector<float> data;  // channels × side × side
};

// Mirrors every channel left-right.
std::vector<float> horizontal_flip(std::span<const float> data, int channels, int height, int width);

// Bilinear resize of a square window [x0, x0+crop) × [y0, y0+crop) to
// out × out, optionally mirrored.
std::vector<float> resize_crop(std::span<const float> data, int channels, int side, int x0, int y0,
                               int crop, int out, bool flip);

// Global crops first, then local crops.
std::vector<Crop> make_crops(const tiles::Tile& tile, const DinoConfig& cfg, Rng& rng);

// Linear warm-up from warmup_teacher_temp at epoch 0 to teacher_temp at
// warmup_teacher_temp_epochs; constant afterwards.
double teacher_temp_schedule(double epoch, const DinoConfig& cfg);

template <class T>
struct DinoLossResult {
  T loss{0};
  // Mean entropy of the teacher distributions (over global crops).
  T teacher_entropy{0};
  // dL/d(student logits), one vector per student crop.
  std::vector<std::vector<T>> d_student;
  // Sharpened, centered teacher distributions.
  std::vector<std::vector<T>> teacher_probs;
};

// Mean over ordered pairs (teacher crop g, student crop v), v ≠ g, of the
// cross-entropy H(P_t,g, P_s,v). Student crops are indexed with the global
// crops first, so student crop g and teacher crop g see the same view.
template <class T>
DinoLossResult<T> dino_loss(const std::vector<std::vector<T>>& student_logits,
                            const std::vector<std::vector<T>>& teacher_logits,
                            std::span<const T> center, T student_temp, T teacher_temp);

// center ← m·center + (1 − m)·mean(teacher_logits)
void update_center(CenterState& state, const std::vector<std::vector<float>>& teacher_logits,
                   double momentum);

// θ_t ← m·θ_t + (1 − m)·θ_s, every coordinate.
void ema_update(ParamStore<float>& teacher, const ParamStore<float>& student, double momentum);

struct LossRecord {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
  double teacher_entropy = 0.0;
  double teacher_temp = 0.0;
};

// Snapshot handed to an observer after every optimizer step.
struct StepView {
  int epoch = 0;
  int batch = 0;
  double ema_momentum = 0.0;
  const ParamStore<float>* teacher_at_step_start = nullptr;
  const ParamStore<float>* teacher_before_ema = nullptr;
  const ParamStore<float>* student = nullptr;
  const ParamStore<float>* teacher = nullptr;
  const LossRecord* record = nullptr;
};

using StepObserver = std::function<void(const StepView&)>;

struct PretrainResult {
  ParamStore<float> student;
  ParamStore<float> teacher;
  CenterState center;
  std::vector<LossRecord> history;
};

// Unlabeled self-distillation over `dataset`; labels are ignored.
PretrainResult pretrain(std::span<const tiles::Tile> dataset, const vit::VitConfig& vit_cfg,
                        const DinoConfig& cfg, const StepObserver& observer = {});

std::string loss_history_csv(std::span<const LossRecord> history);

ParamStore<float> center_to_params(const CenterState& state);
CenterState center_from_params(const ParamStore<float>& params);

}  // namespace sarssl::dino
