#pragma once

// Gradient check of the full student path: ViT backbone on a global view
// and a smaller local view, DINO head, DINO loss against fixed teacher
// logits, plus a linear functional of the final attention features.

#include <cstdint>

#include "sarssl/gradcheck.hpp"
#include "sarssl/vit.hpp"

namespace sarssl {

struct ModelCheckConfig {
  vit::VitConfig vit;  // image_size is the global view side
  int local_size = 0;  // 0 selects one patch
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double input_std = 1.0;
  // Init std of the head MLP; 0 uses vit.init_std.
  double head_init_std = 0.0;
  std::uint64_t seed = 0;
};

// dim 16, depth 2, heads 2, 8×8 input, 3 channels, 4-pixel patches.
ModelCheckConfig tiny_model_check_config();

// Parameters at their seeded initialization, in double precision.
tensor::ParamStore<double> model_check_params(const ModelCheckConfig& cfg);
LossClosure model_check_loss(const ModelCheckConfig& cfg);

GradCheckReport check_model_gradients(const ModelCheckConfig& cfg, const GradCheckOptions& options);

}  // namespace sarssl
