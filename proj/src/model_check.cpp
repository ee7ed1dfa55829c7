#include "sarssl/model_check.hpp"

#include <random>

#include "sarssl/dino.hpp"
#include "sarssl/errors.hpp"
#include "sarssl/rng.hpp"

namespace sarssl {

ModelCheckConfig tiny_model_check_config() {
  ModelCheckConfig c;
  c.vit.image_size = 8;
  c.vit.patch_size = 4;
  c.vit.channels = 3;
  c.vit.embed_dim = 16;
  c.vit.depth = 2;
  c.vit.heads = 2;
  c.vit.head_output_dim = 12;
  c.vit.head_hidden_dim = 24;
  c.vit.head_bottleneck_dim = 8;
  // Larger than the training default so every path carries a visible gradient.
  c.vit.init_std = 0.3;
  return c;
}

tensor::ParamStore<double> model_check_params(const ModelCheckConfig& cfg) {
  cfg.vit.validate();
  tensor::ParamStore<double> p;
  vit::init_backbone<double>(p, cfg.vit, cfg.seed);
  auto head_cfg = cfg.vit;
  if (cfg.head_init_std > 0) head_cfg.init_std = cfg.head_init_std;
  vit::init_head<double>(p, head_cfg, cfg.seed);
  return p;
}

LossClosure model_check_loss(const ModelCheckConfig& cfg) {
  const auto& v = cfg.vit;
  const int local = cfg.local_size > 0 ? cfg.local_size : v.patch_size;
  if (local % v.patch_size != 0 || local > v.image_size) {
    throw ConfigError("model check: local view must be a multiple of the patch size");
  }
  auto rng = make_rng(cfg.seed, {hash_string("model_check")});
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t n, double scale) {
    std::vector<double> out(n);
    for (auto& x : out) x = scale * normal(rng);
    return out;
  };
  const auto C = static_cast<std::size_t>(v.channels);
  const auto K = static_cast<std::size_t>(v.head_output_dim);
  const auto global = draw(C * v.image_size * v.image_size, cfg.input_std);
  const auto local_img = draw(C * local * local, cfg.input_std);
  const auto teacher = draw(K, 0.5);
  const auto center = draw(K, 0.1);
  const auto attn_coef = draw(static_cast<std::size_t>(v.heads * v.num_patches()), 1.0);
  const double ts = cfg.student_temp, tt = cfg.teacher_temp;

  return [=](tensor::ParamStore<double>& p) {
    const std::vector<std::pair<const std::vector<double>*, int>> views{{&global, v.image_size},
                                                                        {&local_img, local}};
    std::vector<vit::BackboneCache<double>> bc(2);
    std::vector<vit::HeadCache<double>> hc(2);
    std::vector<std::vector<double>> logits(2);
    std::vector<double> attn;
    for (std::size_t i = 0; i < 2; ++i) {
      auto out = vit::backbone_forward<double>(p, v, *views[i].first, views[i].second, &bc[i]);
      if (i == 0) attn = vit::extract_attention_features(out);
      logits[i] = vit::head_forward<double>(p, v, out.class_token, &hc[i]);
    }
    auto loss = dino::dino_loss<double>(logits, {teacher}, center, ts, tt);
    double value = loss.loss;
    for (std::size_t k = 0; k < attn.size(); ++k) value += attn_coef[k] * attn[k];
    for (std::size_t i = 0; i < 2; ++i) {
      auto dcls = vit::head_backward<double>(p, v, hc[i], loss.d_student[i]);
      if (i == 0) {
        vit::backbone_backward<double>(p, v, bc[i], dcls, attn_coef);
      } else {
        vit::backbone_backward<double>(p, v, bc[i], dcls, {});
      }
    }
    return value;
  };
}

GradCheckReport check_model_gradients(const ModelCheckConfig& cfg, const GradCheckOptions& options) {
  auto params = model_check_params(cfg);
  return check_gradients(model_check_loss(cfg), params, options);
}

}  // namespace sarssl
