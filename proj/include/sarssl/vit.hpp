#pragma once

// Vision transformer for C-channel square tiles with hand-written
// backward passes, plus the DINO projection head.
//
// Parameter names:
//   patch_embed.{weight,bias}, cls_token, pos_embed,
//   blocks.<i>.{norm1,norm2}.{gain,bias}, blocks.<i>.attn.{qkv,proj}.{weight,bias},
//   blocks.<i>.mlp.{fc1,fc2}.{weight,bias}, norm.{gain,bias},
//   head.{fc1,fc2,fc3}.{weight,bias}, head.last.weight
// Linear weights are stored [in × out].

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sarssl/tensor.hpp"
#include "sarssl/tiles.hpp"

namespace sarssl::vit {

template <class T>
using ParamStore = tensor::ParamStore<T>;

struct VitConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 12;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  // DINO prototype count K.
  int head_output_dim = 256;
  // 0 selects 4·embed_dim.
  int head_hidden_dim = 0;
  // 0 selects embed_dim.
  int head_bottleneck_dim = 0;
  double init_std = 0.02;
  // Init std of the last head layer; 0 selects 1/sqrt(bottleneck), i.e.
  // prototype columns of unit expected norm.
  double head_last_init_std = 0.0;
  double layer_norm_eps = 1e-6;
  // Pixels enter the model as (x + offset) · scale. Per-channel vectors,
  // when non-empty, replace the scalar pair.
  double input_offset = 0.0;
  double input_scale = 1.0;
  std::vector<double> channel_offset;
  std::vector<double> channel_scale;

  void validate() const;
  [[nodiscard]] int grid() const { return image_size / patch_size; }
  [[nodiscard]] int num_patches() const { return grid() * grid(); }
  [[nodiscard]] int patch_dim() const { return patch_size * patch_size * channels; }
  [[nodiscard]] int head_dim() const { return embed_dim / heads; }
  [[nodiscard]] int mlp_dim() const { return 4 * embed_dim; }
  [[nodiscard]] int hidden_dim() const { return head_hidden_dim > 0 ? head_hidden_dim : 4 * embed_dim; }
  [[nodiscard]] int bottleneck_dim() const {
    return head_bottleneck_dim > 0 ? head_bottleneck_dim : embed_dim;
  }
  [[nodiscard]] double offset_for(int c) const {
    return channel_offset.empty() ? input_offset : channel_offset[static_cast<std::size_t>(c)];
  }
  [[nodiscard]] double scale_for(int c) const {
    return channel_scale.empty() ? input_scale : channel_scale[static_cast<std::size_t>(c)];
  }
};

// Per-channel standardization fitted on `tiles`: offset = −mean,
// scale = 1/std (1 for constant channels).
void fit_input_normalization(VitConfig& cfg, std::span<const tiles::Tile> tiles);

// (x + offset_c) · scale_c for a channels × side × side image.
template <class T>
std::vector<T> normalize_pixels(std::span<const float> raw, const VitConfig& cfg, int side);

template <class T>
struct BackboneOutput {
  int depth = 0;
  int heads = 0;
  int tokens = 0;  // N, patch tokens only
  std::vector<T> class_token;     // d
  std::vector<T> patch_tokens;    // N × d
  // depth × heads × N. Class-token attention over the patch tokens,
  // renormalized to sum to one.
  std::vector<T> attention_maps;

  [[nodiscard]] std::span<const T> attention(int block, int head) const {
    const auto offset = static_cast<std::size_t>((block * heads + head) * tokens);
    return std::span<const T>(attention_maps).subspan(offset, static_cast<std::size_t>(tokens));
  }
};

template <class T>
struct BlockCache {
  std::vector<T> input;       // L × d
  std::vector<T> ln1;         // L × d
  std::vector<T> ln1_mean, ln1_rstd;
  std::vector<T> qkv;         // L × 3d
  std::vector<T> probs;       // heads × L × L
  std::vector<T> attn;        // L × d, concatenated head outputs
  std::vector<T> mid;         // L × d, after the attention residual
  std::vector<T> ln2;
  std::vector<T> ln2_mean, ln2_rstd;
  std::vector<T> fc1;         // L × 4d, pre-activation
  std::vector<T> act;         // L × 4d
};

// Bilinear resampling of the positional grid: each target cell is a
// weighted sum of up to four source cells.
struct PosInterp {
  int source_grid = 0;
  int target_grid = 0;
  struct Tap {
    int target;
    int source;
    double weight;
  };
  std::vector<Tap> taps;
};

PosInterp make_pos_interp(int source_grid, int target_grid);

template <class T>
struct BackboneCache {
  int side = 0;
  int tokens = 0;
  std::vector<T> patches;     // N × patch_dim
  PosInterp interp;
  std::vector<BlockCache<T>> blocks;
  std::vector<T> final_input;  // L × d
  std::vector<T> final_mean, final_rstd;
};

template <class T>
struct HeadCache {
  std::vector<T> input, fc1, act1, fc2, act2, bottleneck, normalized;
  T norm{0};
};

// Non-overlapping patches in row-major order; each patch flattened
// channel-major, then row-major within the channel.
template <class T>
std::vector<T> patchify_image(std::span<const T> image, int channels, int side, int patch);
std::vector<float> patchify(const tiles::Tile& tile, const VitConfig& cfg);

template <class T>
void init_backbone(ParamStore<T>& params, const VitConfig& cfg, std::uint64_t seed);
template <class T>
void init_head(ParamStore<T>& params, const VitConfig& cfg, std::uint64_t seed);
// Backbone followed by head, as used for the DINO student.
ParamStore<float> init_student(const VitConfig& cfg, std::uint64_t seed);

// Model input for one tile: (x + offset)·scale in the requested precision.
template <class T>
std::vector<T> prepare_input(const tiles::Tile& tile, const VitConfig& cfg);

// `image` is channels × side × side with side a multiple of the patch size.
template <class T>
BackboneOutput<T> backbone_forward(const ParamStore<T>& params, const VitConfig& cfg,
                                   std::span<const T> image, int side,
                                   BackboneCache<T>* cache = nullptr);

// Accumulates parameter gradients given upstream gradients for the final
// class token and, optionally, the final block's attention features
// (heads × N, empty when unused).
template <class T>
void backbone_backward(ParamStore<T>& params, const VitConfig& cfg, const BackboneCache<T>& cache,
                       std::span<const T> d_class_token, std::span<const T> d_attention_features);

template <class T>
std::vector<T> l2_normalize(std::span<const T> v);

template <class T>
std::vector<T> head_forward(const ParamStore<T>& params, const VitConfig& cfg,
                            std::span<const T> class_token, HeadCache<T>* cache = nullptr);
// Logits from an already-normalized bottleneck vector.
template <class T>
std::vector<T> head_logits_from_normalized(const ParamStore<T>& params, const VitConfig& cfg,
                                           std::span<const T> normalized);
// Accumulates head gradients and returns the gradient w.r.t. the class token.
template <class T>
std::vector<T> head_backward(ParamStore<T>& params, const VitConfig& cfg, const HeadCache<T>& cache,
                             std::span<const T> d_logits);

// Final block's class-token attention rows, head-major (heads × N).
template <class T>
std::vector<T> extract_attention_features(const BackboneOutput<T>& out);

// CSV rows `block,head,patch_index,weight` for every attention map.
std::string attention_csv(const BackboneOutput<float>& out);

}  // namespace sarssl::vit
