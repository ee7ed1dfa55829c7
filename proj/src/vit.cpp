#include "sarssl/vit.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "sarssl/errors.hpp"
#include "sarssl/rng.hpp"

namespace sarssl::vit {

namespace k = tensor::kernels;
using tensor::Shape;

void VitConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || channels <= 0 || embed_dim <= 0 || depth <= 0 ||
      heads <= 0 || head_output_dim <= 0 || head_hidden_dim < 0 || head_bottleneck_dim < 0) {
    throw ConfigError("vit: all sizes must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError(fmt::format("vit: image_size {} not divisible by patch_size {}", image_size,
                                  patch_size));
  }
  if (embed_dim % heads != 0) {
    throw ConfigError(
        fmt::format("vit: embed_dim {} not divisible by heads {}", embed_dim, heads));
  }
  if (!(init_std > 0) || !(layer_norm_eps > 0) || input_scale == 0.0) {
    throw ConfigError("vit: init_std and layer_norm_eps must be positive, input_scale non-zero");
  }
  if (!(head_last_init_std >= 0)) throw ConfigError("vit: head_last_init_std must be >= 0");
  const auto C = static_cast<std::size_t>(channels);
  if ((!channel_offset.empty() && channel_offset.size() != C) ||
      (!channel_scale.empty() && channel_scale.size() != C)) {
    throw ConfigError(fmt::format("vit: per-channel normalization needs {} entries", channels));
  }
  for (double s : channel_scale) {
    if (s == 0.0 || !std::isfinite(s)) throw ConfigError("vit: channel scales must be finite and non-zero");
  }
}

PosInterp make_pos_interp(int source_grid, int target_grid) {
  PosInterp interp{source_grid, target_grid, {}};
  const double scale = static_cast<double>(source_grid) / target_grid;
  auto axis = [&](int t) {
    double s = (t + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(source_grid - 1));
    const int lo = static_cast<int>(std::floor(s));
    const int hi = std::min(lo + 1, source_grid - 1);
    return std::tuple{lo, hi, s - lo};
  };
  for (int ty = 0; ty < target_grid; ++ty) {
    auto [y0, y1, wy] = axis(ty);
    for (int tx = 0; tx < target_grid; ++tx) {
      auto [x0, x1, wx] = axis(tx);
      const int target = ty * target_grid + tx;
      const std::array<PosInterp::Tap, 4> taps = {{
          {target, y0 * source_grid + x0, (1 - wy) * (1 - wx)},
          {target, y0 * source_grid + x1, (1 - wy) * wx},
          {target, y1 * source_grid + x0, wy * (1 - wx)},
          {target, y1 * source_grid + x1, wy * wx},
      }};
      for (const auto& tap : taps) {
        if (tap.weight != 0.0) interp.taps.push_back(tap);
      }
    }
  }
  return interp;
}

template <class T>
std::vector<T> patchify_image(std::span<const T> image, int channels, int side, int patch) {
  if (side % patch != 0) {
    throw DimensionError(fmt::format("image side {} not divisible by patch {}", side, patch));
  }
  const auto plane = static_cast<std::size_t>(side) * side;
  if (image.size() != plane * channels) {
    throw DimensionError(fmt::format("image has {} values, expected {}×{}×{}", image.size(),
                                     channels, side, side));
  }
  const int g = side / patch;
  const std::size_t pdim = static_cast<std::size_t>(patch) * patch * channels;
  std::vector<T> out(static_cast<std::size_t>(g) * g * pdim);
  std::size_t o = 0;
  for (int py = 0; py < g; ++py) {
    for (int px = 0; px < g; ++px) {
      for (int c = 0; c < channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          const auto row = c * plane + static_cast<std::size_t>(py * patch + dy) * side;
          for (int dx = 0; dx < patch; ++dx) out[o++] = image[row + px * patch + dx];
        }
      }
    }
  }
  return out;
}

std::vector<float> patchify(const tiles::Tile& tile, const VitConfig& cfg) {
  if (tile.channels != cfg.channels || tile.height != cfg.image_size ||
      tile.width != cfg.image_size) {
    throw DimensionError(fmt::format("tile '{}' is {}×{}×{}, model expects {}×{}×{}", tile.id,
                                     tile.channels, tile.height, tile.width, cfg.channels,
                                     cfg.image_size, cfg.image_size));
  }
  return patchify_image<float>(tile.data, cfg.channels, cfg.image_size, cfg.patch_size);
}

template <class T>
std::vector<T> prepare_input(const tiles::Tile& tile, const VitConfig& cfg) {
  if (tile.channels != cfg.channels || tile.height != tile.width) {
    throw DimensionError(fmt::format("tile '{}' is {}×{}×{}, model expects {} channels, square",
                                     tile.id, tile.channels, tile.height, tile.width,
                                     cfg.channels));
  }
  return normalize_pixels<T>(tile.data, cfg, tile.height);
}

template <class T>
std::vector<T> normalize_pixels(std::span<const float> raw, const VitConfig& cfg, int side) {
  const auto plane = static_cast<std::size_t>(side) * static_cast<std::size_t>(side);
  if (raw.size() != plane * static_cast<std::size_t>(cfg.channels)) {
    throw DimensionError(fmt::format("image has {} values, expected {}×{}×{}", raw.size(),
                                     cfg.channels, side, side));
  }
  std::vector<T> out(raw.size());
  for (int c = 0; c < cfg.channels; ++c) {
    const double off = cfg.offset_for(c);
    const double scale = cfg.scale_for(c);
    for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
      out[i] = static_cast<T>((static_cast<double>(raw[i]) + off) * scale);
    }
  }
  return out;
}

void fit_input_normalization(VitConfig& cfg, std::span<const tiles::Tile> tiles) {
  if (tiles.empty()) throw DataError("fit_input_normalization: no tiles");
  const auto C = static_cast<std::size_t>(cfg.channels);
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  std::vector<std::size_t> count(C, 0);
  for (const auto& t : tiles) {
    if (t.channels != cfg.channels) {
      throw DimensionError(fmt::format("tile '{}' has {} channels, model expects {}", t.id,
                                       t.channels, cfg.channels));
    }
    const auto plane = static_cast<std::size_t>(t.height) * static_cast<std::size_t>(t.width);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
        sum[c] += t.data[i];
        sq[c] += static_cast<double>(t.data[i]) * t.data[i];
      }
      count[c] += plane;
    }
  }
  cfg.channel_offset.assign(C, 0.0);
  cfg.channel_scale.assign(C, 1.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double mean = sum[c] / static_cast<double>(count[c]);
    const double var = std::max(0.0, sq[c] / static_cast<double>(count[c]) - mean * mean);
    cfg.channel_offset[c] = -mean;
    cfg.channel_scale[c] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
}

namespace {

template <class T>
void fill_normal(tensor::Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.value()) v = truncated_normal<T>(rng, static_cast<T>(stddev));
}

template <class T>
void add_linear(ParamStore<T>& p, Rng& rng, const std::string& name, int in, int out, double std,
                bool bias = true) {
  auto& w = p.add(name + ".weight", Shape{static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
  fill_normal(w, rng, std);
  if (bias) p.add(name + ".bias", Shape{static_cast<std::size_t>(out)});
}

template <class T>
void add_norm(ParamStore<T>& p, const std::string& name, int d) {
  auto& g = p.add(name + ".gain", Shape{static_cast<std::size_t>(d)});
  std::fill(g.value().begin(), g.value().end(), T{1});
  p.add(name + ".bias", Shape{static_cast<std::size_t>(d)});
}

std::string block_name(int b, const char* leaf) { return fmt::format("blocks.{}.{}", b, leaf); }

template <class T>
std::span<const T> v(const ParamStore<T>& p, const std::string& name) {
  return p.at(name).value();
}

template <class T>
std::span<T> g(ParamStore<T>& p, const std::string& name) {
  return p.at(name).grad();
}

template <class T>
void check_initialized(const ParamStore<T>& p, const VitConfig& cfg) {
  if (!p.contains("patch_embed.weight") || !p.contains("pos_embed")) {
    throw StateError("backbone parameters are not initialized");
  }
  const Shape expected{static_cast<std::size_t>(cfg.patch_dim()),
                       static_cast<std::size_t>(cfg.embed_dim)};
  if (p.at("patch_embed.weight").shape() != expected ||
      p.at("pos_embed").numel() != static_cast<std::size_t>((cfg.num_patches() + 1) * cfg.embed_dim)) {
    throw StateError("backbone parameters do not match the ViT configuration");
  }
}

}  // namespace

template <class T>
void init_backbone(ParamStore<T>& p, const VitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(seed, {0x766974});
  const int d = cfg.embed_dim;
  const double s = cfg.init_std;
  add_linear(p, rng, "patch_embed", cfg.patch_dim(), d, s);
  auto& cls = p.add("cls_token", Shape{static_cast<std::size_t>(d)});
  fill_normal(cls, rng, s);
  auto& pos = p.add("pos_embed", Shape{static_cast<std::size_t>(cfg.num_patches() + 1),
                                        static_cast<std::size_t>(d)});
  fill_normal(pos, rng, s);
  for (int b = 0; b < cfg.depth; ++b) {
    add_norm(p, block_name(b, "norm1"), d);
    add_linear(p, rng, block_name(b, "attn.qkv"), d, 3 * d, s);
    add_linear(p, rng, block_name(b, "attn.proj"), d, d, s);
    add_norm(p, block_name(b, "norm2"), d);
    add_linear(p, rng, block_name(b, "mlp.fc1"), d, cfg.mlp_dim(), s);
    add_linear(p, rng, block_name(b, "mlp.fc2"), cfg.mlp_dim(), d, s);
  }
  add_norm(p, "norm", d);
}

template <class T>
void init_head(ParamStore<T>& p, const VitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto rng = make_rng(seed, {0x68656164});
  const double s = cfg.init_std;
  add_linear(p, rng, "head.fc1", cfg.embed_dim, cfg.hidden_dim(), s);
  add_linear(p, rng, "head.fc2", cfg.hidden_dim(), cfg.hidden_dim(), s);
  add_linear(p, rng, "head.fc3", cfg.hidden_dim(), cfg.bottleneck_dim(), s);
  const double last_std = cfg.head_last_init_std > 0
                              ? cfg.head_last_init_std
                              : 1.0 / std::sqrt(static_cast<double>(cfg.bottleneck_dim()));
  add_linear(p, rng, "head.last", cfg.bottleneck_dim(), cfg.head_output_dim, last_std, false);
}

ParamStore<float> init_student(const VitConfig& cfg, std::uint64_t seed) {
  ParamStore<float> p;
  init_backbone(p, cfg, seed);
  init_head(p, cfg, seed);
  return p;
}

template <class T>
BackboneOutput<T> backbone_forward(const ParamStore<T>& p, const VitConfig& cfg,
                                   std::span<const T> image, int side, BackboneCache<T>* cache) {
  check_initialized(p, cfg);
  if (side <= 0 || side % cfg.patch_size != 0) {
    throw DimensionError(
        fmt::format("input side {} is not a multiple of patch size {}", side, cfg.patch_size));
  }
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t H = static_cast<std::size_t>(cfg.heads);
  const std::size_t dh = d / H;
  const std::size_t mlp = static_cast<std::size_t>(cfg.mlp_dim());
  const int grid = side / cfg.patch_size;
  const std::size_t n = static_cast<std::size_t>(grid) * grid;
  const std::size_t L = n + 1;
  const std::size_t pdim = static_cast<std::size_t>(cfg.patch_dim());
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  BackboneCache<T> local;
  BackboneCache<T>& c = cache ? *cache : local;
  c.side = side;
  c.tokens = static_cast<int>(n);
  c.patches = patchify_image<T>(image, cfg.channels, side, cfg.patch_size);
  c.interp = make_pos_interp(cfg.grid(), grid);
  c.blocks.resize(static_cast<std::size_t>(cfg.depth));

  // Embedding: [cls + pos0; patches·W + b + interp(pos grid)].
  std::vector<T> x(L * d);
  {
    auto cls = v(p, "cls_token");
    auto pos = v(p, "pos_embed");
    for (std::size_t j = 0; j < d; ++j) x[j] = cls[j] + pos[j];
    std::span<T> body(x.data() + d, n * d);
    k::linear<T>(c.patches, v(p, "patch_embed.weight"), v(p, "patch_embed.bias"), body, n, pdim, d);
    for (const auto& tap : c.interp.taps) {
      const T w = static_cast<T>(tap.weight);
      const T* src = pos.data() + (static_cast<std::size_t>(tap.source) + 1) * d;
      T* dst = body.data() + static_cast<std::size_t>(tap.target) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
    }
  }

  BackboneOutput<T> out;
  out.depth = cfg.depth;
  out.heads = cfg.heads;
  out.tokens = static_cast<int>(n);
  out.attention_maps.assign(static_cast<std::size_t>(cfg.depth) * H * n, T{0});

  std::vector<T> qh(L * dh), kh(L * dh), vh(L * dh), oh(L * dh);
  for (int b = 0; b < cfg.depth; ++b) {
    auto& bc = c.blocks[static_cast<std::size_t>(b)];
    bc.input = x;
    bc.ln1.assign(L * d, T{0});
    bc.ln1_mean.assign(L, T{0});
    bc.ln1_rstd.assign(L, T{0});
    k::layer_norm<T>(bc.input, v(p, block_name(b, "norm1.gain")), v(p, block_name(b, "norm1.bias")),
                     bc.ln1, bc.ln1_mean, bc.ln1_rstd, L, d, eps);
    bc.qkv.assign(L * 3 * d, T{0});
    k::linear<T>(bc.ln1, v(p, block_name(b, "attn.qkv.weight")), v(p, block_name(b, "attn.qkv.bias")),
                 bc.qkv, L, d, 3 * d);
    bc.probs.assign(H * L * L, T{0});
    bc.attn.assign(L * d, T{0});
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t r = 0; r < L; ++r) {
        const T* row = bc.qkv.data() + r * 3 * d;
        std::copy_n(row + h * dh, dh, qh.data() + r * dh);
        std::copy_n(row + d + h * dh, dh, kh.data() + r * dh);
        std::copy_n(row + 2 * d + h * dh, dh, vh.data() + r * dh);
      }
      std::span<T> probs(bc.probs.data() + h * L * L, L * L);
      k::gemm_nt_acc<T>(qh, kh, probs, L, dh, L);
      for (auto& s : probs) s *= scale;
      k::softmax_rows<T>(probs, L, L);
      k::gemm<T>(probs, vh, oh, L, L, dh, false);
      for (std::size_t r = 0; r < L; ++r) {
        std::copy_n(oh.data() + r * dh, dh, bc.attn.data() + r * d + h * dh);
      }
      // Class-token row over patch tokens, renormalized.
      T mass{0};
      for (std::size_t j = 1; j < L; ++j) mass += probs[j];
      T* dst = out.attention_maps.data() + (static_cast<std::size_t>(b) * H + h) * n;
      for (std::size_t j = 1; j < L; ++j) dst[j - 1] = probs[j] / mass;
    }
    bc.mid = bc.input;
    {
      std::vector<T> proj(L * d);
      k::linear<T>(bc.attn, v(p, block_name(b, "attn.proj.weight")),
                   v(p, block_name(b, "attn.proj.bias")), proj, L, d, d);
      for (std::size_t i = 0; i < L * d; ++i) bc.mid[i] += proj[i];
    }
    bc.ln2.assign(L * d, T{0});
    bc.ln2_mean.assign(L, T{0});
    bc.ln2_rstd.assign(L, T{0});
    k::layer_norm<T>(bc.mid, v(p, block_name(b, "norm2.gain")), v(p, block_name(b, "norm2.bias")),
                     bc.ln2, bc.ln2_mean, bc.ln2_rstd, L, d, eps);
    bc.fc1.assign(L * mlp, T{0});
    k::linear<T>(bc.ln2, v(p, block_name(b, "mlp.fc1.weight")), v(p, block_name(b, "mlp.fc1.bias")),
                 bc.fc1, L, d, mlp);
    bc.act.assign(L * mlp, T{0});
    k::gelu<T>(bc.fc1, bc.act);
    std::vector<T> m(L * d);
    k::linear<T>(bc.act, v(p, block_name(b, "mlp.fc2.weight")), v(p, block_name(b, "mlp.fc2.bias")),
                 m, L, mlp, d);
    x = bc.mid;
    for (std::size_t i = 0; i < L * d; ++i) x[i] += m[i];
  }

  c.final_input = x;
  c.final_mean.assign(L, T{0});
  c.final_rstd.assign(L, T{0});
  std::vector<T> y(L * d);
  k::layer_norm<T>(c.final_input, v(p, "norm.gain"), v(p, "norm.bias"), y, c.final_mean,
                   c.final_rstd, L, d, eps);
  out.class_token.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(d));
  out.patch_tokens.assign(y.begin() + static_cast<std::ptrdiff_t>(d), y.end());
  return out;
}

template <class T>
void backbone_backward(ParamStore<T>& p, const VitConfig& cfg, const BackboneCache<T>& c,
                       std::span<const T> d_class_token, std::span<const T> d_attention_features) {
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t H = static_cast<std::size_t>(cfg.heads);
  const std::size_t dh = d / H;
  const std::size_t mlp = static_cast<std::size_t>(cfg.mlp_dim());
  const std::size_t n = static_cast<std::size_t>(c.tokens);
  const std::size_t L = n + 1;
  const std::size_t pdim = static_cast<std::size_t>(cfg.patch_dim());
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  if (c.blocks.size() != static_cast<std::size_t>(cfg.depth) || c.final_input.size() != L * d) {
    throw StateError("backbone cache does not match configuration");
  }
  if (d_class_token.size() != d) {
    throw DimensionError(fmt::format("class-token gradient has {} entries, expected {}",
                                     d_class_token.size(), d));
  }
  if (!d_attention_features.empty() && d_attention_features.size() != H * n) {
    throw DimensionError(fmt::format("attention gradient has {} entries, expected {}",
                                     d_attention_features.size(), H * n));
  }

  std::vector<T> dy(L * d, T{0});
  std::copy(d_class_token.begin(), d_class_token.end(), dy.begin());
  std::vector<T> dx(L * d, T{0});
  k::layer_norm_backward<T>(c.final_input, v(p, "norm.gain"), c.final_mean, c.final_rstd, dy, dx,
                            g(p, "norm.gain"), g(p, "norm.bias"), L, d);

  std::vector<T> qh(L * dh), kh(L * dh), vh(L * dh), doh(L * dh);
  std::vector<T> dprobs(L * L), dscores(L * L), dq(L * dh), dk(L * dh), dv(L * dh);
  for (int b = cfg.depth - 1; b >= 0; --b) {
    const auto& bc = c.blocks[static_cast<std::size_t>(b)];
    // MLP branch: x = mid + fc2(gelu(fc1(ln2(mid)))).
    std::vector<T> dact(L * mlp, T{0});
    k::linear_backward<T>(bc.act, v(p, block_name(b, "mlp.fc2.weight")), dx, dact,
                          g(p, block_name(b, "mlp.fc2.weight")), g(p, block_name(b, "mlp.fc2.bias")),
                          L, mlp, d);
    std::vector<T> dfc1(L * mlp, T{0});
    k::gelu_backward<T>(bc.fc1, dact, dfc1);
    std::vector<T> dln2(L * d, T{0});
    k::linear_backward<T>(bc.ln2, v(p, block_name(b, "mlp.fc1.weight")), dfc1, dln2,
                          g(p, block_name(b, "mlp.fc1.weight")), g(p, block_name(b, "mlp.fc1.bias")),
                          L, d, mlp);
    std::vector<T> dmid = dx;
    k::layer_norm_backward<T>(bc.mid, v(p, block_name(b, "norm2.gain")), bc.ln2_mean, bc.ln2_rstd,
                              dln2, dmid, g(p, block_name(b, "norm2.gain")),
                              g(p, block_name(b, "norm2.bias")), L, d);

    // Attention branch: mid = input + proj(attn(ln1(input))).
    std::vector<T> dattn(L * d, T{0});
    k::linear_backward<T>(bc.attn, v(p, block_name(b, "attn.proj.weight")), dmid, dattn,
                          g(p, block_name(b, "attn.proj.weight")),
                          g(p, block_name(b, "attn.proj.bias")), L, d, d);
    std::vector<T> dqkv(L * 3 * d, T{0});
    const bool last = b == cfg.depth - 1;
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t r = 0; r < L; ++r) {
        const T* row = bc.qkv.data() + r * 3 * d;
        std::copy_n(row + h * dh, dh, qh.data() + r * dh);
        std::copy_n(row + d + h * dh, dh, kh.data() + r * dh);
        std::copy_n(row + 2 * d + h * dh, dh, vh.data() + r * dh);
        std::copy_n(dattn.data() + r * d + h * dh, dh, doh.data() + r * dh);
      }
      std::span<const T> probs(bc.probs.data() + h * L * L, L * L);
      std::fill(dprobs.begin(), dprobs.end(), T{0});
      std::fill(dv.begin(), dv.end(), T{0});
      // out = probs · v
      k::gemm_nt_acc<T>(doh, vh, dprobs, L, dh, L);
      k::gemm_tn_acc<T>(probs, doh, dv, L, L, dh);
      if (last && !d_attention_features.empty()) {
        // a_j = p_j / Σ_{k≥1} p_k over the class-token row.
        T mass{0};
        for (std::size_t j = 1; j < L; ++j) mass += probs[j];
        const T* da = d_attention_features.data() + h * n;
        T dot{0};
        for (std::size_t j = 1; j < L; ++j) dot += da[j - 1] * probs[j] / mass;
        for (std::size_t j = 1; j < L; ++j) dprobs[j] += (da[j - 1] - dot) / mass;
      }
      std::fill(dscores.begin(), dscores.end(), T{0});
      k::softmax_rows_backward<T>(probs, dprobs, dscores, L, L);
      for (auto& s : dscores) s *= scale;
      std::fill(dq.begin(), dq.end(), T{0});
      std::fill(dk.begin(), dk.end(), T{0});
      // scores = q · kᵀ
      k::gemm<T>(dscores, kh, dq, L, L, dh, true);
      k::gemm_tn_acc<T>(dscores, qh, dk, L, L, dh);
      for (std::size_t r = 0; r < L; ++r) {
        T* row = dqkv.data() + r * 3 * d;
        for (std::size_t j = 0; j < dh; ++j) {
          row[h * dh + j] += dq[r * dh + j];
          row[d + h * dh + j] += dk[r * dh + j];
          row[2 * d + h * dh + j] += dv[r * dh + j];
        }
      }
    }
    std::vector<T> dln1(L * d, T{0});
    k::linear_backward<T>(bc.ln1, v(p, block_name(b, "attn.qkv.weight")), dqkv, dln1,
                          g(p, block_name(b, "attn.qkv.weight")),
                          g(p, block_name(b, "attn.qkv.bias")), L, d, 3 * d);
    dx = dmid;
    k::layer_norm_backward<T>(bc.input, v(p, block_name(b, "norm1.gain")), bc.ln1_mean,
                              bc.ln1_rstd, dln1, dx, g(p, block_name(b, "norm1.gain")),
                              g(p, block_name(b, "norm1.bias")), L, d);
  }

  // Embedding.
  auto dcls = g(p, "cls_token");
  auto dpos = g(p, "pos_embed");
  for (std::size_t j = 0; j < d; ++j) {
    dcls[j] += dx[j];
    dpos[j] += dx[j];
  }
  std::span<const T> dbody(dx.data() + d, n * d);
  for (const auto& tap : c.interp.taps) {
    const T w = static_cast<T>(tap.weight);
    T* dst = dpos.data() + (static_cast<std::size_t>(tap.source) + 1) * d;
    const T* src = dbody.data() + static_cast<std::size_t>(tap.target) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += w * src[j];
  }
  k::linear_backward<T>(c.patches, v(p, "patch_embed.weight"), dbody, std::span<T>{},
                        g(p, "patch_embed.weight"), g(p, "patch_embed.bias"), n, pdim, d);
}

template <class T>
std::vector<T> l2_normalize(std::span<const T> x) {
  T sq{0};
  for (T e : x) sq += e * e;
  const T norm = std::sqrt(sq);
  std::vector<T> out(x.begin(), x.end());
  if (norm > T{0}) {
    for (auto& e : out) e /= norm;
  }
  return out;
}

template <class T>
std::vector<T> head_logits_from_normalized(const ParamStore<T>& p, const VitConfig& cfg,
                                           std::span<const T> normalized) {
  std::vector<T> logits(static_cast<std::size_t>(cfg.head_output_dim));
  k::linear<T>(normalized, v(p, "head.last.weight"), std::span<const T>{}, logits, 1,
               static_cast<std::size_t>(cfg.bottleneck_dim()),
               static_cast<std::size_t>(cfg.head_output_dim));
  return logits;
}

template <class T>
std::vector<T> head_forward(const ParamStore<T>& p, const VitConfig& cfg,
                            std::span<const T> class_token, HeadCache<T>* cache) {
  if (!p.contains("head.last.weight")) throw StateError("projection head is not initialized");
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t hid = static_cast<std::size_t>(cfg.hidden_dim());
  const std::size_t bot = static_cast<std::size_t>(cfg.bottleneck_dim());
  if (class_token.size() != d) {
    throw DimensionError(fmt::format("head input has {} entries, expected {}", class_token.size(), d));
  }
  HeadCache<T> local;
  HeadCache<T>& c = cache ? *cache : local;
  c.input.assign(class_token.begin(), class_token.end());
  c.fc1.assign(hid, T{0});
  k::linear<T>(c.input, v(p, "head.fc1.weight"), v(p, "head.fc1.bias"), c.fc1, 1, d, hid);
  c.act1.assign(hid, T{0});
  k::gelu<T>(c.fc1, c.act1);
  c.fc2.assign(hid, T{0});
  k::linear<T>(c.act1, v(p, "head.fc2.weight"), v(p, "head.fc2.bias"), c.fc2, 1, hid, hid);
  c.act2.assign(hid, T{0});
  k::gelu<T>(c.fc2, c.act2);
  c.bottleneck.assign(bot, T{0});
  k::linear<T>(c.act2, v(p, "head.fc3.weight"), v(p, "head.fc3.bias"), c.bottleneck, 1, hid, bot);
  T sq{0};
  for (T e : c.bottleneck) sq += e * e;
  c.norm = std::sqrt(sq);
  c.normalized = l2_normalize<T>(c.bottleneck);
  return head_logits_from_normalized<T>(p, cfg, c.normalized);
}

template <class T>
std::vector<T> head_backward(ParamStore<T>& p, const VitConfig& cfg, const HeadCache<T>& c,
                             std::span<const T> d_logits) {
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t hid = static_cast<std::size_t>(cfg.hidden_dim());
  const std::size_t bot = static_cast<std::size_t>(cfg.bottleneck_dim());
  const std::size_t K = static_cast<std::size_t>(cfg.head_output_dim);
  if (d_logits.size() != K) {
    throw DimensionError(fmt::format("logit gradient has {} entries, expected {}", d_logits.size(), K));
  }
  std::vector<T> dnormalized(bot, T{0});
  k::linear_backward<T>(c.normalized, v(p, "head.last.weight"), d_logits, dnormalized,
                        g(p, "head.last.weight"), std::span<T>{}, 1, bot, K);
  std::vector<T> dbottleneck(bot, T{0});
  if (c.norm > T{0}) {
    T dot{0};
    for (std::size_t i = 0; i < bot; ++i) dot += c.normalized[i] * dnormalized[i];
    for (std::size_t i = 0; i < bot; ++i) {
      dbottleneck[i] = (dnormalized[i] - c.normalized[i] * dot) / c.norm;
    }
  }
  std::vector<T> dact2(hid, T{0});
  k::linear_backward<T>(c.act2, v(p, "head.fc3.weight"), dbottleneck, dact2, g(p, "head.fc3.weight"),
                        g(p, "head.fc3.bias"), 1, hid, bot);
  std::vector<T> dfc2(hid, T{0});
  k::gelu_backward<T>(c.fc2, dact2, dfc2);
  std::vector<T> dact1(hid, T{0});
  k::linear_backward<T>(c.act1, v(p, "head.fc2.weight"), dfc2, dact1, g(p, "head.fc2.weight"),
                        g(p, "head.fc2.bias"), 1, hid, hid);
  std::vector<T> dfc1(hid, T{0});
  k::gelu_backward<T>(c.fc1, dact1, dfc1);
  std::vector<T> dinput(d, T{0});
  k::linear_backward<T>(c.input, v(p, "head.fc1.weight"), dfc1, dinput, g(p, "head.fc1.weight"),
                        g(p, "head.fc1.bias"), 1, d, hid);
  return dinput;
}

template <class T>
std::vector<T> extract_attention_features(const BackboneOutput<T>& out) {
  if (out.depth <= 0 || out.attention_maps.empty()) {
    throw StateError("backbone output carries no attention maps");
  }
  const auto per_block = static_cast<std::size_t>(out.heads * out.tokens);
  auto begin = out.attention_maps.begin() +
               static_cast<std::ptrdiff_t>(static_cast<std::size_t>(out.depth - 1) * per_block);
  return std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(per_block));
}

std::string attention_csv(const BackboneOutput<float>& out) {
  std::string csv = "block,head,patch_index,weight\n";
  for (int b = 0; b < out.depth; ++b) {
    for (int h = 0; h < out.heads; ++h) {
      auto row = out.attention(b, h);
      for (std::size_t j = 0; j < row.size(); ++j) {
        csv += fmt::format("{},{},{},{:.9g}\n", b, h, j, row[j]);
      }
    }
  }
  return csv;
}

#define SARSSL_INSTANTIATE(T)                                                                    \
  template std::vector<T> patchify_image<T>(std::span<const T>, int, int, int);                  \
  template std::vector<T> prepare_input<T>(const tiles::Tile&, const VitConfig&);                \
  template std::vector<T> normalize_pixels<T>(std::span<const float>, const VitConfig&, int);     \
  template void init_backbone<T>(ParamStore<T>&, const VitConfig&, std::uint64_t);               \
  template void init_head<T>(ParamStore<T>&, const VitConfig&, std::uint64_t);                   \
  template BackboneOutput<T> backbone_forward<T>(const ParamStore<T>&, const VitConfig&,         \
                                                 std::span<const T>, int, BackboneCache<T>*);    \
  template void backbone_backward<T>(ParamStore<T>&, const VitConfig&, const BackboneCache<T>&, \
                                     std::span<const T>, std::span<const T>);                    \
  template std::vector<T> l2_normalize<T>(std::span<const T>);                                   \
  template std::vector<T> head_forward<T>(const ParamStore<T>&, const VitConfig&,               \
                                          std::span<const T>, HeadCache<T>*);                    \
  template std::vector<T> head_logits_from_normalized<T>(const ParamStore<T>&, const VitConfig&, \
                                                         std::span<const T>);                    \
  template std::vector<T> head_backward<T>(ParamStore<T>&, const VitConfig&, const HeadCache<T>&, \
                                           std::span<const T>);                                  \
  template std::vector<T> extract_attention_features<T>(const BackboneOutput<T>&);

SARSSL_INSTANTIATE(float)
SARSSL_INSTANTIATE(double)

#undef SARSSL_INSTANTIATE

}  // namespace sarssl::vit
