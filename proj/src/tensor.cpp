#include "sarssl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "sarssl/errors.hpp"

namespace sarssl::tensor {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

template <class T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  value_.assign(shape_numel(shape_), T{0});
  if (requires_grad_) grad_.assign(value_.size(), T{0});
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : shape_(std::move(shape)), value_(std::move(values)), requires_grad_(requires_grad) {
  if (value_.size() != shape_numel(shape_)) {
    throw DimensionError(fmt::format("tensor of shape {} given {} values", shape_string(shape_),
                                     value_.size()));
  }
  if (requires_grad_) grad_.assign(value_.size(), T{0});
}

template <class T>
void Tensor<T>::zero_grad() noexcept {
  std::fill(grad_.begin(), grad_.end(), T{0});
}

// ---------------------------------------------------------------------------

template <class T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Shape shape) {
  return add(name, Tensor<T>(std::move(shape), true));
}

template <class T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> tensor) {
  if (index_.contains(name)) throw StateError(fmt::format("duplicate parameter '{}'", name));
  if (!tensor.requires_grad()) {
    auto values = std::vector<T>(tensor.value().begin(), tensor.value().end());
    tensor = Tensor<T>(tensor.shape(), std::move(values), true);
  }
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  m_.emplace_back(tensor.numel(), T{0});
  v_.emplace_back(tensor.numel(), T{0});
  tensors_.push_back(std::move(tensor));
  return tensors_.back();
}

template <class T>
bool ParamStore<T>::contains(const std::string& name) const {
  return index_.contains(name);
}

template <class T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError(fmt::format("missing parameter '{}'", name));
  return tensors_[it->second];
}

template <class T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw StateError(fmt::format("missing parameter '{}'", name));
  return tensors_[it->second];
}

template <class T>
std::size_t ParamStore<T>::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() noexcept {
  for (auto& t : tensors_) t.zero_grad();
}

template <class T>
void ParamStore<T>::reset_optimizer() {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    std::fill(m_[i].begin(), m_[i].end(), T{0});
    std::fill(v_[i].begin(), v_[i].end(), T{0});
  }
  step_ = 0;
}

template <class T>
std::uint64_t ParamStore<T>::checksum() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.value().data());
    for (std::size_t i = 0; i < t.numel() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template <class T>
bool ParamStore<T>::same_layout(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i].shape() != other.tensors_[i].shape()) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace kernels {

template <class T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill_n(c.begin(), m * n, T{0});
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict__ crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T{0}) continue;
      const T* __restrict__ brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_nt_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                 std::size_t n, std::size_t k) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ arow = pa + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* __restrict__ brow = pb + p * n;
      T acc{0};
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      pc[i * k + p] += acc;
    }
  }
}

template <class T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                 std::size_t k, std::size_t n) {
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* __restrict__ brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T{0}) continue;
      T* __restrict__ crow = pc + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void linear(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> y,
            std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (bias.empty()) {
      std::fill_n(y.begin() + static_cast<std::ptrdiff_t>(r * out), out, T{0});
    } else {
      std::copy_n(bias.begin(), out, y.begin() + static_cast<std::ptrdiff_t>(r * out));
    }
  }
  gemm<T>(x, w, y, rows, in, out, true);
}

template <class T>
void linear_backward(std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> dbias, std::size_t rows,
                     std::size_t in, std::size_t out) {
  if (!dx.empty()) gemm_nt_acc<T>(dy, w, dx, rows, out, in);
  if (!dw.empty()) gemm_tn_acc<T>(x, dy, dw, rows, in, out);
  if (!dbias.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out; ++j) dbias[j] += dy[r * out + j];
    }
  }
}

template <class T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                std::size_t d, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    T* out = y.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) out[j] = (row[j] - mu) * rs * gain[j] + bias[j];
  }
}

template <class T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dgain, std::span<T> dbias, std::size_t rows,
                         std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * d;
    const T* drow = dy.data() + r * d;
    const T mu = mean[r];
    const T rs = rstd[r];
    T sum_dxhat{0};
    T sum_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (row[j] - mu) * rs;
      const T dxhat = drow[j] * gain[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      if (!dgain.empty()) dgain[j] += drow[j] * xhat;
      if (!dbias.empty()) dbias[j] += drow[j];
    }
    const T inv_d = T{1} / static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (row[j] - mu) * rs;
      const T dxhat = drow[j] * gain[j];
      dx[r * d + j] += rs * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
    }
  }
}

namespace {
template <class T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <class T>
constexpr T kGeluA = static_cast<T>(0.044715);
}  // namespace

template <class T>
T gelu(T x) noexcept {
  const T inner = kGeluC<T> * (x + kGeluA<T> * x * x * x);
  return T{0.5} * x * (T{1} + std::tanh(inner));
}

template <class T>
T gelu_derivative(T x) noexcept {
  const T inner = kGeluC<T> * (x + kGeluA<T> * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = kGeluC<T> * (T{1} + T{3} * kGeluA<T> * x * x);
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * dinner;
}

template <class T>
void gelu(std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu(x[i]);
}

template <class T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * gelu_derivative(x[i]);
}

template <class T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T sum{0};
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

template <class T>
void softmax_rows_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dx,
                           std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* prow = p.data() + r * n;
    const T* drow = dp.data() + r * n;
    T dot{0};
    for (std::size_t j = 0; j < n; ++j) dot += prow[j] * drow[j];
    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += prow[j] * (drow[j] - dot);
  }
}

}  // namespace kernels

// ---------------------------------------------------------------------------

namespace {

template <class T>
std::pair<std::size_t, std::size_t> as_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(
        fmt::format("{} must be a matrix, got shape {}", what, shape_string(t.shape())));
  }
  return {t.dim(0), t.dim(1)};
}

// Collapses all leading dimensions into rows.
template <class T>
std::pair<std::size_t, std::size_t> as_rows(const Tensor<T>& t) {
  if (t.rank() == 0) throw DimensionError("scalar tensor where rows were expected");
  const std::size_t d = t.shape().back();
  return {d == 0 ? 0 : t.numel() / d, d};
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  auto [m, k] = as_matrix(a, "matmul lhs");
  auto [k2, n] = as_matrix(b, "matmul rhs");
  if (k != k2) {
    throw DimensionError(fmt::format("matmul inner dimensions differ: {} · {}",
                                     shape_string(a.shape()), shape_string(b.shape())));
  }
  Tensor<T> out({m, n}, a.requires_grad() || b.requires_grad());
  kernels::gemm<T>(a.value(), b.value(), out.value(), m, k, n, false);
  return out;
}

template <class T>
void matmul_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& out) {
  auto [m, k] = as_matrix(a, "matmul lhs");
  auto [k2, n] = as_matrix(b, "matmul rhs");
  if (k != k2 || out.shape() != Shape{m, n}) {
    throw DimensionError(fmt::format("matmul_backward shapes disagree: {} · {} -> {}",
                                     shape_string(a.shape()), shape_string(b.shape()),
                                     shape_string(out.shape())));
  }
  if (a.requires_grad()) kernels::gemm_nt_acc<T>(out.grad(), b.value(), a.grad(), m, n, k);
  if (b.requires_grad()) kernels::gemm_tn_acc<T>(a.value(), out.grad(), b.grad(), m, k, n);
}

template <class T>
std::vector<T> softmax_with_temperature(std::span<const T> logits, T tau) {
  if (!(tau > T{0})) throw ParameterError(fmt::format("temperature must be positive, got {}", tau));
  if (logits.empty()) throw DimensionError("softmax of an empty vector");
  for (T v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax input contains a non-finite value");
  }
  std::vector<T> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = logits[i] / tau;
  kernels::softmax_rows<T>(p, 1, p.size());
  return p;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps,
                     LayerNormCache<T>* cache) {
  auto [rows, d] = as_rows(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError(fmt::format("layer_norm over last dim {} given gain {} and bias {}", d,
                                     shape_string(gain.shape()), shape_string(bias.shape())));
  }
  Tensor<T> out(x.shape(), x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  LayerNormCache<T> local;
  LayerNormCache<T>& c = cache ? *cache : local;
  c.mean.assign(rows, T{0});
  c.rstd.assign(rows, T{0});
  kernels::layer_norm<T>(x.value(), gain.value(), bias.value(), out.value(), c.mean, c.rstd, rows,
                         d, eps);
  return out;
}

template <class T>
void layer_norm_backward(Tensor<T>& x, Tensor<T>& gain, Tensor<T>& bias,
                         const LayerNormCache<T>& cache, const Tensor<T>& out) {
  auto [rows, d] = as_rows(x);
  std::vector<T> dx(x.numel(), T{0});
  kernels::layer_norm_backward<T>(x.value(), gain.value(), cache.mean, cache.rstd, out.grad(), dx,
                                  gain.grad(), bias.grad(), rows, d);
  if (x.requires_grad()) {
    auto g = x.grad();
    for (std::size_t i = 0; i < dx.size(); ++i) g[i] += dx[i];
  }
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.shape(), x.requires_grad());
  kernels::gelu<T>(x.value(), out.value());
  return out;
}

template <class T>
void gelu_backward(Tensor<T>& x, const Tensor<T>& out) {
  if (x.requires_grad()) kernels::gelu_backward<T>(x.value(), out.grad(), x.grad());
}

template <class T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  if (!(cfg.learning_rate > 0)) {
    throw ParameterError(fmt::format("learning rate must be positive, got {}", cfg.learning_rate));
  }
  store.advance_step();
  const double t = static_cast<double>(store.step());
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.tensor(i);
    auto value = p.value();
    auto grad = p.grad();
    auto m = store.first_moment(i);
    auto v = store.second_moment(i);
    for (std::size_t j = 0; j < value.size(); ++j) {
      const T g = grad[j];
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p.zero_grad();
  }
}

#define SARSSL_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                     \
  template class ParamStore<T>;                                                                 \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template void matmul_backward<T>(Tensor<T>&, Tensor<T>&, const Tensor<T>&);                   \
  template std::vector<T> softmax_with_temperature<T>(std::span<const T>, T);                   \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,     \
                                   LayerNormCache<T>*);                                         \
  template void layer_norm_backward<T>(Tensor<T>&, Tensor<T>&, Tensor<T>&,                      \
                                       const LayerNormCache<T>&, const Tensor<T>&);             \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                 \
  template void gelu_backward<T>(Tensor<T>&, const Tensor<T>&);                                 \
  template void adam_step<T>(ParamStore<T>&, const AdamConfig&);                                \
  namespace kernels {                                                                           \
  template void gemm<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,     \
                        std::size_t, std::size_t, bool);                                        \
  template void gemm_nt_acc<T>(std::span<const T>, std::span<const T>, std::span<T>,           \
                               std::size_t, std::size_t, std::size_t);                          \
  template void gemm_tn_acc<T>(std::span<const T>, std::span<const T>, std::span<T>,           \
                               std::size_t, std::size_t, std::size_t);                          \
  template void linear<T>(std::span<const T>, std::span<const T>, std::span<const T>,          \
                          std::span<T>, std::size_t, std::size_t, std::size_t);                 \
  template void linear_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>, std::span<T>, std::size_t,       \
                                   std::size_t, std::size_t);                                   \
  template void layer_norm<T>(std::span<const T>, std::span<const T>, std::span<const T>,      \
                              std::span<T>, std::span<T>, std::span<T>, std::size_t,            \
                              std::size_t, T);                                                  \
  template void layer_norm_backward<T>(std::span<const T>, std::span<const T>,                 \
                                       std::span<const T>, std::span<const T>,                  \
                                       std::span<const T>, std::span<T>, std::span<T>,          \
                                       std::span<T>, std::size_t, std::size_t);                 \
  template T gelu<T>(T) noexcept;                                                               \
  template T gelu_derivative<T>(T) noexcept;                                                    \
  template void gelu<T>(std::span<const T>, std::span<T>);                                      \
  template void gelu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);         \
  template void softmax_rows<T>(std::span<T>, std::size_t, std::size_t);                        \
  template void softmax_rows_backward<T>(std::span<const T>, std::span<const T>, std::span<T>, \
                                         std::size_t, std::size_t);                             \
  }

SARSSL_INSTANTIATE(float)
SARSSL_INSTANTIATE(double)

#undef SARSSL_INSTANTIATE

}  // namespace sarssl::tensor
