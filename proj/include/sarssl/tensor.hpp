#pragma once

// Dense row-major tensors with hand-derived backward passes, a named
// parameter store with Adam state, and the small set of kernels the
// ViT/DINO pipeline is built from.
//
// Every operation is templated on the scalar type. Training runs in
// float; gradient checking instantiates the same code in double.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sarssl::tensor {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t numel() const noexcept { return value_.size(); }
  [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
  [[nodiscard]] bool requires_grad() const noexcept { return requires_grad_; }

  [[nodiscard]] std::span<T> value() noexcept { return value_; }
  [[nodiscard]] std::span<const T> value() const noexcept { return value_; }
  // Empty when the tensor does not require a gradient.
  [[nodiscard]] std::span<T> grad() noexcept { return grad_; }
  [[nodiscard]] std::span<const T> grad() const noexcept { return grad_; }

  T& operator[](std::size_t i) noexcept { return value_[i]; }
  const T& operator[](std::size_t i) const noexcept { return value_[i]; }

  void zero_grad() noexcept;

 private:
  Shape shape_;
  std::vector<T> value_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

// Named model parameters plus per-parameter Adam moments. Iteration order
// is insertion order, which fixes checkpoint layout and reduction order.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Shape shape);
  Tensor<T>& add(const std::string& name, Tensor<T> tensor);

  [[nodiscard]] bool contains(const std::string& name) const;
  [[nodiscard]] Tensor<T>& at(const std::string& name);
  [[nodiscard]] const Tensor<T>& at(const std::string& name) const;
  [[nodiscard]] std::size_t size() const noexcept { return tensors_.size(); }
  [[nodiscard]] const std::string& name(std::size_t i) const { return names_.at(i); }
  [[nodiscard]] Tensor<T>& tensor(std::size_t i) { return tensors_.at(i); }
  [[nodiscard]] const Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }
  [[nodiscard]] std::size_t parameter_count() const noexcept;

  [[nodiscard]] std::uint64_t step() const noexcept { return step_; }
  [[nodiscard]] std::span<T> first_moment(std::size_t i) { return m_.at(i); }
  [[nodiscard]] std::span<T> second_moment(std::size_t i) { return v_.at(i); }
  void advance_step() noexcept { ++step_; }

  void zero_grad() noexcept;
  // Drops optimizer moments and the step counter; values are kept.
  void reset_optimizer();

  // FNV-1a over the raw bytes of every value, in store order.
  [[nodiscard]] std::uint64_t checksum() const noexcept;

  // Same names and shapes as `other`.
  [[nodiscard]] bool same_layout(const ParamStore& other) const;

  template <class U>
  [[nodiscard]] ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) {
      auto& dst = out.add(names_[i], tensors_[i].shape());
      auto src = tensors_[i].value();
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<U>(src[j]);
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Tensor-level operations. Backward functions read `out.grad()` and
// accumulate into the inputs' gradients.

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
void matmul_backward(Tensor<T>& a, Tensor<T>& b, const Tensor<T>& out);

// Probabilities of softmax(logits / tau), computed with max subtraction.
template <class T>
std::vector<T> softmax_with_temperature(std::span<const T> logits, T tau);

template <class T>
struct LayerNormCache {
  std::vector<T> mean;
  std::vector<T> rstd;
};

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps,
                     LayerNormCache<T>* cache = nullptr);
template <class T>
void layer_norm_backward(Tensor<T>& x, Tensor<T>& gain, Tensor<T>& bias,
                         const LayerNormCache<T>& cache, const Tensor<T>& out);

template <class T>
Tensor<T> gelu(const Tensor<T>& x);
template <class T>
void gelu_backward(Tensor<T>& x, const Tensor<T>& out);

// ---------------------------------------------------------------------------
// Span kernels used by the model code. All matrices are row-major.

namespace kernels {

// c[m×n] (+)= a[m×k] · b[k×n]
template <class T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);
// c[m×k] += a[m×n] · b[k×n]ᵀ
template <class T>
void gemm_nt_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                 std::size_t n, std::size_t k);
// c[k×n] += a[m×k]ᵀ · b[m×n]
template <class T>
void gemm_tn_acc(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
                 std::size_t k, std::size_t n);

// y[rows×out] = x[rows×in] · w[in×out] + bias
template <class T>
void linear(std::span<const T> x, std::span<const T> w, std::span<const T> bias, std::span<T> y,
            std::size_t rows, std::size_t in, std::size_t out);
// dx (may be empty) += dy·wᵀ, dw += xᵀ·dy, dbias (may be empty) += colsum(dy)
template <class T>
void linear_backward(std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> dbias, std::size_t rows,
                     std::size_t in, std::size_t out);

template <class T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                std::size_t d, T eps);
template <class T>
void layer_norm_backward(std::span<const T> x, std::span<const T> gain, std::span<const T> mean,
                         std::span<const T> rstd, std::span<const T> dy, std::span<T> dx,
                         std::span<T> dgain, std::span<T> dbias, std::size_t rows, std::size_t d);

template <class T>
T gelu(T x) noexcept;
template <class T>
T gelu_derivative(T x) noexcept;
template <class T>
void gelu(std::span<const T> x, std::span<T> y);
template <class T>
void gelu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx);

// In-place row softmax of a [rows×n] block with unit temperature.
template <class T>
void softmax_rows(std::span<T> x, std::size_t rows, std::size_t n);
// dx = p ⊙ (dp − Σ dp⊙p), rowwise; dx accumulates.
template <class T>
void softmax_rows_backward(std::span<const T> p, std::span<const T> dp, std::span<T> dx,
                           std::size_t rows, std::size_t n);

}  // namespace kernels

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over every parameter of the store; increments the
// step counter and zeroes gradients afterwards.
template <class T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg);

}  // namespace sarssl::tensor
