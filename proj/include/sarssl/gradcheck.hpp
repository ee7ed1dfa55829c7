#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "sarssl/tensor.hpp"

namespace sarssl {

// Evaluates the loss at the store's current values and accumulates its
// gradient into the store's grad buffers (which the harness zeroes first).
using LossClosure = std::function<double(tensor::ParamStore<double>&)>;

struct GradCheckOptions {
  double step = 1e-3;
  // 0 checks every coordinate; otherwise a seeded random subsample of
  // max(200, max_coordinates) coordinates.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  // Guards the relative error against coordinates whose gradient is zero
  // on both sides.
  double denominator_floor = 1e-8;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference check of `loss` against its backward pass. Evaluates
// the closure twice at the base point first; differing losses or gradients
// raise VerificationError.
GradCheckReport check_gradients(const LossClosure& loss, tensor::ParamStore<double>& params,
                                const GradCheckOptions& options = {});

}  // namespace sarssl
