#include "sarssl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sarssl/errors.hpp"
#include "sarssl/rng.hpp"

namespace sarssl {

namespace {

std::vector<std::vector<double>> snapshot_grads(const tensor::ParamStore<double>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params.tensor(i).grad();
    out.emplace_back(g.begin(), g.end());
  }
  return out;
}

}  // namespace

GradCheckReport check_gradients(const LossClosure& loss, tensor::ParamStore<double>& params,
                                const GradCheckOptions& options) {
  if (!(options.step > 0)) throw ParameterError("finite-difference step must be positive");

  params.zero_grad();
  const double base = loss(params);
  const auto analytic = snapshot_grads(params);
  params.zero_grad();
  const double again = loss(params);
  if (base != again || snapshot_grads(params) != analytic) {
    throw VerificationError(fmt::format(
        "loss closure is not deterministic ({:.17g} vs {:.17g})", base, again));
  }
  if (!std::isfinite(base)) throw NumericError("loss is not finite at the base point");

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t j = 0; j < params.tensor(p).numel(); ++j) coords.emplace_back(p, j);
  }
  if (options.max_coordinates > 0) {
    const std::size_t want = std::max<std::size_t>(200, options.max_coordinates);
    if (want < coords.size()) {
      auto rng = make_rng(options.seed, {0x67726164});
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(want);
      std::sort(coords.begin(), coords.end());
    }
  }

  GradCheckReport report;
  for (auto [p, j] : coords) {
    auto value = params.tensor(p).value();
    const double original = value[j];
    value[j] = original + options.step;
    params.zero_grad();
    const double plus = loss(params);
    value[j] = original - options.step;
    params.zero_grad();
    const double minus = loss(params);
    value[j] = original;

    const double numeric = (plus - minus) / (2.0 * options.step);
    const double a = analytic[p][j];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.coordinates_checked;
    if (!(rel <= report.max_relative_error)) {
      report.max_relative_error = std::isnan(rel) ? INFINITY : rel;
      report.worst_parameter = params.name(p);
      report.worst_index = j;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  params.zero_grad();
  return report;
}

}  // namespace sarssl
