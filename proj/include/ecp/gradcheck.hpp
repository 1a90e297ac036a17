#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ecp/tensor.hpp"

namespace ecp {

/// Central-difference gradient of a scalar function.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& at,
                        double step);

/// ||a - n|| / max(||a||, ||n||), 0 when both are zero.
double gradient_relative_error(const Tensor& analytic, const Tensor& numeric);

struct GradcheckOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 1;
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Test hook: perturbs the analytic gradient of the named layer.
  std::optional<std::string> inject_fault;
};

struct LayerGradcheck {
  std::string layer;
  std::size_t instances = 0;
  double worst_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<LayerGradcheck> layers;
  bool passed() const;
};

/// conv, ecp_fused, max_pool, avg_pool, random_pool, relu, dense, softmax_ce
const std::vector<std::string>& gradcheck_layer_names();

/// Seeded random instances per layer; every analytic gradient (inputs and
/// parameters) compared against central differences of sum(dy * y), or of
/// the loss for softmax cross-entropy.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace ecp
