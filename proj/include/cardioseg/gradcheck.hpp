#pragma once

// Central finite-difference verification of backward rules, in 64-bit.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Largest norm-wise relative error ||analytic - numeric|| / max(||analytic||,
/// ||numeric||) over all inputs. `inputs` must be leaves with requires_grad;
/// their grads are overwritten.
double gradient_relative_error(const ScalarFn& fn, std::vector<TensorD> inputs, double step = 1e-4);

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Every layer op, tensor op and loss, on inputs no larger than 4x4(x4).
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 1234, double tolerance = 1e-5);

}  // namespace cardioseg
