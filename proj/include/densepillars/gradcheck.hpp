#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "densepillars/tensor.hpp"

namespace dpp {

using GradFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
};

/// Compares reverse-mode gradients of `fn` at `inputs` against central
/// differences. A non-scalar output is first projected onto fixed random
/// weights. Per input, the error is max|analytic - numeric| scaled by the
/// larger of the two gradients' max-norms; the report keeps the worst input.
GradCheckReport grad_check(const GradFn& fn, const std::vector<Tensor<double>>& inputs, double h = 1e-6,
                           std::uint64_t seed = 0);

}  // namespace dpp
