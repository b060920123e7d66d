#pragma once

#include <string>
#include <vector>

#include "densepillars/tensor.hpp"

namespace dpp {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct OptimizerState {
  AdamWOptions options;
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

/// One AdamW update over `params` in place, using each parameter's current
/// gradient (missing gradients count as zero). Weight decay is applied to the
/// weights directly, not folded into the gradient.
template <typename T>
void adamw_step(std::vector<NamedParam<T>>& params, OptimizerState<T>& state);

/// Cosine annealing from `eta0` at t = 0 to `eta_min` at t = total. Steps past
/// the end clamp to `eta_min`.
double cosine_lr(std::int64_t t, std::int64_t total, double eta0, double eta_min);

}  // namespace dpp
