#include "densepillars/optim.hpp"

#include <cmath>
#include <numbers>

namespace dpp {

template <typename T>
void adamw_step(std::vector<NamedParam<T>>& params, OptimizerState<T>& state) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.var.shape());
      state.second_moment.emplace_back(p.var.shape());
    }
  }
  const AdamWOptions& o = state.options;
  ++state.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<T>& v = params[i].var;
    Tensor<T>& m = state.first_moment[i];
    Tensor<T>& s = state.second_moment[i];
    if (m.shape() != v.shape()) throw ConfigError("adamw_step: moment shape mismatch for " + params[i].name);
    Tensor<T>& w = v.mutable_value();
    const bool has = v.has_grad();
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      const double g = has ? static_cast<double>(v.grad()[j]) : 0.0;
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      const double sj = o.beta2 * s[j] + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      s[j] = static_cast<T>(sj);
      double wj = w[j];
      wj -= o.lr * o.weight_decay * wj;
      wj -= o.lr * (mj / bc1) / (std::sqrt(sj / bc2) + o.eps);
      w[j] = static_cast<T>(wj);
    }
  }
}

double cosine_lr(std::int64_t t, std::int64_t total, double eta0, double eta_min) {
  if (total <= 0 || t >= total) return eta_min;
  if (t <= 0) return eta0;
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

template void adamw_step<float>(std::vector<NamedParam<float>>&, OptimizerState<float>&);
template void adamw_step<double>(std::vector<NamedParam<double>>&, OptimizerState<double>&);

}  // namespace dpp
