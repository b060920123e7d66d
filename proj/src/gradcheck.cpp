#include "densepillars/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "densepillars/ops.hpp"

namespace dpp {

GradCheckReport grad_check(const GradFn& fn, const std::vector<Tensor<double>>& inputs, double h,
                           std::uint64_t seed) {
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.emplace_back(t, true);

  Var<double> out = fn(vars);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> proj(out.shape());
  for (auto& v : proj.data()) v = normal(rng);

  backward(weighted_sum(out, proj));

  auto projected = [&](const std::vector<Tensor<double>>& at) {
    NoGradGuard guard;
    std::vector<Var<double>> xs;
    xs.reserve(at.size());
    for (const auto& t : at) xs.emplace_back(t, false);
    Var<double> y = fn(xs);
    double acc = 0.0;
    for (std::int64_t i = 0; i < proj.numel(); ++i) acc += y.value()[i] * proj[i];
    return acc;
  };

  GradCheckReport report;
  std::vector<Tensor<double>> point = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::int64_t n = inputs[k].numel();
    std::vector<double> numeric(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) {
      const double orig = point[k][j];
      point[k][j] = orig + h;
      const double up = projected(point);
      point[k][j] = orig - h;
      const double down = projected(point);
      point[k][j] = orig;
      numeric[static_cast<std::size_t>(j)] = (up - down) / (2.0 * h);
    }
    double scale = 0.0, worst = 0.0;
    std::int64_t worst_j = -1;
    for (std::int64_t j = 0; j < n; ++j) {
      const double a = vars[k].has_grad() ? vars[k].grad()[j] : 0.0;
      const double num = numeric[static_cast<std::size_t>(j)];
      scale = std::max({scale, std::abs(a), std::abs(num)});
      const double diff = std::abs(a - num);
      if (diff > worst) {
        worst = diff;
        worst_j = j;
      }
    }
    const double rel = scale > 0.0 ? worst / scale : 0.0;
    if (rel > report.max_rel_error || report.worst_index < 0) {
      report.max_rel_error = rel;
      report.worst_input = k;
      report.worst_index = worst_j;
    }
  }
  return report;
}

}  // namespace dpp
