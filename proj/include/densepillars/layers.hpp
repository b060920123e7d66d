#pragma once

#include <random>
#include <string>
#include <vector>

#include "densepillars/ops.hpp"
#include "densepillars/optim.hpp"

namespace dpp {

template <typename T>
struct NamedBuffer {
  std::string name;
  Tensor<T>* tensor;
};

/// Trainable parameters plus non-trainable state (BN running statistics) of a
/// network, in registration order.
template <typename T>
struct ParameterSet {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void add(const std::string& name, const Var<T>& v) { params.push_back({name, v}); }
  void add_norm(const std::string& prefix, BatchNormParams<T>& bn) {
    add(prefix + ".gamma", bn.gamma);
    add(prefix + ".beta", bn.beta);
    buffers.push_back({prefix + ".running_mean", &bn.running_mean});
    buffers.push_back({prefix + ".running_var", &bn.running_var});
  }
  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.var.numel();
    return n;
  }
};

/// Normal init with std = sqrt(2 / fan_out).
template <typename T>
Var<T> fan_out_normal(Shape shape, std::int64_t fan_out, std::mt19937_64& rng);

template <typename T>
Var<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng);

/// conv (no bias) -> BN -> ReLU.
template <typename T>
struct ConvBnRelu {
  Conv2dParams<T> conv;
  BatchNormParams<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(std::int64_t c_in, std::int64_t c_out, int kernel, int stride, std::mt19937_64& rng);

  Var<T> forward(const Var<T>& x) { return relu(batch_norm(conv2d(x, conv), bn)); }
  void set_mode(NormMode m) { bn.mode = m; }
  void collect(const std::string& prefix, ParameterSet<T>& out) {
    out.add(prefix + ".conv.weight", conv.weight);
    out.add_norm(prefix + ".bn", bn);
  }
};

}  // namespace dpp
