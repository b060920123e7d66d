#include "densepillars/layers.hpp"

#include <cmath>

namespace dpp {

template <typename T>
Var<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(normal(rng));
  return Var<T>(std::move(t), true);
}

template <typename T>
Var<T> fan_out_normal(Shape shape, std::int64_t fan_out, std::mt19937_64& rng) {
  return normal_init<T>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_out)), rng);
}

template <typename T>
ConvBnRelu<T>::ConvBnRelu(std::int64_t c_in, std::int64_t c_out, int kernel, int stride, std::mt19937_64& rng) {
  conv.weight = fan_out_normal<T>({c_out, c_in, kernel, kernel}, c_out * kernel * kernel, rng);
  conv.stride = stride;
  conv.padding = kernel / 2;
  bn = BatchNormParams<T>::create(c_out);
}

template Var<float> normal_init<float>(Shape, double, std::mt19937_64&);
template Var<double> normal_init<double>(Shape, double, std::mt19937_64&);
template Var<float> fan_out_normal<float>(Shape, std::int64_t, std::mt19937_64&);
template Var<double> fan_out_normal<double>(Shape, std::int64_t, std::mt19937_64&);
template struct ConvBnRelu<float>;
template struct ConvBnRelu<double>;

}  // namespace dpp
