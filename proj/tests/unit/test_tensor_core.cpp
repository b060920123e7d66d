#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "densepillars/gradcheck.hpp"
#include "densepillars/ops.hpp"
#include "densepillars/optim.hpp"

using namespace dpp;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor<double> positive_tensor(Shape shape, std::mt19937_64& rng) { return random_tensor(std::move(shape), rng, 0.5, 1.5); }

}  // namespace

TEST_CASE("conv2d: 1x1 identity weight reproduces the input") {
  std::mt19937_64 rng(1);
  const std::int64_t c = 3;
  Tensor<double> w({c, c, 1, 1});
  for (std::int64_t i = 0; i < c; ++i) w[i * c + i] = 1.0;
  Var<double> x(random_tensor({2, c, 4, 5}, rng));
  auto y = conv2d(x, Conv2dParams<double>{Var<double>(w), std::nullopt, 1, 0});
  CHECK(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("conv2d: all-ones 3x3 on a constant field") {
  const double c = 0.75;
  const std::int64_t c_in = 4;
  Var<double> x(Tensor<double>({1, c_in, 6, 6}, c));
  Var<double> w(Tensor<double>({2, c_in, 3, 3}, 1.0));
  auto y = conv2d(x, Conv2dParams<double>{w, std::nullopt, 1, 1});
  CHECK(y.value().at(0, 0, 3, 3) == doctest::Approx(9 * c * c_in));
  CHECK(y.value().at(0, 1, 2, 4) == doctest::Approx(9 * c * c_in));
  // corner sees a 2x2 window
  CHECK(y.value().at(0, 0, 0, 0) == doctest::Approx(4 * c * c_in));
}

TEST_CASE("conv2d: output size formula over random configurations") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> hd(3, 12), kd(0, 1), sd(1, 2), pd(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t h = hd(rng), w = hd(rng), k = kd(rng) ? 3 : 1;
    const int s = sd(rng), p = pd(rng);
    Var<float> x(Tensor<float>({1, 2, h, w}, 1.0f));
    Var<float> wt(Tensor<float>({3, 2, k, k}, 1.0f));
    auto y = conv2d(x, Conv2dParams<float>{wt, std::nullopt, s, p});
    CHECK(y.shape()[2] == (h + 2 * p - k) / s + 1);
    CHECK(y.shape()[3] == (w + 2 * p - k) / s + 1);
  }
}

TEST_CASE("conv2d: errors") {
  Var<float> x(Tensor<float>({1, 2, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, Conv2dParams<float>{Var<float>(Tensor<float>({3, 5, 3, 3})), std::nullopt, 1, 1}),
                  ConfigError);
  Var<float> tiny(Tensor<float>({1, 2, 1, 1}));
  CHECK_THROWS_AS(conv2d(tiny, Conv2dParams<float>{Var<float>(Tensor<float>({3, 2, 3, 3})), std::nullopt, 1, 0}),
                  ConfigError);
}

TEST_CASE("conv2d: linearity in the input") {
  std::mt19937_64 rng(3);
  Var<double> w(random_tensor({3, 2, 3, 3}, rng));
  Conv2dParams<double> p{w, std::nullopt, 2, 1};
  auto x = random_tensor({1, 2, 7, 6}, rng);
  auto z = random_tensor({1, 2, 7, 6}, rng);
  const double a = 1.7, b = -0.4;
  Tensor<double> mix(x.shape());
  for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * z[i];
  auto lhs = conv2d(Var<double>(mix), p).value();
  auto fx = conv2d(Var<double>(x), p).value();
  auto fz = conv2d(Var<double>(z), p).value();
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    const double rhs = a * fx[i] + b * fz[i];
    CHECK(std::abs(lhs[i] - rhs) <= 1e-9 * std::max(1.0, std::abs(rhs)));
  }
}

TEST_CASE("conv2d: gradient matches finite differences") {
  for (int stride : {1, 2}) {
    std::mt19937_64 rng(11 + stride);
    auto report = grad_check(
        [stride](const std::vector<Var<double>>& v) {
          return conv2d(v[0], Conv2dParams<double>{v[1], v[2], stride, 1});
        },
        {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
    CHECK(report.max_rel_error <= 1e-5);
  }
}

TEST_CASE("conv_transpose2d: identity, impulse response, gradient") {
  std::mt19937_64 rng(5);
  Var<double> x(random_tensor({1, 2, 3, 4}, rng));
  Tensor<double> eye({2, 2, 1, 1});
  eye[0] = eye[3] = 1.0;
  auto same = conv_transpose2d(x, Var<double>(eye), 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(same.value()[i] == x.value()[i]);

  Var<double> pixel(Tensor<double>({1, 1, 1, 1}, 2.5));
  auto block = conv_transpose2d(pixel, Var<double>(Tensor<double>({1, 1, 2, 2}, 1.0)), 2);
  CHECK(block.shape() == Shape{1, 1, 2, 2});
  for (auto v : block.value().data()) CHECK(v == 2.5);

  auto up4 = conv_transpose2d(Var<double>(Tensor<double>({1, 3, 2, 3})), Var<double>(Tensor<double>({3, 5, 4, 4})), 4);
  CHECK(up4.shape() == Shape{1, 5, 8, 12});

  CHECK_THROWS_AS(conv_transpose2d(x, Var<double>(Tensor<double>({2, 2, 3, 3})), 2), ConfigError);

  auto report = grad_check([](const std::vector<Var<double>>& v) { return conv_transpose2d(v[0], v[1], 2); },
                           {random_tensor({2, 3, 3, 2}, rng), random_tensor({3, 2, 2, 2}, rng)});
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("batch_norm: train mode statistics") {
  auto p = BatchNormParams<double>::create(2);
  Var<double> flat(Tensor<double>({3, 2, 2, 2}, 4.0));
  auto zero = batch_norm(flat, p);
  for (auto v : zero.value().data()) CHECK(v == 0.0);

  std::mt19937_64 rng(9);
  auto q = BatchNormParams<double>::create(2);
  q.eps = 1e-12;
  q.gamma.mutable_value()[0] = 2.0;
  q.gamma.mutable_value()[1] = 0.5;
  q.beta.mutable_value()[0] = -1.0;
  q.beta.mutable_value()[1] = 3.0;
  auto y = batch_norm(Var<double>(random_tensor({4, 2, 3, 3}, rng, -5.0, 5.0)), q).value();
  for (std::int64_t c = 0; c < 2; ++c) {
    double s = 0, sq = 0;
    int m = 0;
    for (std::int64_t n = 0; n < 4; ++n)
      for (std::int64_t i = 0; i < 9; ++i) {
        const double v = y.at(n, c, i / 3, i % 3);
        s += v;
        sq += v * v;
        ++m;
      }
    const double mean = s / m, var = sq / m - mean * mean;
    CHECK(std::abs(mean - q.beta.value()[c]) <= 1e-6);
    CHECK(std::abs(var - q.gamma.value()[c] * q.gamma.value()[c]) <= 1e-6);
  }
  CHECK(q.running_var[0] > 0.0);

  auto tiny = BatchNormParams<double>::create(1);
  CHECK_THROWS_AS(batch_norm(Var<double>(Tensor<double>({1, 1, 1, 1})), tiny), ConfigError);
}

TEST_CASE("batch_norm: eval mode against hand computation") {
  auto p = BatchNormParams<double>::create(1);
  p.mode = NormMode::kEval;
  p.running_mean[0] = 0.5;
  p.running_var[0] = 4.0;
  p.eps = 1e-3;
  p.gamma.mutable_value()[0] = 2.0;
  p.beta.mutable_value()[0] = 0.25;
  auto y = batch_norm(Var<double>(Tensor<double>({2, 1}, std::vector<double>{1.5, -0.5})), p).value();
  // 2 * (1.5 - 0.5) / sqrt(4.001) + 0.25 and 2 * (-1) / sqrt(4.001) + 0.25
  CHECK(y[0] == doctest::Approx(1.2498750234).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(-0.7498750234).epsilon(1e-9));
  CHECK(p.running_mean[0] == 0.5);
}

TEST_CASE("batch_norm: gradients in both modes") {
  for (auto mode : {NormMode::kTrain, NormMode::kEval}) {
    std::mt19937_64 rng(21);
    auto p = BatchNormParams<double>::create(3);
    p.mode = mode;
    for (std::int64_t c = 0; c < 3; ++c) {
      p.running_mean[c] = 0.1 * static_cast<double>(c);
      p.running_var[c] = 0.5 + static_cast<double>(c);
    }
    auto report = grad_check(
        [&p](const std::vector<Var<double>>& v) {
          auto q = p;
          q.gamma = v[1];
          q.beta = v[2];
          return batch_norm(v[0], q);
        },
        {random_tensor({2, 3, 2, 3}, rng), positive_tensor({3}, rng), random_tensor({3}, rng)});
    CHECK(report.max_rel_error <= 1e-5);
  }
}

TEST_CASE("relu") {
  auto y = relu(Var<float>(Tensor<float>({3}, std::vector<float>{-1.f, 0.f, 2.f}))).value();
  CHECK(y.vec() == std::vector<float>{0.f, 0.f, 2.f});
  auto z = relu(Var<float>(Tensor<float>({4}, -3.f))).value();
  for (auto v : z.data()) CHECK(v == 0.f);

  // keep samples away from the kink
  std::mt19937_64 rng(4);
  auto x = random_tensor({20}, rng);
  for (auto& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
  auto report = grad_check([](const std::vector<Var<double>>& v) { return relu(v[0]); }, {x});
  CHECK(report.max_rel_error <= 1e-6);

  Var<double> at_zero(Tensor<double>({1}, 0.0), true);
  backward(weighted_sum(relu(at_zero), Tensor<double>({1}, 1.0)));
  CHECK(at_zero.grad()[0] == 0.0);
}

TEST_CASE("avg_pool2x2") {
  auto c = avg_pool2x2(Var<float>(Tensor<float>({1, 2, 4, 6}, 3.5f))).value();
  CHECK(c.shape() == Shape{1, 2, 2, 3});
  for (auto v : c.data()) CHECK(v == 3.5f);
  auto w = avg_pool2x2(Var<float>(Tensor<float>({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4}))).value();
  CHECK(w[0] == 2.5f);
  CHECK_THROWS_AS(avg_pool2x2(Var<float>(Tensor<float>({1, 1, 3, 4}))), ConfigError);
  std::mt19937_64 rng(2);
  auto report =
      grad_check([](const std::vector<Var<double>>& v) { return avg_pool2x2(v[0]); }, {random_tensor({2, 2, 4, 6}, rng)});
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("channel_concat") {
  std::mt19937_64 rng(8);
  Var<double> a(random_tensor({2, 3, 4, 5}, rng)), b(random_tensor({2, 2, 4, 5}, rng));
  auto single = channel_concat<double>({a});
  CHECK(single.value().vec() == a.value().vec());
  auto ab = channel_concat<double>({a, b});
  CHECK(ab.shape()[1] == 5);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 5; ++x) CHECK(ab.value().at(n, c, y, x) == a.value().at(n, c, y, x));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 5; ++x) CHECK(ab.value().at(n, 3 + c, y, x) == b.value().at(n, c, y, x));
  CHECK_THROWS_AS(channel_concat<double>({a, Var<double>(Tensor<double>({2, 2, 4, 4}))}), ConfigError);
  auto report = grad_check([](const std::vector<Var<double>>& v) { return channel_concat<double>({v[0], v[1]}); },
                           {random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 1, 3, 3}, rng)});
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("linear_map") {
  std::mt19937_64 rng(6);
  auto x = random_tensor({4, 3}, rng);
  Tensor<double> eye({3, 3});
  eye[0] = eye[4] = eye[8] = 1.0;
  auto same = linear_map(Var<double>(x), Var<double>(eye), Var<double>(Tensor<double>({3})));
  CHECK(same.value().vec() == x.vec());
  Tensor<double> bias({2}, std::vector<double>{0.5, -2.0});
  auto flat = linear_map(Var<double>(x), Var<double>(Tensor<double>({3, 2})), Var<double>(bias)).value();
  for (std::int64_t r = 0; r < 4; ++r) {
    CHECK(flat[r * 2] == 0.5);
    CHECK(flat[r * 2 + 1] == -2.0);
  }
  CHECK_THROWS_AS(linear_map(Var<double>(x), Var<double>(Tensor<double>({4, 2}))), ConfigError);
  auto report = grad_check(
      [](const std::vector<Var<double>>& v) { return linear_map(v[0], v[1], std::optional<Var<double>>(v[2])); },
      {random_tensor({5, 3}, rng), random_tensor({3, 4}, rng), random_tensor({4}, rng)});
  CHECK(report.max_rel_error <= 1e-7);
}

TEST_CASE("max_over_axis") {
  auto m = max_over_axis(Var<float>(Tensor<float>({3}, std::vector<float>{1, 5, 3})), 0).value();
  CHECK(m[0] == 5.f);

  std::vector<bool> mask{false, false, true, false};
  auto masked = max_over_axis(Var<float>(Tensor<float>({2, 2, 1}, std::vector<float>{9, 8, 1, 7})), 1, &mask).value();
  CHECK(masked[0] == 0.f);  // fully masked group
  CHECK(masked[1] == 1.f);  // 7 is masked out

  Var<double> x(Tensor<double>({1, 3, 2}, std::vector<double>{0.1, 0.9, 0.7, 0.2, 0.3, 0.4}), true);
  backward(weighted_sum(max_over_axis(x, 1), Tensor<double>({1, 2}, 1.0)));
  CHECK(x.grad().vec() == std::vector<double>{0, 1, 1, 0, 0, 0});

  std::mt19937_64 rng(12);
  auto report = grad_check([](const std::vector<Var<double>>& v) { return max_over_axis(v[0], 1); },
                           {random_tensor({3, 4, 5}, rng)});
  CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("composition conv -> bn -> relu") {
  std::mt19937_64 rng(31);
  auto report = grad_check(
      [](const std::vector<Var<double>>& v) {
        auto bn = BatchNormParams<double>::create(3);
        bn.gamma = v[2];
        bn.beta = v[3];
        return relu(batch_norm(conv2d(v[0], Conv2dParams<double>{v[1], std::nullopt, 1, 1}), bn));
      },
      {random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng), positive_tensor({3}, rng),
       random_tensor({3}, rng)});
  CHECK(report.max_rel_error <= 1e-4);
}

TEST_CASE("adamw: decoupled decay with zero gradient") {
  std::vector<NamedParam<double>> ps{{"w", Var<double>(Tensor<double>({2}, std::vector<double>{2.0, -4.0}), true)}};
  OptimizerState<double> st;
  st.options.lr = 0.001;
  st.options.weight_decay = 0.01;
  adamw_step(ps, st);
  CHECK(ps[0].var.value()[0] == doctest::Approx(2.0 - 0.001 * 0.01 * 2.0).epsilon(1e-15));
  CHECK(ps[0].var.value()[1] == doctest::Approx(-4.0 + 0.001 * 0.01 * 4.0).epsilon(1e-15));
}

TEST_CASE("adamw: single step closed form") {
  Var<double> w(Tensor<double>({1}, 1.0), true);
  backward(weighted_sum(w, Tensor<double>({1}, 1.0)));
  std::vector<NamedParam<double>> ps{{"w", w}};
  OptimizerState<double> st;
  st.options.lr = 0.001;
  st.options.weight_decay = 0.01;
  adamw_step(ps, st);
  // m_hat = 1, v_hat = 1 after bias correction.
  const double expected = 1.0 - 0.001 * 0.01 - 0.001 / (1.0 + 1e-8);
  CHECK(w.value()[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(st.step == 1);
}

TEST_CASE("adamw: identical parameters stay identical and runs are deterministic") {
  auto run = [] {
    std::vector<NamedParam<float>> ps{{"a", Var<float>(Tensor<float>({3}, 0.3f), true)},
                                      {"b", Var<float>(Tensor<float>({3}, 0.3f), true)}};
    OptimizerState<float> st;
    for (int i = 0; i < 25; ++i) {
      for (auto& p : ps) {
        p.var.zero_grad();
        backward(weighted_sum(p.var, Tensor<float>({3}, std::vector<float>{0.5f, -1.f, 2.f})));
      }
      adamw_step(ps, st);
    }
    return std::pair{ps[0].var.value().vec(), ps[1].var.value().vec()};
  };
  auto [a1, b1] = run();
  auto [a2, b2] = run();
  CHECK(a1 == b1);
  CHECK(a1 == a2);
  CHECK(b1 == b2);
}

TEST_CASE("cosine_lr") {
  CHECK(cosine_lr(0, 100, 0.001, 1e-5) == 0.001);
  CHECK(cosine_lr(100, 100, 0.001, 1e-5) == 1e-5);
  CHECK(cosine_lr(50, 100, 0.001, 1e-5) == doctest::Approx((0.001 + 1e-5) / 2).epsilon(1e-12));
  CHECK(cosine_lr(150, 100, 0.001, 1e-5) == 1e-5);
}

TEST_CASE("backward releases interior nodes and accumulates on leaves") {
  Var<double> w(Tensor<double>({2}, 1.0), true);
  for (int i = 0; i < 2; ++i) backward(weighted_sum(relu(w), Tensor<double>({2}, std::vector<double>{1.0, 3.0})));
  CHECK(w.grad().vec() == std::vector<double>{2.0, 6.0});
  NoGradGuard guard;
  auto y = relu(w);
  CHECK_FALSE(y.requires_grad());
}
