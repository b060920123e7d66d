#include "densepillars/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace dpp {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements per chunk.
constexpr std::int64_t kColBudget = std::int64_t{1} << 22;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

struct ConvGeometry {
  std::int64_t n, c_in, h, w, c_out, k, h_out, w_out;
  int stride, pad;
  std::int64_t kdim() const { return c_in * k * k; }
  std::int64_t rows_per_chunk() const { return std::max<std::int64_t>(1, kColBudget / (kdim() * w_out)); }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::int64_t r0, std::int64_t r1, T* col) {
  const std::int64_t ncols = (r1 - r0) * g.w_out;
  for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
    const T* plane = x + ci * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((ci * g.k + ky) * g.k + kx) * ncols;
        for (std::int64_t r = r0; r < r1; ++r) {
          const std::int64_t iy = r * g.stride - g.pad + ky;
          T* row = dst + (r - r0) * g.w_out;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.w_out, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::int64_t xo = 0; xo < g.w_out; ++xo) {
            const std::int64_t ix = xo * g.stride - g.pad + kx;
            row[xo] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::int64_t r0, std::int64_t r1, T* dx) {
  const std::int64_t ncols = (r1 - r0) * g.w_out;
  for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
    T* plane = dx + ci * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((ci * g.k + ky) * g.k + kx) * ncols;
        for (std::int64_t r = r0; r < r1; ++r) {
          const std::int64_t iy = r * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* row = src + (r - r0) * g.w_out;
          T* dst = plane + iy * g.w;
          for (std::int64_t xo = 0; xo < g.w_out; ++xo) {
            const std::int64_t ix = xo * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += row[xo];
          }
        }
      }
    }
  }
}

void check_nchw(const Shape& s, const char* op) {
  require(s.size() == 4, std::string(op) + ": expected [N,C,H,W] input, got " + shape_str(s));
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha, const T* a,
          std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc) {
  MutMap<T> cm(c, m, n, Eigen::OuterStride<>(ldc));
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  auto run = [&](const auto& am, const auto& bm) { cm.noalias() += alpha * am * bm; };
  ConstMap<T> a_nt(a, trans_a ? k : m, trans_a ? m : k, Eigen::OuterStride<>(lda));
  ConstMap<T> b_nt(b, trans_b ? n : k, trans_b ? k : n, Eigen::OuterStride<>(ldb));
  if (!trans_a && !trans_b) run(a_nt, b_nt);
  else if (trans_a && !trans_b) run(a_nt.transpose(), b_nt);
  else if (!trans_a && trans_b) run(a_nt, b_nt.transpose());
  else run(a_nt.transpose(), b_nt.transpose());
}

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  require(stride > 0, "conv: stride must be positive");
  require(padding >= 0, "conv: padding must be non-negative");
  const std::int64_t span = in + 2 * padding - kernel;
  require(span >= 0, "conv: kernel " + std::to_string(kernel) + " larger than padded input " + std::to_string(in));
  return span / stride + 1;
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::create(std::int64_t channels) {
  BatchNormParams p;
  p.gamma = Var<T>(Tensor<T>({channels}, T(1)), true);
  p.beta = Var<T>(Tensor<T>({channels}, T(0)), true);
  p.running_mean = Tensor<T>({channels}, T(0));
  p.running_var = Tensor<T>({channels}, T(1));
  return p;
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Conv2dParams<T>& p) {
  const Shape& xs = input.shape();
  const Shape& ws = p.weight.shape();
  check_nchw(xs, "conv2d");
  require(ws.size() == 4 && ws[2] == ws[3], "conv2d: weight must be [C_out,C_in,k,k], got " + shape_str(ws));
  require(ws[1] == xs[1], "conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                              std::to_string(ws[1]));
  if (p.bias) require(p.bias->numel() == ws[0], "conv2d: bias length mismatch");

  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, p.stride, p.padding};
  g.h_out = conv_out_size(g.h, g.k, g.stride, g.pad);
  g.w_out = conv_out_size(g.w, g.k, g.stride, g.pad);
  const std::int64_t hw_in = g.h * g.w, hw_out = g.h_out * g.w_out;

  Tensor<T> out({g.n, g.c_out, g.h_out, g.w_out});
  const T* w = p.weight.value().ptr();
  std::vector<T> col;
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* x = input.value().ptr() + n * g.c_in * hw_in;
    T* o = out.ptr() + n * g.c_out * hw_out;
    if (g.pointwise()) {
      gemm<T>(false, false, g.c_out, hw_in, g.c_in, T(1), w, g.c_in, x, hw_in, T(0), o, hw_out);
      continue;
    }
    const std::int64_t step = g.rows_per_chunk();
    for (std::int64_t r0 = 0; r0 < g.h_out; r0 += step) {
      const std::int64_t r1 = std::min(g.h_out, r0 + step);
      const std::int64_t ncols = (r1 - r0) * g.w_out;
      col.resize(static_cast<std::size_t>(g.kdim() * ncols));
      im2col(x, g, r0, r1, col.data());
      gemm<T>(false, false, g.c_out, ncols, g.kdim(), T(1), w, g.kdim(), col.data(), ncols, T(0),
              o + r0 * g.w_out, hw_out);
    }
  }
  if (p.bias) {
    const T* b = p.bias->value().ptr();
    for (std::int64_t n = 0; n < g.n; ++n)
      for (std::int64_t c = 0; c < g.c_out; ++c) {
        T* o = out.ptr() + (n * g.c_out + c) * hw_out;
        for (std::int64_t i = 0; i < hw_out; ++i) o[i] += b[c];
      }
  }

  std::vector<Var<T>> parents{input, p.weight};
  if (p.bias) parents.push_back(*p.bias);
  auto bias = p.bias;
  auto weight = p.weight;
  return Var<T>::from_op(std::move(out), std::move(parents), [input, weight, bias, g](Node<T>& self) {
    const std::int64_t hw_in = g.h * g.w, hw_out = g.h_out * g.w_out;
    const T* gout = self.grad.ptr();
    if (bias && bias->requires_grad()) {
      T* db = bias->node()->grad_buffer().ptr();
      for (std::int64_t n = 0; n < g.n; ++n)
        for (std::int64_t c = 0; c < g.c_out; ++c) {
          const T* go = gout + (n * g.c_out + c) * hw_out;
          db[c] += std::accumulate(go, go + hw_out, T(0));
        }
    }
    T* dw = weight.requires_grad() ? weight.node()->grad_buffer().ptr() : nullptr;
    T* dx = input.requires_grad() ? input.node()->grad_buffer().ptr() : nullptr;
    const T* w = weight.value().ptr();
    std::vector<T> col;
    for (std::int64_t n = 0; n < g.n; ++n) {
      const T* x = input.value().ptr() + n * g.c_in * hw_in;
      const T* go = gout + n * g.c_out * hw_out;
      if (g.pointwise()) {
        if (dw) gemm<T>(false, true, g.c_out, g.c_in, hw_in, T(1), go, hw_out, x, hw_in, T(1), dw, g.c_in);
        if (dx)
          gemm<T>(true, false, g.c_in, hw_in, g.c_out, T(1), w, g.c_in, go, hw_out, T(1), dx + n * g.c_in * hw_in,
                  hw_in);
        continue;
      }
      const std::int64_t step = g.rows_per_chunk();
      for (std::int64_t r0 = 0; r0 < g.h_out; r0 += step) {
        const std::int64_t r1 = std::min(g.h_out, r0 + step);
        const std::int64_t ncols = (r1 - r0) * g.w_out;
        col.resize(static_cast<std::size_t>(g.kdim() * ncols));
        if (dw) {
          im2col(x, g, r0, r1, col.data());
          gemm<T>(false, true, g.c_out, g.kdim(), ncols, T(1), go + r0 * g.w_out, hw_out, col.data(), ncols, T(1),
                  dw, g.kdim());
        }
        if (dx) {
          gemm<T>(true, false, g.kdim(), ncols, g.c_out, T(1), w, g.kdim(), go + r0 * g.w_out, hw_out, T(0),
                  col.data(), ncols);
          col2im_add(col.data(), g, r0, r1, dx + n * g.c_in * hw_in);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& input, const Var<T>& weight, int stride) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  check_nchw(xs, "conv_transpose2d");
  require(ws.size() == 4 && ws[2] == ws[3], "conv_transpose2d: weight must be [C_in,C_out,k,k]");
  require(stride >= 1 && ws[2] == stride,
          "conv_transpose2d: kernel " + std::to_string(ws[2]) + " must equal stride " + std::to_string(stride));
  require(ws[0] == xs[1], "conv_transpose2d: channel mismatch");

  const std::int64_t n_batch = xs[0], c_in = xs[1], h = xs[2], w = xs[3];
  const std::int64_t c_out = ws[1], k = ws[2], hw = h * w, ckk = c_out * k * k;
  const std::int64_t ho = h * k, wo = w * k;
  Tensor<T> out({n_batch, c_out, ho, wo});
  std::vector<T> cols(static_cast<std::size_t>(ckk * hw));
  for (std::int64_t n = 0; n < n_batch; ++n) {
    const T* x = input.value().ptr() + n * c_in * hw;
    gemm<T>(true, false, ckk, hw, c_in, T(1), weight.value().ptr(), ckk, x, hw, T(0), cols.data(), hw);
    for (std::int64_t co = 0; co < c_out; ++co)
      for (std::int64_t ky = 0; ky < k; ++ky)
        for (std::int64_t kx = 0; kx < k; ++kx) {
          const T* src = cols.data() + ((co * k + ky) * k + kx) * hw;
          for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t xx = 0; xx < w; ++xx) out.at(n, co, y * k + ky, xx * k + kx) = src[y * w + xx];
        }
  }
  return Var<T>::from_op(std::move(out), {input, weight}, [input, weight, n_batch, c_in, c_out, k, h, w](Node<T>& self) {
    const std::int64_t hw = h * w, ckk = c_out * k * k;
    T* dw = weight.requires_grad() ? weight.node()->grad_buffer().ptr() : nullptr;
    T* dx = input.requires_grad() ? input.node()->grad_buffer().ptr() : nullptr;
    std::vector<T> dcols(static_cast<std::size_t>(ckk * hw));
    for (std::int64_t n = 0; n < n_batch; ++n) {
      for (std::int64_t co = 0; co < c_out; ++co)
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            T* dst = dcols.data() + ((co * k + ky) * k + kx) * hw;
            for (std::int64_t y = 0; y < h; ++y)
              for (std::int64_t xx = 0; xx < w; ++xx) dst[y * w + xx] = self.grad.at(n, co, y * k + ky, xx * k + kx);
          }
      const T* x = input.value().ptr() + n * c_in * hw;
      if (dx)
        gemm<T>(false, false, c_in, hw, ckk, T(1), weight.value().ptr(), ckk, dcols.data(), hw, T(1),
                dx + n * c_in * hw, hw);
      if (dw) gemm<T>(false, true, c_in, ckk, hw, T(1), x, hw, dcols.data(), hw, T(1), dw, ckk);
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& input, BatchNormParams<T>& p) {
  const Shape& xs = input.shape();
  require(xs.size() == 4 || xs.size() == 2, "batch_norm: expected [N,C,H,W] or [M,C], got " + shape_str(xs));
  const std::int64_t outer = xs[0], c = xs[1], inner = xs.size() == 4 ? xs[2] * xs[3] : 1;
  require(c == p.channels(), "batch_norm: input has " + std::to_string(c) + " channels, parameters have " +
                                 std::to_string(p.channels()));
  const std::int64_t m = outer * inner;
  const bool train = p.mode == NormMode::kTrain;
  if (train && m < 2) throw ConfigError("batch_norm: degenerate batch (N*H*W < 2) in train mode");

  const T* x = input.value().ptr();
  std::vector<T> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    if (!train) {
      mean[ch] = p.running_mean[ch];
      invstd[ch] = T(1) / std::sqrt(p.running_var[ch] + p.eps);
      continue;
    }
    double sum = 0.0;
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = x + (o * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) sum += src[i];
    }
    const double mu = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = x + (o * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const double d = src[i] - mu;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(m);
    mean[ch] = static_cast<T>(mu);
    invstd[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.eps)));
    const double unbiased = sq / static_cast<double>(m - 1);
    p.running_mean[ch] = static_cast<T>((1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mu);
    p.running_var[ch] = static_cast<T>((1.0 - p.momentum) * p.running_var[ch] + p.momentum * unbiased);
  }

  Tensor<T> out(xs);
  const T* gamma = p.gamma.value().ptr();
  const T* beta = p.beta.value().ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* src = x + (o * c + ch) * inner;
      T* dst = out.ptr() + (o * c + ch) * inner;
      const T scale = gamma[ch] * invstd[ch];
      const T shift = beta[ch] - mean[ch] * scale;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] = src[i] * scale + shift;
    }

  auto gamma_v = p.gamma;
  auto beta_v = p.beta;
  return Var<T>::from_op(
      std::move(out), {input, p.gamma, p.beta},
      [input, gamma_v, beta_v, mean = std::move(mean), invstd = std::move(invstd), outer, c, inner, m,
       train](Node<T>& self) {
        const T* x = input.value().ptr();
        const T* gout = self.grad.ptr();
        const T* gamma = gamma_v.value().ptr();
        T* dx = input.requires_grad() ? input.node()->grad_buffer().ptr() : nullptr;
        T* dgamma = gamma_v.requires_grad() ? gamma_v.node()->grad_buffer().ptr() : nullptr;
        T* dbeta = beta_v.requires_grad() ? beta_v.node()->grad_buffer().ptr() : nullptr;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = x + (o * c + ch) * inner;
            const T* go = gout + (o * c + ch) * inner;
            for (std::int64_t i = 0; i < inner; ++i) {
              sum_dy += go[i];
              sum_dy_xhat += static_cast<double>(go[i]) * ((src[i] - mean[ch]) * invstd[ch]);
            }
          }
          if (dgamma) dgamma[ch] += static_cast<T>(sum_dy_xhat);
          if (dbeta) dbeta[ch] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const T scale = gamma[ch] * invstd[ch];
          const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(m));
          const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(m));
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = x + (o * c + ch) * inner;
            const T* go = gout + (o * c + ch) * inner;
            T* d = dx + (o * c + ch) * inner;
            if (train) {
              for (std::int64_t i = 0; i < inner; ++i) {
                const T xhat = (src[i] - mean[ch]) * invstd[ch];
                d[i] += scale * (go[i] - mean_dy - xhat * mean_dy_xhat);
              }
            } else {
              for (std::int64_t i = 0; i < inner; ++i) d[i] += scale * go[i];
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  Tensor<T> out(input.shape());
  const T* x = input.value().ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return Var<T>::from_op(std::move(out), {input}, [input](Node<T>& self) {
    T* dx = input.node()->grad_buffer().ptr();
    const T* x = input.value().ptr();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i)
      if (x[i] > T(0)) dx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> avg_pool2x2(const Var<T>& input) {
  const Shape& xs = input.shape();
  check_nchw(xs, "avg_pool2x2");
  require(xs[2] % 2 == 0 && xs[3] % 2 == 0, "avg_pool2x2: spatial size " + shape_str(xs) + " must be even");
  const std::int64_t planes = xs[0] * xs[1], h = xs[2], w = xs[3], ho = h / 2, wo = w / 2;
  Tensor<T> out({xs[0], xs[1], ho, wo});
  const T* x = input.value().ptr();
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const T* src = x + pl * h * w;
    T* dst = out.ptr() + pl * ho * wo;
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx) {
        const T* a = src + 2 * y * w + 2 * xx;
        dst[y * wo + xx] = (a[0] + a[1] + a[w] + a[w + 1]) * T(0.25);
      }
  }
  return Var<T>::from_op(std::move(out), {input}, [input, planes, h, w](Node<T>& self) {
    const std::int64_t ho = h / 2, wo = w / 2;
    T* dx = input.node()->grad_buffer().ptr();
    for (std::int64_t pl = 0; pl < planes; ++pl) {
      const T* go = self.grad.ptr() + pl * ho * wo;
      T* d = dx + pl * h * w;
      for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t xx = 0; xx < wo; ++xx) {
          const T v = go[y * wo + xx] * T(0.25);
          T* a = d + 2 * y * w + 2 * xx;
          a[0] += v;
          a[1] += v;
          a[w] += v;
          a[w + 1] += v;
        }
    }
  });
}

template <typename T>
Var<T> channel_concat(const std::vector<Var<T>>& inputs) {
  require(!inputs.empty(), "channel_concat: no inputs");
  const Shape& s0 = inputs.front().shape();
  check_nchw(s0, "channel_concat");
  std::int64_t total = 0;
  std::vector<std::int64_t> channels;
  for (const auto& v : inputs) {
    const Shape& s = v.shape();
    check_nchw(s, "channel_concat");
    require(s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
            "channel_concat: spatial mismatch " + shape_str(s) + " vs " + shape_str(s0));
    channels.push_back(s[1]);
    total += s[1];
  }
  const std::int64_t n_batch = s0[0], hw = s0[2] * s0[3];
  Tensor<T> out({n_batch, total, s0[2], s0[3]});
  for (std::int64_t n = 0; n < n_batch; ++n) {
    T* dst = out.ptr() + n * total * hw;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const T* src = inputs[i].value().ptr() + n * channels[i] * hw;
      dst = std::copy(src, src + channels[i] * hw, dst);
    }
  }
  return Var<T>::from_op(std::move(out), inputs, [inputs, channels, n_batch, total, hw](Node<T>& self) {
    for (std::int64_t n = 0; n < n_batch; ++n) {
      const T* src = self.grad.ptr() + n * total * hw;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::int64_t len = channels[i] * hw;
        if (inputs[i].requires_grad()) {
          T* d = inputs[i].node()->grad_buffer().ptr() + n * len;
          for (std::int64_t j = 0; j < len; ++j) d[j] += src[j];
        }
        src += len;
      }
    }
  });
}

template <typename T>
Var<T> linear_map(const Var<T>& input, const Var<T>& weight,
                  const std::type_identity_t<std::optional<Var<T>>>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 2 && ws.size() == 2, "linear_map: expected [M,D_in] input and [D_in,D_out] weight");
  require(xs[1] == ws[0], "linear_map: inner dimension mismatch " + shape_str(xs) + " x " + shape_str(ws));
  if (bias) require(bias->numel() == ws[1], "linear_map: bias length mismatch");
  const std::int64_t m = xs[0], din = ws[0], dout = ws[1];
  Tensor<T> out({m, dout});
  gemm<T>(false, false, m, dout, din, T(1), input.value().ptr(), din, weight.value().ptr(), dout, T(0), out.ptr(),
          dout);
  if (bias) {
    const T* b = bias->value().ptr();
    for (std::int64_t r = 0; r < m; ++r)
      for (std::int64_t j = 0; j < dout; ++j) out[r * dout + j] += b[j];
  }
  std::vector<Var<T>> parents{input, weight};
  if (bias) parents.push_back(*bias);
  return Var<T>::from_op(std::move(out), std::move(parents), [input, weight, bias, m, din, dout](Node<T>& self) {
    const T* g = self.grad.ptr();
    if (input.requires_grad())
      gemm<T>(false, true, m, din, dout, T(1), g, dout, weight.value().ptr(), dout, T(1),
              input.node()->grad_buffer().ptr(), din);
    if (weight.requires_grad())
      gemm<T>(true, false, din, dout, m, T(1), input.value().ptr(), din, g, dout, T(1),
              weight.node()->grad_buffer().ptr(), dout);
    if (bias && bias->requires_grad()) {
      T* db = bias->node()->grad_buffer().ptr();
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t j = 0; j < dout; ++j) db[j] += g[r * dout + j];
    }
  });
}

template <typename T>
Var<T> max_over_axis(const Var<T>& input, std::size_t axis, const std::vector<bool>* mask) {
  const Shape& xs = input.shape();
  require(axis < xs.size(), "max_over_axis: axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
  for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
  const std::int64_t len = xs[axis];
  if (mask) require(static_cast<std::int64_t>(mask->size()) == outer * len, "max_over_axis: mask size mismatch");

  Shape os;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (i != axis) os.push_back(xs[i]);
  Tensor<T> out(os);
  std::vector<std::int64_t> arg(static_cast<std::size_t>(outer * inner), -1);
  const T* x = input.value().ptr();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t l = 0; l < len; ++l) {
      if (mask && !(*mask)[static_cast<std::size_t>(o * len + l)]) continue;
      const T* src = x + (o * len + l) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        auto& a = arg[static_cast<std::size_t>(o * inner + i)];
        if (a < 0 || src[i] > out[o * inner + i]) {
          a = l;
          out[o * inner + i] = src[i];
        }
      }
    }
  return Var<T>::from_op(std::move(out), {input}, [input, arg = std::move(arg), len, inner](Node<T>& self) {
    T* dx = input.node()->grad_buffer().ptr();
    for (std::size_t j = 0; j < arg.size(); ++j) {
      if (arg[j] < 0) continue;
      const std::int64_t o = static_cast<std::int64_t>(j) / inner, i = static_cast<std::int64_t>(j) % inner;
      dx[(o * len + arg[j]) * inner + i] += self.grad[static_cast<std::int64_t>(j)];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& input, Shape shape) {
  Tensor<T> out = input.value().reshaped(std::move(shape));
  return Var<T>::from_op(std::move(out), {input}, [input](Node<T>& self) {
    T* dx = input.node()->grad_buffer().ptr();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) dx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights) {
  require(weights.numel() == input.numel(), "weighted_sum: weight count mismatch");
  T acc = T(0);
  for (std::int64_t i = 0; i < weights.numel(); ++i) acc += input.value()[i] * weights[i];
  return Var<T>::from_op(Tensor<T>({1}, std::vector<T>{acc}), {input}, [input, weights](Node<T>& self) {
    T* dx = input.node()->grad_buffer().ptr();
    const T g = self.grad[0];
    for (std::int64_t i = 0; i < weights.numel(); ++i) dx[i] += g * weights[i];
  });
}

#define DPP_INSTANTIATE_OPS(T)                                                                                \
  template struct BatchNormParams<T>;                                                                         \
  template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, T, const T*, std::int64_t,      \
                        const T*, std::int64_t, T, T*, std::int64_t);                                         \
  template Var<T> conv2d<T>(const Var<T>&, const Conv2dParams<T>&);                                           \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, int);                                     \
  template Var<T> batch_norm<T>(const Var<T>&, BatchNormParams<T>&);                                          \
  template Var<T> relu<T>(const Var<T>&);                                                                     \
  template Var<T> avg_pool2x2<T>(const Var<T>&);                                                              \
  template Var<T> channel_concat<T>(const std::vector<Var<T>>&);                                              \
  template Var<T> linear_map<T>(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&);                  \
  template Var<T> max_over_axis<T>(const Var<T>&, std::size_t, const std::vector<bool>*);                     \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                           \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

DPP_INSTANTIATE_OPS(float)
DPP_INSTANTIATE_OPS(double)

}  // namespace dpp
