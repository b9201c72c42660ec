/* Copyright 2026 The AAD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Differentiable building blocks with explicit forward/backward passes.
//
// Every layer keeps its tensors in a ParamSet owned by the enclosing module
// and refers to them by slot id. Backward passes accumulate parameter
// gradients into a ParamSet (or skip them when given nullptr, as for frozen
// teachers) and return the gradient w.r.t. the layer input.

#ifndef AAD_LAYERS_HPP_
#define AAD_LAYERS_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "aad/params.hpp"
#include "aad/rng.hpp"
#include "aad/tensor.hpp"

namespace aad {

/// Batch statistics (training) or running statistics (inference).
enum class Phase { training, inference };

template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

template <typename T>
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool has_bias = true;
  int weight = -1;
  int bias = -1;

  static Conv2d create(ParamSet<T>& ps, const std::string& name, int in, int out, int kernel,
                       int stride, bool bias = true) {
    Conv2d c;
    c.in_channels = in;
    c.out_channels = out;
    c.kernel = kernel;
    c.stride = stride;
    c.pad = kernel / 2;
    c.has_bias = bias;
    c.weight = ps.add(name + ".weight", {out, in, kernel, kernel});
    if (bias) c.bias = ps.add(name + ".bias", {out}, /*decay=*/false);
    return c;
  }

  void init(ParamSet<T>& ps, Rng& rng) const {
    const double std = std::sqrt(2.0 / (in_channels * kernel * kernel));
    for (auto& v : ps.value(weight)) v = static_cast<T>(std * rng.normal());
    if (has_bias)
      for (auto& v : ps.value(bias)) v = T(0);
  }

  int out_size(int s) const { return (s + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
  bool pointwise() const { return kernel == 1 && stride == 1; }

  Matrix<T> im2col(const Tensor<T>& x) const {
    const int oh = out_size(x.h), ow = out_size(x.w);
    const std::size_t m = static_cast<std::size_t>(x.n) * oh * ow;
    Matrix<T> cols(patch(), static_cast<Eigen::Index>(m));
    for (int ci = 0; ci < in_channels; ++ci)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          T* row = cols.data() + ((ci * kernel + ky) * kernel + kx) * m;
          for (int i = 0; i < x.n; ++i)
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky;
              T* out = row + (static_cast<std::size_t>(i) * oh + oy) * ow;
              if (iy < 0 || iy >= x.h) {
                std::fill(out, out + ow, T(0));
                continue;
              }
              const T* in = x.data.data() + x.index(i, ci, iy, 0);
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx;
                out[ox] = (ix >= 0 && ix < x.w) ? in[ix] : T(0);
              }
            }
        }
    return cols;
  }

  void col2im(const Matrix<T>& cols, Tensor<T>& dx) const {
    const int oh = out_size(dx.h), ow = out_size(dx.w);
    const std::size_t m = static_cast<std::size_t>(dx.n) * oh * ow;
    for (int ci = 0; ci < in_channels; ++ci)
      for (int ky = 0; ky < kernel; ++ky)
        for (int kx = 0; kx < kernel; ++kx) {
          const T* row = cols.data() + ((ci * kernel + ky) * kernel + kx) * m;
          for (int i = 0; i < dx.n; ++i)
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= dx.h) continue;
              const T* g = row + (static_cast<std::size_t>(i) * oh + oy) * ow;
              T* out = dx.data.data() + dx.index(i, ci, iy, 0);
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix >= 0 && ix < dx.w) out[ix] += g[ox];
              }
            }
        }
  }

  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x) const {
    if (x.c != in_channels)
      throw InvalidInput("Conv2d: expected " + std::to_string(in_channels) + " channels, got " +
                         std::to_string(x.c));
    Tensor<T> y(x.n, out_channels, out_size(x.h), out_size(x.w));
    const auto m = static_cast<Eigen::Index>(y.channel_size());
    ConstMatrixMap<T> wm(ps.value(weight).data(), out_channels, patch());
    MatrixMap<T> ym(y.data.data(), out_channels, m);
    if (pointwise()) {
      ym.noalias() = wm * ConstMatrixMap<T>(x.data.data(), in_channels, m);
    } else {
      const Matrix<T> cols = im2col(x);
      ym.noalias() = wm * cols;
    }
    if (has_bias) {
      auto b = ps.value(bias);
      for (int o = 0; o < out_channels; ++o) ym.row(o).array() += b[o];
    }
    return y;
  }

  /// `x` is the forward input; returns dL/dx (empty tensor if !need_dx).
  Tensor<T> backward(ParamSet<T>* grads, const ParamSet<T>& ps, const Tensor<T>& x,
                     const Tensor<T>& dy, bool need_dx = true) const {
    const auto m = static_cast<Eigen::Index>(dy.channel_size());
    ConstMatrixMap<T> dym(dy.data.data(), out_channels, m);
    Matrix<T> cols_storage;
    const bool pw = pointwise();
    if (grads != nullptr) {
      MatrixMap<T> dw(grads->grad(weight).data(), out_channels, patch());
      if (pw) {
        dw.noalias() += dym * ConstMatrixMap<T>(x.data.data(), in_channels, m).transpose();
      } else {
        cols_storage = im2col(x);
        dw.noalias() += dym * cols_storage.transpose();
      }
      if (has_bias) {
        auto db = grads->grad(bias);
        for (int o = 0; o < out_channels; ++o) db[o] += dym.row(o).sum();
      }
    }
    if (!need_dx) return {};
    Tensor<T> dx(x.n, x.c, x.h, x.w);
    ConstMatrixMap<T> wm(ps.value(weight).data(), out_channels, patch());
    if (pw) {
      MatrixMap<T>(dx.data.data(), in_channels, m).noalias() = wm.transpose() * dym;
    } else {
      const Matrix<T> dcols = wm.transpose() * dym;
      col2im(dcols, dx);
    }
    return dx;
  }
};

/// Per-channel batch normalization over (n, h, w).
template <typename T>
struct BatchNorm {
  int channels = 0;
  int gamma = -1;
  int beta = -1;
  int running_mean = -1;
  int running_var = -1;
  double eps = 1e-5;
  double momentum = 0.1;

  struct Cache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    Phase phase = Phase::inference;
  };

  static BatchNorm create(ParamSet<T>& ps, const std::string& name, int channels) {
    BatchNorm b;
    b.channels = channels;
    b.gamma = ps.add(name + ".gamma", {channels}, /*decay=*/false);
    b.beta = ps.add(name + ".beta", {channels}, /*decay=*/false);
    b.running_mean = ps.add_buffer(name + ".running_mean", {channels});
    b.running_var = ps.add_buffer(name + ".running_var", {channels});
    return b;
  }

  void init(ParamSet<T>& ps) const {
    for (auto& v : ps.value(gamma)) v = T(1);
    for (auto& v : ps.value(beta)) v = T(0);
    for (auto& v : ps.buffer(running_mean)) v = T(0);
    for (auto& v : ps.buffer(running_var)) v = T(1);
  }

  /// `stats` receives running-statistic updates in the training phase; may be null.
  Tensor<T> forward(const ParamSet<T>& ps, const Tensor<T>& x, Phase phase, Cache* cache,
                    ParamSet<T>* stats) const {
    if (x.c != channels) throw InvalidInput("BatchNorm: channel mismatch");
    Tensor<T> y(x.n, x.c, x.h, x.w);
    Cache local;
    Cache& c = cache ? *cache : local;
    c.phase = phase;
    c.xhat = Tensor<T>(x.n, x.c, x.h, x.w);
    c.inv_std.assign(channels, T(0));
    const auto g = ps.value(gamma);
    const auto b = ps.value(beta);
    const std::size_t m = x.channel_size();
    for (int ch = 0; ch < channels; ++ch) {
      const auto in = x.channel(ch);
      double mean, var;
      if (phase == Phase::training) {
        if (m < 2) throw InvalidInput("BatchNorm: training phase needs more than one value per channel");
        double s = 0.0;
        for (T v : in) s += v;
        mean = s / m;
        double ss = 0.0;
        for (T v : in) ss += (v - mean) * (v - mean);
        var = ss / m;
        if (stats != nullptr) {
          auto rm = stats->buffer(running_mean);
          auto rv = stats->buffer(running_var);
          rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mean);
          rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * var * m / (m - 1));
        }
      } else {
        mean = ps.buffer(running_mean)[ch];
        var = ps.buffer(running_var)[ch];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
      const T mu = static_cast<T>(mean);
      c.inv_std[ch] = inv;
      auto xh = c.xhat.channel(ch);
      auto out = y.channel(ch);
      for (std::size_t k = 0; k < m; ++k) {
        xh[k] = (in[k] - mu) * inv;
        out[k] = g[ch] * xh[k] + b[ch];
      }
    }
    return y;
  }

  Tensor<T> backward(ParamSet<T>* grads, const ParamSet<T>& ps, const Cache& c,
                     const Tensor<T>& dy) const {
    Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
    const auto g = ps.value(gamma);
    const std::size_t m = dy.channel_size();
    for (int ch = 0; ch < channels; ++ch) {
      const auto d = dy.channel(ch);
      const auto xh = c.xhat.channel(ch);
      double dgamma = 0.0, dbeta = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        dgamma += static_cast<double>(d[k]) * xh[k];
        dbeta += d[k];
      }
      if (grads != nullptr) {
        grads->grad(gamma)[ch] += static_cast<T>(dgamma);
        grads->grad(beta)[ch] += static_cast<T>(dbeta);
      }
      auto out = dx.channel(ch);
      if (c.phase == Phase::training) {
        const T scale = static_cast<T>(g[ch] * c.inv_std[ch] / static_cast<double>(m));
        const T mdb = static_cast<T>(dbeta), mdg = static_cast<T>(dgamma);
        for (std::size_t k = 0; k < m; ++k)
          out[k] = scale * (static_cast<T>(m) * d[k] - mdb - xh[k] * mdg);
      } else {
        const T scale = g[ch] * c.inv_std[ch];
        for (std::size_t k = 0; k < m; ++k) out[k] = scale * d[k];
      }
    }
    return dx;
  }
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

/// `x` is the forward input.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t k = 0; k < dx.data.size(); ++k)
    if (!(x.data[k] > T(0))) dx.data[k] = T(0);
  return dx;
}

/// Fully connected layer: y = x W^T + b, x is (batch x in).
template <typename T>
struct Linear {
  int in_features = 0;
  int out_features = 0;
  int weight = -1;
  int bias = -1;

  static Linear create(ParamSet<T>& ps, const std::string& name, int in, int out) {
    Linear l;
    l.in_features = in;
    l.out_features = out;
    l.weight = ps.add(name + ".weight", {out, in});
    l.bias = ps.add(name + ".bias", {out}, /*decay=*/false);
    return l;
  }

  void init(ParamSet<T>& ps, Rng& rng) const {
    const double std = std::sqrt(1.0 / in_features);
    for (auto& v : ps.value(weight)) v = static_cast<T>(std * rng.normal());
    for (auto& v : ps.value(bias)) v = T(0);
  }

  Matrix<T> forward(const ParamSet<T>& ps, const Matrix<T>& x) const {
    if (x.cols() != in_features) throw InvalidInput("Linear: input width mismatch");
    ConstMatrixMap<T> wm(ps.value(weight).data(), out_features, in_features);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(ps.value(bias).data(), out_features);
    Matrix<T> y = x * wm.transpose();
    y.rowwise() += b;
    return y;
  }

  Matrix<T> backward(ParamSet<T>* grads, const ParamSet<T>& ps, const Matrix<T>& x,
                     const Matrix<T>& dy) const {
    if (grads != nullptr) {
      MatrixMap<T> dw(grads->grad(weight).data(), out_features, in_features);
      dw.noalias() += dy.transpose() * x;
      auto db = grads->grad(bias);
      for (int o = 0; o < out_features; ++o) db[o] += dy.col(o).sum();
    }
    ConstMatrixMap<T> wm(ps.value(weight).data(), out_features, in_features);
    return dy * wm;
  }
};

/// Flattens each sample to (c, y, x) order: (n x c x h x w) -> (n x c*h*w).
template <typename T>
Matrix<T> flatten(const Tensor<T>& x) {
  Matrix<T> out(x.n, static_cast<Eigen::Index>(x.c * x.plane()));
  for (int ch = 0; ch < x.c; ++ch)
    for (int i = 0; i < x.n; ++i) {
      const T* src = x.data.data() + x.index(i, ch, 0, 0);
      T* dst = out.data() + static_cast<std::size_t>(i) * out.cols() + ch * x.plane();
      std::copy(src, src + x.plane(), dst);
    }
  return out;
}

template <typename T>
Tensor<T> unflatten(const Matrix<T>& m, int n, int c, int h, int w) {
  Tensor<T> x(n, c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < n; ++i) {
      const T* src = m.data() + static_cast<std::size_t>(i) * m.cols() + ch * x.plane();
      std::copy(src, src + x.plane(), x.data.data() + x.index(i, ch, 0, 0));
    }
  return x;
}

}  // namespace aad

#endif  // AAD_LAYERS_HPP_
