#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "chanloc/tensor.hpp"
#include "chanloc/threading.hpp"

namespace chanloc {

enum class Phase { train, infer };

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T epsilon = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.99);
};

template <typename T>
BatchNormParams<T> make_batchnorm_params(std::size_t channels) {
  BatchNormParams<T> p;
  p.gamma.assign(channels, T(1));
  p.beta.assign(channels, T(0));
  p.running_mean.assign(channels, T(0));
  p.running_var.assign(channels, T(1));
  return p;
}

// Batch statistics saved by the training forward pass for the backward pass.
template <typename T>
struct BatchNormCache {
  std::vector<T> mean, inv_std;
};

template <typename T>
struct BatchNormGrads {
  Tensor4<T> x;
  std::vector<T> gamma, beta;
};

namespace detail {
template <typename T>
void check_batchnorm(const Tensor4<T>& x, const BatchNormParams<T>& p) {
  if (x.empty()) throw std::invalid_argument("batchnorm: empty batch");
  if (p.gamma.size() != x.c() || p.beta.size() != x.c() || p.running_mean.size() != x.c() ||
      p.running_var.size() != x.c())
    throw std::invalid_argument("batchnorm: parameter length does not match channel count");
}
}  // namespace detail

// Per-channel normalization. Train mode normalizes by biased batch statistics
// over (n, h, w) and folds them into the running estimates; infer mode uses
// the running estimates. Channel reductions are sequential per channel, so
// results are identical for any thread budget.
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BatchNormParams<T>& p, Phase phase,
                             BatchNormCache<T>* cache = nullptr) {
  detail::check_batchnorm(x, p);
  const std::size_t m = x.n() * x.plane_size();
  if (phase == Phase::train && m < 2)
    throw std::invalid_argument("batchnorm: train mode needs >= 2 values per channel");

  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  if (cache) {
    cache->mean.assign(x.c(), T(0));
    cache->inv_std.assign(x.c(), T(0));
  }

  parallel_for(x.c(), [&](std::size_t c) {
    T mean, var;
    if (phase == Phase::train) {
      T sum = T(0);
      for (std::size_t n = 0; n < x.n(); ++n) {
        const T* in = x.plane(n, c);
        for (std::size_t i = 0; i < x.plane_size(); ++i) sum += in[i];
      }
      mean = sum / static_cast<T>(m);
      T sq = T(0);
      for (std::size_t n = 0; n < x.n(); ++n) {
        const T* in = x.plane(n, c);
        for (std::size_t i = 0; i < x.plane_size(); ++i) {
          const T d = in[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(m);
      p.running_mean[c] = p.momentum * p.running_mean[c] + (T(1) - p.momentum) * mean;
      p.running_var[c] = p.momentum * p.running_var[c] + (T(1) - p.momentum) * var;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const T inv_std = T(1) / std::sqrt(var + p.epsilon);
    if (cache) {
      cache->mean[c] = mean;
      cache->inv_std[c] = inv_std;
    }
    const T g = p.gamma[c], b = p.beta[c];
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* in = x.plane(n, c);
      T* out = y.plane(n, c);
      for (std::size_t i = 0; i < x.plane_size(); ++i) out[i] = g * (in[i] - mean) * inv_std + b;
    }
  });
  return y;
}

// Gradients through the train-mode normalization (batch statistics are
// functions of x, so the mean/variance paths are included).
template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& x, const BatchNormParams<T>& p,
                                     const BatchNormCache<T>& cache, const Tensor4<T>& grad_out) {
  detail::check_batchnorm(x, p);
  if (!grad_out.same_shape(x)) throw std::invalid_argument("batchnorm_backward: shape mismatch");
  const T m = static_cast<T>(x.n() * x.plane_size());

  BatchNormGrads<T> grads;
  grads.x = Tensor4<T>(x.n(), x.c(), x.h(), x.w());
  grads.gamma.assign(x.c(), T(0));
  grads.beta.assign(x.c(), T(0));

  parallel_for(x.c(), [&](std::size_t c) {
    const T mean = cache.mean[c], inv_std = cache.inv_std[c];
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* in = x.plane(n, c);
      const T* go = grad_out.plane(n, c);
      for (std::size_t i = 0; i < x.plane_size(); ++i) {
        const T xhat = (in[i] - mean) * inv_std;
        sum_dy += go[i];
        sum_dy_xhat += go[i] * xhat;
      }
    }
    grads.beta[c] = sum_dy;
    grads.gamma[c] = sum_dy_xhat;
    const T scale = p.gamma[c] * inv_std / m;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* in = x.plane(n, c);
      const T* go = grad_out.plane(n, c);
      T* gx = grads.x.plane(n, c);
      for (std::size_t i = 0; i < x.plane_size(); ++i) {
        const T xhat = (in[i] - mean) * inv_std;
        gx[i] = scale * (m * go[i] - sum_dy - xhat * sum_dy_xhat);
      }
    }
  });
  return grads;
}

}  // namespace chanloc
