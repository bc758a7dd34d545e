#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "chanloc/tensor.hpp"
#include "chanloc/threading.hpp"

namespace chanloc {

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Padding { valid, same };

// 2-D cross-correlation weights. kernels is (out_c, in_c, kh, kw).
template <typename T>
struct ConvParams {
  Tensor4<T> kernels;
  std::vector<T> bias;
  std::size_t stride = 1;
  Padding padding = Padding::valid;

  std::size_t out_channels() const { return kernels.n(); }
  std::size_t in_channels() const { return kernels.c(); }
  std::size_t kh() const { return kernels.h(); }
  std::size_t kw() const { return kernels.w(); }
};

template <typename T>
struct ConvGrads {
  Tensor4<T> x;
  Tensor4<T> kernels;
  std::vector<T> bias;
};

struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0;
  // Same padding splits the k-1 total asymmetrically: floor((k-1)/2) before,
  // ceil((k-1)/2) after. Required for the even strand kernels (2, 4, 8, 16).
  std::ptrdiff_t pad_top = 0, pad_left = 0;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor4<T>& x, const ConvParams<T>& p) {
  if (p.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (p.in_channels() != x.c())
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(p.in_channels()) +
                                " input channels, got " + std::to_string(x.c()));
  if (p.bias.size() != p.out_channels())
    throw std::invalid_argument("conv2d: bias length does not match out_channels");

  ConvGeometry g;
  if (p.padding == Padding::same) {
    g.pad_top = static_cast<std::ptrdiff_t>((p.kh() - 1) / 2);
    g.pad_left = static_cast<std::ptrdiff_t>((p.kw() - 1) / 2);
    g.out_h = (x.h() - 1) / p.stride + 1;
    g.out_w = (x.w() - 1) / p.stride + 1;
  } else {
    if (p.kh() > x.h() || p.kw() > x.w())
      throw std::invalid_argument("conv2d: kernel larger than (padded) input");
    g.out_h = (x.h() - p.kh()) / p.stride + 1;
    g.out_w = (x.w() - p.kw()) / p.stride + 1;
  }
  return g;
}

namespace detail {

// Gathers the receptive field of every output position of one sample into a
// (K, P) column-major buffer; K = in_c*kh*kw in (ic, u, v) order, P = out
// positions in row-major order. Out-of-range taps are zero.
template <typename T>
void im2col(const Tensor4<T>& x, std::size_t n, const ConvParams<T>& p, const ConvGeometry& g,
            T* cols) {
  const std::size_t in_c = x.c(), kh = p.kh(), kw = p.kw();
  const std::size_t K = in_c * kh * kw;
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(x.h());
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(x.w());
  std::size_t pos = 0;
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow, ++pos) {
      T* col = cols + pos * K;
      std::size_t k = 0;
      for (std::size_t ic = 0; ic < in_c; ++ic) {
        const T* plane = x.plane(n, ic);
        for (std::size_t u = 0; u < kh; ++u) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride + u) - g.pad_top;
          for (std::size_t v = 0; v < kw; ++v, ++k) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + v) - g.pad_left;
            col[k] = (ih >= 0 && ih < H && iw >= 0 && iw < W) ? plane[ih * W + iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-adds a (K, P) gradient buffer back onto one sample of grad_x.
template <typename T>
void col2im_add(const T* cols, std::size_t n, const ConvParams<T>& p, const ConvGeometry& g,
                Tensor4<T>& grad_x) {
  const std::size_t in_c = grad_x.c(), kh = p.kh(), kw = p.kw();
  const std::size_t K = in_c * kh * kw;
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(grad_x.h());
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(grad_x.w());
  std::size_t pos = 0;
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow, ++pos) {
      const T* col = cols + pos * K;
      std::size_t k = 0;
      for (std::size_t ic = 0; ic < in_c; ++ic) {
        T* plane = grad_x.plane(n, ic);
        for (std::size_t u = 0; u < kh; ++u) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride + u) - g.pad_top;
          for (std::size_t v = 0; v < kw; ++v, ++k) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + v) - g.pad_left;
            if (ih >= 0 && ih < H && iw >= 0 && iw < W) plane[ih * W + iw] += col[k];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Standard cross-correlation. Each output element accumulates its taps
// sequentially in (in_c, kh, kw) order, so the result is bit-identical to a
// literal nested-loop evaluation.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p) {
  const ConvGeometry g = conv_geometry(x, p);
  const std::size_t out_c = p.out_channels();
  const std::size_t K = p.in_channels() * p.kh() * p.kw();
  const std::size_t P = g.out_h * g.out_w;
  Tensor4<T> y(x.n(), out_c, g.out_h, g.out_w);

  parallel_chunks(x.n(), [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<T> cols(K * P);
    for (std::size_t n = begin; n < end; ++n) {
      detail::im2col(x, n, p, g, cols.data());
      const T* weights = p.kernels.data().data();
      T* out = y.sample(n);
      for (std::size_t oc = 0; oc < out_c; ++oc) {
        const T* wrow = weights + oc * K;
        const T b = p.bias[oc];
        for (std::size_t pos = 0; pos < P; ++pos) {
          const T* col = cols.data() + pos * K;
          T acc = T(0);
          for (std::size_t k = 0; k < K; ++k) acc += wrow[k] * col[k];
          out[oc * P + pos] = acc + b;
        }
      }
    }
  });
  return y;
}

// Analytic gradients of conv2d_forward w.r.t. input, kernels and bias.
// Weight/bias gradients accumulate per chunk and reduce in chunk order; in
// strict-sequential mode this is a plain sequential sum.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p,
                             const Tensor4<T>& grad_out) {
  const ConvGeometry g = conv_geometry(x, p);
  const std::size_t out_c = p.out_channels();
  const std::size_t K = p.in_channels() * p.kh() * p.kw();
  const std::size_t P = g.out_h * g.out_w;
  if (grad_out.n() != x.n() || grad_out.c() != out_c || grad_out.h() != g.out_h ||
      grad_out.w() != g.out_w)
    throw std::invalid_argument("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                                " does not match forward output");

  ConvGrads<T> grads;
  grads.x = Tensor4<T>(x.n(), x.c(), x.h(), x.w());
  grads.kernels = Tensor4<T>(out_c, p.in_channels(), p.kh(), p.kw());
  grads.bias.assign(out_c, T(0));

  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::Map<const MatrixX<T>> wmat(p.kernels.data().data(), out_c, K);

  const std::size_t chunks = chunk_count(x.n());
  std::vector<Mat> gw_parts(chunks, Mat::Zero(out_c, K));
  std::vector<VectorX<T>> gb_parts(chunks, VectorX<T>::Zero(out_c));

  parallel_chunks(x.n(), [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    std::vector<T> cols_buf(K * P);
    Mat gcols(K, P);
    for (std::size_t n = begin; n < end; ++n) {
      detail::im2col(x, n, p, g, cols_buf.data());
      Eigen::Map<const Mat> cols(cols_buf.data(), K, P);
      Eigen::Map<const MatrixX<T>> go(grad_out.sample(n), out_c, P);
      gw_parts[chunk].noalias() += go * cols.transpose();
      gb_parts[chunk] += go.rowwise().sum();
      gcols.noalias() = wmat.transpose() * go;
      detail::col2im_add(gcols.data(), n, p, g, grads.x);
    }
  });

  Eigen::Map<MatrixX<T>> gw(grads.kernels.data().data(), out_c, K);
  Eigen::Map<VectorX<T>> gb(grads.bias.data(), out_c);
  for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
    gw += gw_parts[chunk];
    gb += gb_parts[chunk];
  }
  return grads;
}

}  // namespace chanloc
