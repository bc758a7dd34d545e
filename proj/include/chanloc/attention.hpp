#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "chanloc/activations.hpp"
#include "chanloc/conv.hpp"
#include "chanloc/rng.hpp"
#include "chanloc/tensor.hpp"

namespace chanloc {

// Gate override hook: identity forces the per-channel gate to exactly 1 so a
// block degenerates to a pass-through (used by the equivalence tests).
enum class GateMode { learned, identity };

// Per-sample channel descriptor: global average and global maximum over the
// spatial positions of each channel, stacked as a 2 x C matrix (avg row 0,
// max row 1). Stored batched as two (n, C) matrices.
template <typename T>
struct DescriptorBatch {
  MatrixX<T> avg;
  MatrixX<T> max;

  std::size_t batch() const { return static_cast<std::size_t>(avg.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(avg.cols()); }

  // The 2 x C stacked view of one sample.
  MatrixX<T> stacked(std::size_t n) const {
    MatrixX<T> d(2, avg.cols());
    d.row(0) = avg.row(static_cast<Eigen::Index>(n));
    d.row(1) = max.row(static_cast<Eigen::Index>(n));
    return d;
  }
};

template <typename T>
DescriptorBatch<T> build_descriptor(const Tensor4<T>& x) {
  DescriptorBatch<T> d;
  d.avg.resize(x.n(), x.c());
  d.max.resize(x.n(), x.c());
  const T inv_area = T(1) / static_cast<T>(x.plane_size());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* plane = x.plane(n, c);
      T sum = plane[0], mx = plane[0];
      for (std::size_t i = 1; i < x.plane_size(); ++i) {
        sum += plane[i];
        if (plane[i] > mx) mx = plane[i];
      }
      d.avg(n, c) = sum * inv_area;
      d.max(n, c) = mx;
    }
  }
  return d;
}

// Backward of build_descriptor: the average spreads uniformly; the max routes
// to its argmax cell (first occurrence in row-major order on ties).
template <typename T>
Tensor4<T> descriptor_backward(const Tensor4<T>& x, const MatrixX<T>& grad_avg,
                               const MatrixX<T>& grad_max) {
  Tensor4<T> gx(x.n(), x.c(), x.h(), x.w());
  const T inv_area = T(1) / static_cast<T>(x.plane_size());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* plane = x.plane(n, c);
      std::size_t arg = 0;
      for (std::size_t i = 1; i < x.plane_size(); ++i)
        if (plane[i] > plane[arg]) arg = i;
      T* g = gx.plane(n, c);
      const T ga = grad_avg(n, c) * inv_area;
      for (std::size_t i = 0; i < x.plane_size(); ++i) g[i] = ga;
      g[arg] += grad_max(n, c);
    }
  }
  return gx;
}

// C-Local block weights. Stage 1 applies F filters of size 2x1 across the
// stacked avg/max rows (a pure linear combination, no nonlinearity); stage 2
// slides one kernel of length L along the channel strand, summing over the F
// maps, same padding with zero fill.
template <typename T>
struct CLocalParams {
  std::size_t channels = 0;
  MatrixX<T> stage1_w;   // (F, 2): column 0 weights the avg row, column 1 the max row
  VectorX<T> stage1_b;   // (F)
  MatrixX<T> stage2_w;   // (L, F)
  T stage2_b = T(0);

  std::size_t filters() const { return static_cast<std::size_t>(stage1_w.rows()); }
  std::size_t kernel_len() const { return static_cast<std::size_t>(stage2_w.rows()); }
};

template <typename T>
struct SEParams {
  MatrixX<T> w1;  // (C/8, C)
  VectorX<T> b1;
  MatrixX<T> w2;  // (C, C/8)
  VectorX<T> b2;

  std::size_t channels() const { return static_cast<std::size_t>(w2.rows()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
};

struct CLocalShape {
  std::size_t filters;     // F
  std::size_t kernel_len;  // L
};

// Table rule: F = C/4 stage-1 filters, stage-2 kernel length L = C/8. Both
// ratios are knobs; strand_ratio = 4 selects the prose variant.
inline CLocalShape clocal_shape_rule(std::size_t channels, std::size_t strand_ratio = 8,
                                     std::size_t combine_ratio = 4) {
  if (channels == 0 || channels % 8 != 0)
    throw std::invalid_argument("clocal_shape_rule: channel count must be divisible by 8");
  if (strand_ratio == 0 || combine_ratio == 0 || channels % strand_ratio != 0 ||
      channels % combine_ratio != 0)
    throw std::invalid_argument("clocal_shape_rule: ratios must divide the channel count");
  return {channels / combine_ratio, channels / strand_ratio};
}

template <typename T>
CLocalParams<T> make_clocal_params(std::size_t channels, Rng& rng, std::size_t strand_ratio = 8,
                                   std::size_t combine_ratio = 4) {
  const CLocalShape s = clocal_shape_rule(channels, strand_ratio, combine_ratio);
  CLocalParams<T> p;
  p.channels = channels;
  p.stage1_w.resize(s.filters, 2);
  p.stage1_b = VectorX<T>::Zero(s.filters);
  p.stage2_w.resize(s.kernel_len, s.filters);
  p.stage2_b = T(0);
  he_normal_fill(std::span<T>(p.stage1_w.data(), p.stage1_w.size()), 2, rng);
  he_normal_fill(std::span<T>(p.stage2_w.data(), p.stage2_w.size()), s.kernel_len * s.filters,
                 rng);
  return p;
}

template <typename T>
SEParams<T> make_se_params(std::size_t channels, Rng& rng) {
  if (channels == 0 || channels % 8 != 0)
    throw std::invalid_argument("make_se_params: channel count must be divisible by 8");
  const std::size_t hidden = channels / 8;
  SEParams<T> p;
  p.w1.resize(hidden, channels);
  p.b1 = VectorX<T>::Zero(hidden);
  p.w2.resize(channels, hidden);
  p.b2 = VectorX<T>::Zero(channels);
  he_normal_fill(std::span<T>(p.w1.data(), p.w1.size()), channels, rng);
  he_normal_fill(std::span<T>(p.w2.data(), p.w2.size()), hidden, rng);
  return p;
}

template <typename T>
std::size_t param_count(const CLocalParams<T>& p) {
  return static_cast<std::size_t>(p.stage1_w.size() + p.stage1_b.size() + p.stage2_w.size()) + 1;
}

template <typename T>
std::size_t param_count(const SEParams<T>& p) {
  return static_cast<std::size_t>(p.w1.size() + p.b1.size() + p.w2.size() + p.b2.size());
}

// Stage 1: out[c][f] = w[f][0]*avg[c] + w[f][1]*max[c] + b[f]. One (C, F) map
// per sample.
template <typename T>
std::vector<MatrixX<T>> combine_stage1(const DescriptorBatch<T>& d, const MatrixX<T>& stage1_w,
                                       const VectorX<T>& stage1_b) {
  if (stage1_w.cols() != 2 || stage1_b.size() != stage1_w.rows())
    throw std::invalid_argument("combine_stage1: filter bank must be (F, 2) with F biases");
  const std::size_t C = d.channels();
  const std::size_t F = static_cast<std::size_t>(stage1_w.rows());
  std::vector<MatrixX<T>> maps(d.batch());
  for (std::size_t n = 0; n < d.batch(); ++n) {
    MatrixX<T>& m = maps[n];
    m.resize(C, F);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t f = 0; f < F; ++f)
        m(c, f) = stage1_w(f, 0) * d.avg(n, c) + stage1_w(f, 1) * d.max(n, c) + stage1_b(f);
  }
  return maps;
}

template <typename T>
struct Stage1Grads {
  MatrixX<T> avg, max;    // (n, C) each
  MatrixX<T> weight;      // (F, 2)
  VectorX<T> bias;        // (F)
};

template <typename T>
Stage1Grads<T> combine_stage1_backward(const DescriptorBatch<T>& d, const MatrixX<T>& stage1_w,
                                       const std::vector<MatrixX<T>>& grad_maps) {
  if (grad_maps.size() != d.batch())
    throw std::invalid_argument("combine_stage1_backward: batch mismatch");
  const std::size_t C = d.channels();
  const Eigen::Index F = stage1_w.rows();
  Stage1Grads<T> g;
  g.avg = MatrixX<T>::Zero(d.batch(), C);
  g.max = MatrixX<T>::Zero(d.batch(), C);
  g.weight = MatrixX<T>::Zero(F, 2);
  g.bias = VectorX<T>::Zero(F);
  for (std::size_t n = 0; n < d.batch(); ++n) {
    const MatrixX<T>& gm = grad_maps[n];
    for (std::size_t c = 0; c < C; ++c) {
      T dav = T(0), dmx = T(0);
      for (Eigen::Index f = 0; f < F; ++f) {
        const T dm = gm(c, f);
        g.weight(f, 0) += dm * d.avg(n, c);
        g.weight(f, 1) += dm * d.max(n, c);
        g.bias(f) += dm;
        dav += dm * stage1_w(f, 0);
        dmx += dm * stage1_w(f, 1);
      }
      g.avg(n, c) = dav;
      g.max(n, c) = dmx;
    }
  }
  return g;
}

namespace detail {
inline std::ptrdiff_t strand_pad_before(std::size_t kernel_len) {
  return static_cast<std::ptrdiff_t>((kernel_len - 1) / 2);
}
}  // namespace detail

// Stage 2: 1-D cross-correlation of one kernel along the channel strand,
// summing over all F maps. Same padding (zero fill, even-kernel asymmetry)
// keeps the output length at C. Taps accumulate sequentially in (j, f) order.
template <typename T>
VectorX<T> strand_conv_stage2(const MatrixX<T>& m, const MatrixX<T>& stage2_w, T stage2_b) {
  const std::ptrdiff_t C = m.rows();
  const std::ptrdiff_t L = stage2_w.rows();
  const std::ptrdiff_t F = stage2_w.cols();
  if (F != m.cols()) throw std::invalid_argument("strand_conv_stage2: map count mismatch");
  if (L > C) throw std::invalid_argument("strand_conv_stage2: kernel longer than strand");
  const std::ptrdiff_t pad = detail::strand_pad_before(static_cast<std::size_t>(L));
  VectorX<T> out(C);
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (std::ptrdiff_t j = 0; j < L; ++j) {
      const std::ptrdiff_t src = c + j - pad;
      if (src < 0 || src >= C) continue;
      for (std::ptrdiff_t f = 0; f < F; ++f) acc += stage2_w(j, f) * m(src, f);
    }
    out(c) = acc + stage2_b;
  }
  return out;
}

template <typename T>
struct StrandGrads {
  MatrixX<T> m, weight;
  T bias;
};

template <typename T>
StrandGrads<T> strand_conv_stage2_backward(const MatrixX<T>& m, const MatrixX<T>& stage2_w,
                                           const VectorX<T>& grad_out) {
  const std::ptrdiff_t C = m.rows();
  const std::ptrdiff_t L = stage2_w.rows();
  const std::ptrdiff_t F = stage2_w.cols();
  if (grad_out.size() != C) throw std::invalid_argument("strand backward: shape mismatch");
  const std::ptrdiff_t pad = detail::strand_pad_before(static_cast<std::size_t>(L));
  StrandGrads<T> g;
  g.m = MatrixX<T>::Zero(C, F);
  g.weight = MatrixX<T>::Zero(L, F);
  g.bias = grad_out.sum();
  for (std::ptrdiff_t c = 0; c < C; ++c) {
    for (std::ptrdiff_t j = 0; j < L; ++j) {
      const std::ptrdiff_t src = c + j - pad;
      if (src < 0 || src >= C) continue;
      for (std::ptrdiff_t f = 0; f < F; ++f) {
        g.weight(j, f) += grad_out(c) * m(src, f);
        g.m(src, f) += grad_out(c) * stage2_w(j, f);
      }
    }
  }
  return g;
}

// y[n,c,h,w] = x[n,c,h,w] * sigmoid(pre_gate[n,c]).
template <typename T>
Tensor4<T> gate_and_scale(const Tensor4<T>& x, const MatrixX<T>& pre_gate) {
  if (pre_gate.rows() != static_cast<Eigen::Index>(x.n()) ||
      pre_gate.cols() != static_cast<Eigen::Index>(x.c()))
    throw std::invalid_argument("gate_and_scale: pre_gate shape mismatch");
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T g = sigmoid_value(pre_gate(n, c));
      const T* in = x.plane(n, c);
      T* out = y.plane(n, c);
      for (std::size_t i = 0; i < x.plane_size(); ++i) out[i] = in[i] * g;
    }
  }
  return y;
}

template <typename T>
struct GateScaleGrads {
  Tensor4<T> x;
  MatrixX<T> pre_gate;
};

template <typename T>
GateScaleGrads<T> gate_and_scale_backward(const Tensor4<T>& x, const MatrixX<T>& pre_gate,
                                          const Tensor4<T>& grad_out) {
  if (!grad_out.same_shape(x)) throw std::invalid_argument("gate_and_scale_backward: shape mismatch");
  GateScaleGrads<T> grads;
  grads.x = Tensor4<T>(x.n(), x.c(), x.h(), x.w());
  grads.pre_gate.resize(pre_gate.rows(), pre_gate.cols());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T g = sigmoid_value(pre_gate(n, c));
      const T* in = x.plane(n, c);
      const T* go = grad_out.plane(n, c);
      T* gx = grads.x.plane(n, c);
      T dgate = T(0);
      for (std::size_t i = 0; i < x.plane_size(); ++i) {
        gx[i] = go[i] * g;
        dgate += go[i] * in[i];
      }
      grads.pre_gate(n, c) = dgate * g * (T(1) - g);
    }
  }
  return grads;
}

// Pre-sigmoid gate values of the C-Local block, one row per sample.
template <typename T>
MatrixX<T> clocal_pre_gate(const Tensor4<T>& x, const CLocalParams<T>& p) {
  if (x.c() != p.channels)
    throw std::invalid_argument("clocal: input has " + std::to_string(x.c()) +
                                " channels, params expect " + std::to_string(p.channels));
  const DescriptorBatch<T> d = build_descriptor(x);
  const std::vector<MatrixX<T>> maps = combine_stage1(d, p.stage1_w, p.stage1_b);
  MatrixX<T> pre(x.n(), x.c());
  for (std::size_t n = 0; n < x.n(); ++n)
    pre.row(n) = strand_conv_stage2(maps[n], p.stage2_w, p.stage2_b).transpose();
  return pre;
}

// Post-sigmoid gates, for inspection and the locality tests.
template <typename T>
MatrixX<T> clocal_gate(const Tensor4<T>& x, const CLocalParams<T>& p) {
  MatrixX<T> g = clocal_pre_gate(x, p);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = sigmoid_value(g.data()[i]);
  return g;
}

template <typename T>
Tensor4<T> clocal_forward(const Tensor4<T>& x, const CLocalParams<T>& p,
                          GateMode gate = GateMode::learned) {
  if (gate == GateMode::identity) {
    if (x.c() != p.channels) throw std::invalid_argument("clocal: channel mismatch");
    return x;
  }
  return gate_and_scale(x, clocal_pre_gate(x, p));
}

template <typename T>
struct CLocalGrads {
  Tensor4<T> x;
  MatrixX<T> stage1_w;
  VectorX<T> stage1_b;
  MatrixX<T> stage2_w;
  T stage2_b = T(0);
};

// Exact gradients through descriptor (mean spreads uniformly, max routes to
// its argmax), both stages, the sigmoid and both factors of the scale.
template <typename T>
CLocalGrads<T> clocal_backward(const Tensor4<T>& x, const CLocalParams<T>& p,
                               const Tensor4<T>& grad_out) {
  if (!grad_out.same_shape(x)) throw std::invalid_argument("clocal_backward: shape mismatch");
  const DescriptorBatch<T> d = build_descriptor(x);
  const std::vector<MatrixX<T>> maps = combine_stage1(d, p.stage1_w, p.stage1_b);
  MatrixX<T> pre(x.n(), x.c());
  for (std::size_t n = 0; n < x.n(); ++n)
    pre.row(n) = strand_conv_stage2(maps[n], p.stage2_w, p.stage2_b).transpose();

  const GateScaleGrads<T> gs = gate_and_scale_backward(x, pre, grad_out);

  CLocalGrads<T> grads;
  grads.x = gs.x;  // direct gate factor; descriptor path added below
  grads.stage1_w = MatrixX<T>::Zero(p.stage1_w.rows(), 2);
  grads.stage1_b = VectorX<T>::Zero(p.stage1_b.size());
  grads.stage2_w = MatrixX<T>::Zero(p.stage2_w.rows(), p.stage2_w.cols());
  grads.stage2_b = T(0);

  std::vector<MatrixX<T>> grad_maps(x.n());
  for (std::size_t n = 0; n < x.n(); ++n) {
    const VectorX<T> grad_pre = gs.pre_gate.row(n).transpose();
    StrandGrads<T> sg = strand_conv_stage2_backward(maps[n], p.stage2_w, grad_pre);
    grads.stage2_w += sg.weight;
    grads.stage2_b += sg.bias;
    grad_maps[n] = std::move(sg.m);
  }
  const Stage1Grads<T> s1 = combine_stage1_backward(d, p.stage1_w, grad_maps);
  grads.stage1_w = s1.weight;
  grads.stage1_b = s1.bias;

  const Tensor4<T> desc_grad = descriptor_backward(x, s1.avg, s1.max);
  for (std::size_t i = 0; i < grads.x.size(); ++i) grads.x.data()[i] += desc_grad.data()[i];
  return grads;
}

// Pre-sigmoid gate of the SE baseline: W2 relu(W1 gap(x) + b1) + b2.
template <typename T>
MatrixX<T> se_pre_gate(const Tensor4<T>& x, const SEParams<T>& p) {
  if (x.c() != p.channels())
    throw std::invalid_argument("se: input has " + std::to_string(x.c()) +
                                " channels, params expect " + std::to_string(p.channels()));
  const DescriptorBatch<T> d = build_descriptor(x);
  MatrixX<T> hidden = d.avg * p.w1.transpose();
  hidden.rowwise() += p.b1.transpose();
  hidden = hidden.cwiseMax(T(0));
  MatrixX<T> pre = hidden * p.w2.transpose();
  pre.rowwise() += p.b2.transpose();
  return pre;
}

template <typename T>
MatrixX<T> se_gate(const Tensor4<T>& x, const SEParams<T>& p) {
  MatrixX<T> g = se_pre_gate(x, p);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = sigmoid_value(g.data()[i]);
  return g;
}

template <typename T>
Tensor4<T> se_forward(const Tensor4<T>& x, const SEParams<T>& p,
                      GateMode gate = GateMode::learned) {
  if (gate == GateMode::identity) {
    if (x.c() != p.channels()) throw std::invalid_argument("se: channel mismatch");
    return x;
  }
  return gate_and_scale(x, se_pre_gate(x, p));
}

template <typename T>
struct SEGrads {
  Tensor4<T> x;
  MatrixX<T> w1, w2;
  VectorX<T> b1, b2;
};

template <typename T>
SEGrads<T> se_backward(const Tensor4<T>& x, const SEParams<T>& p, const Tensor4<T>& grad_out) {
  if (!grad_out.same_shape(x)) throw std::invalid_argument("se_backward: shape mismatch");
  const DescriptorBatch<T> d = build_descriptor(x);
  MatrixX<T> hidden_pre = d.avg * p.w1.transpose();
  hidden_pre.rowwise() += p.b1.transpose();
  const MatrixX<T> hidden = hidden_pre.cwiseMax(T(0));
  MatrixX<T> pre = hidden * p.w2.transpose();
  pre.rowwise() += p.b2.transpose();

  const GateScaleGrads<T> gs = gate_and_scale_backward(x, pre, grad_out);

  SEGrads<T> grads;
  grads.x = gs.x;
  grads.w2 = gs.pre_gate.transpose() * hidden;
  grads.b2 = gs.pre_gate.colwise().sum().transpose();
  MatrixX<T> grad_hidden = gs.pre_gate * p.w2;
  for (Eigen::Index i = 0; i < grad_hidden.size(); ++i)
    if (hidden_pre.data()[i] <= T(0)) grad_hidden.data()[i] = T(0);
  grads.w1 = grad_hidden.transpose() * d.avg;
  grads.b1 = grad_hidden.colwise().sum().transpose();
  const MatrixX<T> grad_avg = grad_hidden * p.w1;
  const MatrixX<T> grad_max = MatrixX<T>::Zero(grad_avg.rows(), grad_avg.cols());
  const Tensor4<T> desc_grad = descriptor_backward(x, grad_avg, grad_max);
  for (std::size_t i = 0; i < grads.x.size(); ++i) grads.x.data()[i] += desc_grad.data()[i];
  return grads;
}

}  // namespace chanloc
