#include "chanloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "chanloc/activations.hpp"
#include "chanloc/attention.hpp"
#include "chanloc/batchnorm.hpp"
#include "chanloc/conv.hpp"
#include "chanloc/dense.hpp"
#include "chanloc/pool.hpp"
#include "chanloc/rng.hpp"
#include "chanloc/tensor.hpp"

namespace chanloc {

GradReport compare_gradients(const std::string& op, const std::string& tensor,
                             const std::vector<double>& analytic,
                             const std::vector<double>& numeric, double tol) {
  GradReport r;
  r.op = op;
  r.worst_tensor = tensor;
  r.tolerance = tol;
  if (analytic.size() != numeric.size()) {
    r.max_rel_err = std::numeric_limits<double>::infinity();
    r.pass = false;
    return r;
  }
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(n)});
    const double rel = std::abs(a - n) / denom;
    if (rel > r.max_rel_err) {
      r.max_rel_err = rel;
      r.worst_index = i;
    }
  }
  r.pass = r.max_rel_err < tol;
  return r;
}

GradReport merge_reports(const std::string& op, const std::vector<GradReport>& parts) {
  GradReport r;
  r.op = op;
  r.pass = true;
  for (const GradReport& p : parts) {
    r.tolerance = p.tolerance;
    if (p.max_rel_err >= r.max_rel_err) {
      r.max_rel_err = p.max_rel_err;
      r.worst_tensor = p.worst_tensor;
      r.worst_index = p.worst_index;
    }
    r.pass = r.pass && p.pass;
  }
  return r;
}

namespace {

using Vec = std::vector<double>;
using Mat = MatrixX<double>;
using Col = VectorX<double>;

Vec draw(Rng& rng, std::size_t n) {
  Vec v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

Tensor4d draw_tensor(Rng& rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return Tensor4d(n, c, h, w, draw(rng, n * c * h * w));
}

Mat draw_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

Col draw_col(Rng& rng, Eigen::Index n) {
  Col v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
  return v;
}

// No relu input within `gap` of the kink at 0.
void relu_safe(Vec& v, Rng& rng, double gap = 1e-3) {
  for (double& x : v)
    while (std::abs(x) < gap) x = rng.uniform(-1.0, 1.0);
}

// No two values of any 2x2 pooling window within `gap` of each other.
void pool_tie_free(Tensor4d& x, Rng& rng, double gap = 1e-3) {
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      double* plane = x.plane(n, c);
      for (std::size_t i = 0; i + 1 < x.h(); i += 2)
        for (std::size_t j = 0; j + 1 < x.w(); j += 2) {
          double* cell[4] = {&plane[i * x.w() + j], &plane[i * x.w() + j + 1],
                             &plane[(i + 1) * x.w() + j], &plane[(i + 1) * x.w() + j + 1]};
          bool ok = false;
          while (!ok) {
            ok = true;
            for (int a = 0; a < 4 && ok; ++a)
              for (int b = a + 1; b < 4 && ok; ++b)
                if (std::abs(*cell[a] - *cell[b]) < gap) ok = false;
            if (!ok)
              for (int a = 0; a < 4; ++a) *cell[a] = rng.uniform(-1.0, 1.0);
          }
        }
    }
}

// Top-2 gap of every channel plane at least `gap`, so the global-max argmax
// is stable under finite-difference nudges.
void max_tie_free(Tensor4d& x, Rng& rng, double gap = 1e-3) {
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      double* plane = x.plane(n, c);
      const std::size_t m = x.plane_size();
      for (;;) {
        double top = -1e30, second = -1e30;
        for (std::size_t i = 0; i < m; ++i) {
          if (plane[i] > top) {
            second = top;
            top = plane[i];
          } else if (plane[i] > second) {
            second = plane[i];
          }
        }
        if (m == 1 || top - second >= gap) break;
        for (std::size_t i = 0; i < m; ++i) plane[i] = rng.uniform(-1.0, 1.0);
      }
    }
}

double dot(const Vec& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec mat_flat(const Mat& m) { return Vec(m.data(), m.data() + m.size()); }
Vec col_flat(const Col& v) { return Vec(v.data(), v.data() + v.size()); }

GradReport conv_check(const std::string& name, std::uint64_t seed, double tol, std::size_t n,
                      std::size_t in_c, std::size_t h, std::size_t w, std::size_t out_c,
                      std::size_t kh, std::size_t kw, std::size_t stride, Padding pad) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, n, in_c, h, w);
  ConvParams<double> p;
  p.kernels = draw_tensor(rng, out_c, in_c, kh, kw);
  p.bias = draw(rng, out_c);
  p.stride = stride;
  p.padding = pad;

  const Tensor4d y0 = conv2d_forward(x, p);
  const Vec u = draw(rng, y0.size());
  Tensor4d cotangent(y0.n(), y0.c(), y0.h(), y0.w(), u);
  const ConvGrads<double> g = conv2d_backward(x, p, cotangent);

  auto fx = [&](const Vec& flat) {
    Tensor4d xt(x.n(), x.c(), x.h(), x.w(), flat);
    return dot(u, conv2d_forward(xt, p).data());
  };
  auto fk = [&](const Vec& flat) {
    ConvParams<double> pt = p;
    pt.kernels = Tensor4d(out_c, in_c, kh, kw, flat);
    return dot(u, conv2d_forward(x, pt).data());
  };
  auto fb = [&](const Vec& flat) {
    ConvParams<double> pt = p;
    pt.bias = flat;
    return dot(u, conv2d_forward(x, pt).data());
  };
  return merge_reports(
      name, {compare_gradients(name, "x", g.x.data(), finite_diff(fx, x.data()), tol),
             compare_gradients(name, "kernels", g.kernels.data(),
                               finite_diff(fk, p.kernels.data()), tol),
             compare_gradients(name, "bias", g.bias, finite_diff(fb, p.bias), tol)});
}

GradReport maxpool_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, 2, 2, 4, 4);
  pool_tie_free(x, rng);
  const MaxPoolResult<double> r = maxpool2x2_forward(x);
  const Vec u = draw(rng, r.values.size());
  Tensor4d cot(r.values.n(), r.values.c(), r.values.h(), r.values.w(), u);
  const Tensor4d gx = maxpool2x2_backward(r.argmax, x.h(), x.w(), cot);
  auto f = [&](const Vec& flat) {
    Tensor4d xt(x.n(), x.c(), x.h(), x.w(), flat);
    return dot(u, maxpool2x2_forward(xt).values.data());
  };
  return merge_reports("maxpool2x2", {compare_gradients("maxpool2x2", "x", gx.data(),
                                                        finite_diff(f, x.data()), tol)});
}

GradReport batchnorm_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, 3, 2, 3, 3);
  BatchNormParams<double> p = make_batchnorm_params<double>(2);
  for (auto& g : p.gamma) g = rng.uniform(0.5, 1.5);
  for (auto& b : p.beta) b = rng.uniform(-0.5, 0.5);

  BatchNormCache<double> cache;
  BatchNormParams<double> scratch = p;
  const Tensor4d y0 = batchnorm_forward(x, scratch, Phase::train, &cache);
  const Vec u = draw(rng, y0.size());
  Tensor4d cot(x.n(), x.c(), x.h(), x.w(), u);
  const BatchNormGrads<double> g = batchnorm_backward(x, p, cache, cot);

  auto fx = [&](const Vec& flat) {
    Tensor4d xt(x.n(), x.c(), x.h(), x.w(), flat);
    BatchNormParams<double> pt = p;
    return dot(u, batchnorm_forward(xt, pt, Phase::train).data());
  };
  auto fgamma = [&](const Vec& flat) {
    BatchNormParams<double> pt = p;
    pt.gamma = flat;
    return dot(u, batchnorm_forward(x, pt, Phase::train).data());
  };
  auto fbeta = [&](const Vec& flat) {
    BatchNormParams<double> pt = p;
    pt.beta = flat;
    return dot(u, batchnorm_forward(x, pt, Phase::train).data());
  };
  return merge_reports(
      "batchnorm",
      {compare_gradients("batchnorm", "x", g.x.data(), finite_diff(fx, x.data()), tol),
       compare_gradients("batchnorm", "gamma", g.gamma, finite_diff(fgamma, p.gamma), tol),
       compare_gradients("batchnorm", "beta", g.beta, finite_diff(fbeta, p.beta), tol)});
}

GradReport dense_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  const Mat x = draw_mat(rng, 3, 4);
  const Mat w = draw_mat(rng, 2, 4);
  const Col b = draw_col(rng, 2);
  const Mat y0 = dense_forward(x, w, b);
  Mat u = draw_mat(rng, y0.rows(), y0.cols());
  const DenseGrads<double> g = dense_backward(x, w, u);
  auto reshape = [](const Vec& flat, Eigen::Index r, Eigen::Index c) {
    Mat m(r, c);
    std::copy(flat.begin(), flat.end(), m.data());
    return m;
  };
  auto fx = [&](const Vec& flat) {
    return u.cwiseProduct(dense_forward(reshape(flat, 3, 4), w, b)).sum();
  };
  auto fw = [&](const Vec& flat) {
    return u.cwiseProduct(dense_forward(x, reshape(flat, 2, 4), b)).sum();
  };
  auto fb = [&](const Vec& flat) {
    Col bt(2);
    std::copy(flat.begin(), flat.end(), bt.data());
    return u.cwiseProduct(dense_forward(x, w, bt)).sum();
  };
  return merge_reports(
      "dense",
      {compare_gradients("dense", "x", mat_flat(g.x), finite_diff(fx, mat_flat(x)), tol),
       compare_gradients("dense", "weight", mat_flat(g.weight), finite_diff(fw, mat_flat(w)), tol),
       compare_gradients("dense", "bias", col_flat(g.bias), finite_diff(fb, col_flat(b)), tol)});
}

GradReport relu_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Vec raw = draw(rng, 2 * 3 * 4 * 4);
  relu_safe(raw, rng);
  Tensor4d x(2, 3, 4, 4, raw);
  const Vec u = draw(rng, x.size());
  Tensor4d cot(2, 3, 4, 4, u);
  const Tensor4d g = relu_backward(x, cot);
  auto f = [&](const Vec& flat) {
    Tensor4d xt(2, 3, 4, 4, flat);
    return dot(u, relu(xt).data());
  };
  return merge_reports("relu",
                       {compare_gradients("relu", "x", g.data(), finite_diff(f, x.data()), tol)});
}

GradReport sigmoid_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, 2, 3, 4, 4);
  const Vec u = draw(rng, x.size());
  Tensor4d cot(2, 3, 4, 4, u);
  const Tensor4d g = sigmoid_backward(x, cot);
  auto f = [&](const Vec& flat) {
    Tensor4d xt(2, 3, 4, 4, flat);
    return dot(u, sigmoid(xt).data());
  };
  return merge_reports(
      "sigmoid", {compare_gradients("sigmoid", "x", g.data(), finite_diff(f, x.data()), tol)});
}

GradReport softmax_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  const Mat logits = draw_mat(rng, 3, 5);
  const Mat u = draw_mat(rng, 3, 5);
  const Mat s = softmax_rows(logits);
  const Mat g = softmax_rows_backward(s, u);
  auto f = [&](const Vec& flat) {
    Mat lt(3, 5);
    std::copy(flat.begin(), flat.end(), lt.data());
    return u.cwiseProduct(softmax_rows(lt)).sum();
  };
  return merge_reports("softmax", {compare_gradients("softmax", "logits", mat_flat(g),
                                                     finite_diff(f, mat_flat(logits)), tol)});
}

GradReport softmax_xent_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  const Mat logits = draw_mat(rng, 3, 7);
  std::vector<int> labels(3);
  for (int& l : labels) l = static_cast<int>(rng.uniform_int(0, 6));
  const Col u = draw_col(rng, 3);
  const XentResult<double> r = softmax_cross_entropy(logits, labels);
  Mat analytic = r.grad_logits;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i) analytic.row(i) *= u(i);
  auto f = [&](const Vec& flat) {
    Mat lt(3, 7);
    std::copy(flat.begin(), flat.end(), lt.data());
    return u.dot(softmax_cross_entropy(lt, labels).loss);
  };
  return merge_reports("softmax_xent",
                       {compare_gradients("softmax_xent", "logits", mat_flat(analytic),
                                          finite_diff(f, mat_flat(logits)), tol)});
}

GradReport descriptor_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, 2, 3, 4, 4);
  max_tie_free(x, rng);
  const Mat ua = draw_mat(rng, 2, 3);
  const Mat um = draw_mat(rng, 2, 3);
  const Tensor4d g = descriptor_backward(x, ua, um);
  auto f = [&](const Vec& flat) {
    Tensor4d xt(2, 3, 4, 4, flat);
    const DescriptorBatch<double> d = build_descriptor(xt);
    return ua.cwiseProduct(d.avg).sum() + um.cwiseProduct(d.max).sum();
  };
  return merge_reports("build_descriptor", {compare_gradients("build_descriptor", "x", g.data(),
                                                              finite_diff(f, x.data()), tol)});
}

GradReport stage1_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  const std::size_t C = 12, F = 3, N = 2;
  DescriptorBatch<double> d;
  d.avg = draw_mat(rng, N, C);
  d.max = d.avg + Mat::Constant(N, C, 0.1) + draw_mat(rng, N, C).cwiseAbs();
  const Mat w = draw_mat(rng, F, 2);
  const Col b = draw_col(rng, F);

  std::vector<Mat> u(N);
  for (auto& m : u) m = draw_mat(rng, C, F);
  auto project = [&](const std::vector<Mat>& maps) {
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) s += u[n].cwiseProduct(maps[n]).sum();
    return s;
  };
  const Stage1Grads<double> g = combine_stage1_backward(d, w, u);

  auto favg = [&](const Vec& flat) {
    DescriptorBatch<double> dt = d;
    std::copy(flat.begin(), flat.end(), dt.avg.data());
    return project(combine_stage1(dt, w, b));
  };
  auto fmax = [&](const Vec& flat) {
    DescriptorBatch<double> dt = d;
    std::copy(flat.begin(), flat.end(), dt.max.data());
    return project(combine_stage1(dt, w, b));
  };
  auto fw = [&](const Vec& flat) {
    Mat wt(F, 2);
    std::copy(flat.begin(), flat.end(), wt.data());
    return project(combine_stage1(d, wt, b));
  };
  auto fb = [&](const Vec& flat) {
    Col bt(F);
    std::copy(flat.begin(), flat.end(), bt.data());
    return project(combine_stage1(d, w, bt));
  };
  return merge_reports(
      "combine_stage1",
      {compare_gradients("combine_stage1", "avg", mat_flat(g.avg), finite_diff(favg, mat_flat(d.avg)), tol),
       compare_gradients("combine_stage1", "max", mat_flat(g.max), finite_diff(fmax, mat_flat(d.max)), tol),
       compare_gradients("combine_stage1", "weight", mat_flat(g.weight), finite_diff(fw, mat_flat(w)), tol),
       compare_gradients("combine_stage1", "bias", col_flat(g.bias), finite_diff(fb, col_flat(b)), tol)});
}

GradReport strand_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  const std::size_t C = 12, F = 3, L = 4;
  const Mat m = draw_mat(rng, C, F);
  const Mat w = draw_mat(rng, L, F);
  const double b = rng.uniform(-1.0, 1.0);
  const Col u = draw_col(rng, C);
  const StrandGrads<double> g = strand_conv_stage2_backward(m, w, u);

  auto fm = [&](const Vec& flat) {
    Mat mt(C, F);
    std::copy(flat.begin(), flat.end(), mt.data());
    return u.dot(strand_conv_stage2(mt, w, b));
  };
  auto fw = [&](const Vec& flat) {
    Mat wt(L, F);
    std::copy(flat.begin(), flat.end(), wt.data());
    return u.dot(strand_conv_stage2(m, wt, b));
  };
  auto fb = [&](const Vec& flat) { return u.dot(strand_conv_stage2(m, w, flat[0])); };
  return merge_reports(
      "strand_conv_stage2",
      {compare_gradients("strand_conv_stage2", "m", mat_flat(g.m), finite_diff(fm, mat_flat(m)), tol),
       compare_gradients("strand_conv_stage2", "weight", mat_flat(g.weight), finite_diff(fw, mat_flat(w)), tol),
       compare_gradients("strand_conv_stage2", "bias", {g.bias}, finite_diff(fb, {b}), tol)});
}

GradReport gate_scale_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, 2, 3, 3, 3);
  const Mat pre = draw_mat(rng, 2, 3);
  const Vec u = draw(rng, x.size());
  Tensor4d cot(2, 3, 3, 3, u);
  const GateScaleGrads<double> g = gate_and_scale_backward(x, pre, cot);
  auto fx = [&](const Vec& flat) {
    Tensor4d xt(2, 3, 3, 3, flat);
    return dot(u, gate_and_scale(xt, pre).data());
  };
  auto fp = [&](const Vec& flat) {
    Mat pt(2, 3);
    std::copy(flat.begin(), flat.end(), pt.data());
    return dot(u, gate_and_scale(x, pt).data());
  };
  return merge_reports(
      "gate_and_scale",
      {compare_gradients("gate_and_scale", "x", g.x.data(), finite_diff(fx, x.data()), tol),
       compare_gradients("gate_and_scale", "pre_gate", mat_flat(g.pre_gate),
                         finite_diff(fp, mat_flat(pre)), tol)});
}

GradReport clocal_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x = draw_tensor(rng, 2, 32, 4, 4);
  max_tie_free(x, rng);
  CLocalParams<double> p = make_clocal_params<double>(32, rng);
  for (Eigen::Index i = 0; i < p.stage1_b.size(); ++i) p.stage1_b(i) = rng.uniform(-0.3, 0.3);
  p.stage2_b = rng.uniform(-0.3, 0.3);

  const Vec u = draw(rng, x.size());
  Tensor4d cot(2, 32, 4, 4, u);
  const CLocalGrads<double> g = clocal_backward(x, p, cot);

  auto run = [&](const Tensor4d& xt, const CLocalParams<double>& pt) {
    return dot(u, clocal_forward(xt, pt).data());
  };
  auto fx = [&](const Vec& flat) { return run(Tensor4d(2, 32, 4, 4, flat), p); };
  auto fw1 = [&](const Vec& flat) {
    CLocalParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.stage1_w.data());
    return run(x, pt);
  };
  auto fb1 = [&](const Vec& flat) {
    CLocalParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.stage1_b.data());
    return run(x, pt);
  };
  auto fw2 = [&](const Vec& flat) {
    CLocalParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.stage2_w.data());
    return run(x, pt);
  };
  auto fb2 = [&](const Vec& flat) {
    CLocalParams<double> pt = p;
    pt.stage2_b = flat[0];
    return run(x, pt);
  };
  return merge_reports(
      "clocal_block",
      {compare_gradients("clocal_block", "x", g.x.data(), finite_diff(fx, x.data()), tol),
       compare_gradients("clocal_block", "stage1_w", mat_flat(g.stage1_w),
                         finite_diff(fw1, mat_flat(p.stage1_w)), tol),
       compare_gradients("clocal_block", "stage1_b", col_flat(g.stage1_b),
                         finite_diff(fb1, col_flat(p.stage1_b)), tol),
       compare_gradients("clocal_block", "stage2_w", mat_flat(g.stage2_w),
                         finite_diff(fw2, mat_flat(p.stage2_w)), tol),
       compare_gradients("clocal_block", "stage2_b", {g.stage2_b},
                         finite_diff(fb2, {p.stage2_b}), tol)});
}

GradReport se_check(std::uint64_t seed, double tol) {
  Rng rng(seed);
  Tensor4d x;
  SEParams<double> p;
  // Redraw until every hidden pre-activation is clear of the relu kink.
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng draw_rng(mix_seed(seed, attempt));
    x = draw_tensor(draw_rng, 2, 32, 4, 4);
    max_tie_free(x, draw_rng);
    p = make_se_params<double>(32, draw_rng);
    for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = draw_rng.uniform(-0.3, 0.3);
    for (Eigen::Index i = 0; i < p.b2.size(); ++i) p.b2(i) = draw_rng.uniform(-0.3, 0.3);
    const DescriptorBatch<double> d = build_descriptor(x);
    Mat hidden_pre = d.avg * p.w1.transpose();
    hidden_pre.rowwise() += p.b1.transpose();
    if (hidden_pre.cwiseAbs().minCoeff() > 1e-3) break;
  }

  Rng rng2(mix_seed(seed, 0xc07a));
  const Vec u = draw(rng2, x.size());
  Tensor4d cot(2, 32, 4, 4, u);
  const SEGrads<double> g = se_backward(x, p, cot);

  auto run = [&](const Tensor4d& xt, const SEParams<double>& pt) {
    return dot(u, se_forward(xt, pt).data());
  };
  auto fx = [&](const Vec& flat) { return run(Tensor4d(2, 32, 4, 4, flat), p); };
  auto fw1 = [&](const Vec& flat) {
    SEParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.w1.data());
    return run(x, pt);
  };
  auto fb1 = [&](const Vec& flat) {
    SEParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.b1.data());
    return run(x, pt);
  };
  auto fw2 = [&](const Vec& flat) {
    SEParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.w2.data());
    return run(x, pt);
  };
  auto fb2 = [&](const Vec& flat) {
    SEParams<double> pt = p;
    std::copy(flat.begin(), flat.end(), pt.b2.data());
    return run(x, pt);
  };
  return merge_reports(
      "se_block",
      {compare_gradients("se_block", "x", g.x.data(), finite_diff(fx, x.data()), tol),
       compare_gradients("se_block", "w1", mat_flat(g.w1), finite_diff(fw1, mat_flat(p.w1)), tol),
       compare_gradients("se_block", "b1", col_flat(g.b1), finite_diff(fb1, col_flat(p.b1)), tol),
       compare_gradients("se_block", "w2", mat_flat(g.w2), finite_diff(fw2, mat_flat(p.w2)), tol),
       compare_gradients("se_block", "b2", col_flat(g.b2), finite_diff(fb2, col_flat(p.b2)), tol)});
}

using CheckFn = GradReport (*)(std::uint64_t, double);

const std::map<std::string, CheckFn>& registry() {
  static const std::map<std::string, CheckFn> checks = {
      {"conv2d_valid",
       [](std::uint64_t s, double t) {
         return conv_check("conv2d_valid", s, t, 1, 2, 4, 4, 3, 3, 3, 1, Padding::valid);
       }},
      {"conv2d_same",
       [](std::uint64_t s, double t) {
         return conv_check("conv2d_same", s, t, 2, 2, 5, 5, 2, 3, 3, 1, Padding::same);
       }},
      {"conv2d_even_kernel",
       [](std::uint64_t s, double t) {
         return conv_check("conv2d_even_kernel", s, t, 1, 2, 4, 4, 2, 2, 2, 1, Padding::same);
       }},
      {"conv2d_stride2",
       [](std::uint64_t s, double t) {
         return conv_check("conv2d_stride2", s, t, 1, 2, 6, 6, 2, 3, 3, 2, Padding::same);
       }},
      {"maxpool2x2", maxpool_check},
      {"batchnorm", batchnorm_check},
      {"dense", dense_check},
      {"relu", relu_check},
      {"sigmoid", sigmoid_check},
      {"softmax", softmax_check},
      {"softmax_xent", softmax_xent_check},
      {"build_descriptor", descriptor_check},
      {"combine_stage1", stage1_check},
      {"strand_conv_stage2", strand_check},
      {"gate_and_scale", gate_scale_check},
      {"clocal_block", clocal_check},
      {"se_block", se_check},
  };
  return checks;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

GradReport check_op(const std::string& name, std::uint64_t seed, double tol) {
  const auto it = registry().find(name);
  if (it == registry().end())
    throw std::invalid_argument("check_op: unknown op '" + name + "'");
  return it->second(seed, tol);
}

std::vector<GradReport> run_all_checks(std::uint64_t seed0, std::size_t seeds, double tol) {
  std::vector<GradReport> reports;
  for (const std::string& name : gradcheck_names())
    for (std::size_t s = 0; s < seeds; ++s) {
      GradReport r = check_op(name, seed0 + s, tol);
      if (seeds > 1) r.op = name + "@" + std::to_string(seed0 + s);
      reports.push_back(std::move(r));
    }
  return reports;
}

std::string format_report_table(const std::vector<GradReport>& reports) {
  std::ostringstream os;
  os << "op                             max_rel_err   worst                 result\n";
  os << "-----------------------------  ------------  --------------------  ------\n";
  for (const GradReport& r : reports) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-29s  %12.3e  %-20s  %s\n", r.op.c_str(), r.max_rel_err,
                  (r.worst_tensor + "[" + std::to_string(r.worst_index) + "]").c_str(),
                  r.pass ? "pass" : "FAIL");
    os << line;
  }
  return os.str();
}

}  // namespace chanloc
