#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "chanloc/conv.hpp"
#include "chanloc/tensor.hpp"

namespace chanloc {

template <typename T>
T sigmoid_value(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.data())
    if (v < T(0)) v = T(0);
  return y;
}

// grad w.r.t. x given the forward input; the kink at 0 takes the 0 branch.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  if (!grad_out.same_shape(x)) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor4<T> g = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data()[i] <= T(0)) g.data()[i] = T(0);
  return g;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.data()) v = sigmoid_value(v);
  return y;
}

template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  if (!grad_out.same_shape(x)) throw std::invalid_argument("sigmoid_backward: shape mismatch");
  Tensor4<T> g = grad_out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid_value(x.data()[i]);
    g.data()[i] *= s * (T(1) - s);
  }
  return g;
}

// Row-wise softmax over the class axis, with max subtraction for stability.
template <typename T>
MatrixX<T> softmax_rows(const MatrixX<T>& logits) {
  MatrixX<T> s(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const T m = logits.row(r).maxCoeff();
    s.row(r) = (logits.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
  return s;
}

// grad w.r.t. logits given softmax output s and upstream grad.
template <typename T>
MatrixX<T> softmax_rows_backward(const MatrixX<T>& s, const MatrixX<T>& grad_out) {
  if (s.rows() != grad_out.rows() || s.cols() != grad_out.cols())
    throw std::invalid_argument("softmax_backward: shape mismatch");
  MatrixX<T> g(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T dot = s.row(r).dot(grad_out.row(r));
    g.row(r) = s.row(r).array() * (grad_out.row(r).array() - dot);
  }
  return g;
}

template <typename T>
struct XentResult {
  VectorX<T> loss;           // per sample
  MatrixX<T> grad_logits;    // softmax(logits) - onehot(label), per sample
};

// loss_i = -log softmax(logits_i)[label_i], computed via log-sum-exp.
template <typename T>
XentResult<T> softmax_cross_entropy(const MatrixX<T>& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  XentResult<T> r;
  r.loss.resize(logits.rows());
  r.grad_logits = softmax_rows(logits);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= logits.cols())
      throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const T m = logits.row(i).maxCoeff();
    const T lse = std::log((logits.row(i).array() - m).exp().sum()) + m;
    r.loss[i] = lse - logits(i, label);
    r.grad_logits(i, label) -= T(1);
  }
  return r;
}

}  // namespace chanloc
