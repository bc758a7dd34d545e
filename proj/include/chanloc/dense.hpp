#pragma once

#include <Eigen/Dense>

#include <stdexcept>

#include "chanloc/conv.hpp"

namespace chanloc {

template <typename T>
struct DenseGrads {
  MatrixX<T> x, weight;
  VectorX<T> bias;
};

// y = x * W^T + b, with x a (batch, d_in) row block and W (d_out, d_in).
template <typename T>
MatrixX<T> dense_forward(const MatrixX<T>& x, const MatrixX<T>& weight, const VectorX<T>& bias) {
  if (weight.cols() != x.cols())
    throw std::invalid_argument("dense: weight expects " + std::to_string(weight.cols()) +
                                " inputs, got " + std::to_string(x.cols()));
  if (bias.size() != weight.rows())
    throw std::invalid_argument("dense: bias length does not match output width");
  MatrixX<T> y = x * weight.transpose();
  y.rowwise() += bias.transpose();
  return y;
}

template <typename T>
DenseGrads<T> dense_backward(const MatrixX<T>& x, const MatrixX<T>& weight,
                             const MatrixX<T>& grad_y) {
  if (grad_y.rows() != x.rows() || grad_y.cols() != weight.rows())
    throw std::invalid_argument("dense_backward: gradient shape mismatch");
  DenseGrads<T> g;
  g.x = grad_y * weight;
  g.weight = grad_y.transpose() * x;
  g.bias = grad_y.colwise().sum().transpose();
  return g;
}

}  // namespace chanloc
