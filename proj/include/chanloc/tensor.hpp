#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace chanloc {

// Rank-4 dense array laid out (batch, channel, height, width), row-major
// within each plane. The scalar type selects the precision mode: float for
// training, double for gradient checks.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;

  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T value = T(0))
      : n_(n), c_(c), h_(h), w_(w), data_(checked_size(n, c, h, w), value) {}

  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::vector<T> values)
      : n_(n), c_(c), h_(h), w_(w), data_(std::move(values)) {
    if (data_.size() != checked_size(n, c, h, w))
      throw std::invalid_argument("Tensor4: data length " + std::to_string(data_.size()) +
                                  " does not match shape");
  }

  std::size_t n() const { return n_; }
  std::size_t c() const { return c_; }
  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane_size() const { return h_ * w_; }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor4& other) const {
    return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
  }

  std::string shape_str() const {
    return "(" + std::to_string(n_) + ", " + std::to_string(c_) + ", " + std::to_string(h_) +
           ", " + std::to_string(w_) + ")";
  }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * c_ + c) * h_ + h) * w_ + w;
  }

  // Bounds-checked element access.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    check_indices(n, c, h, w);
    return data_[index(n, c, h, w)];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    check_indices(n, c, h, w);
    return data_[index(n, c, h, w)];
  }

  // Contiguous (h, w) plane of one sample/channel; kernels iterate these.
  T* plane(std::size_t n, std::size_t c) {
    assert(n < n_ && c < c_);
    return data_.data() + (n * c_ + c) * plane_size();
  }
  const T* plane(std::size_t n, std::size_t c) const {
    assert(n < n_ && c < c_);
    return data_.data() + (n * c_ + c) * plane_size();
  }

  // Contiguous block of one sample: c * h * w values.
  T* sample(std::size_t n) {
    assert(n < n_);
    return data_.data() + n * c_ * plane_size();
  }
  const T* sample(std::size_t n) const {
    assert(n < n_);
    return data_.data() + n * c_ * plane_size();
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T value) { data_.assign(data_.size(), value); }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n_, c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_size(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    if (n == 0 || c == 0 || h == 0 || w == 0)
      throw std::invalid_argument("Tensor4: all dimensions must be >= 1");
    return n * c * h * w;
  }

  void check_indices(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    if (n >= n_ || c >= c_ || h >= h_ || w >= w_)
      throw std::out_of_range("Tensor4: index out of range for shape " + shape_str());
  }

  std::size_t n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

}  // namespace chanloc
