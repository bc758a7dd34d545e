#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "chanloc/tensor.hpp"
#include "chanloc/threading.hpp"

namespace chanloc {

// 2x2 max pooling, stride 2. argmax stores the winning offset (0..3, row-major
// within the window) per output cell; ties go to the first occurrence.
template <typename T>
struct MaxPoolResult {
  Tensor4<T> values;
  std::vector<std::uint8_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool2x2_forward(const Tensor4<T>& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0)
    throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " + x.shape_str());
  const std::size_t oh = x.h() / 2, ow = x.w() / 2;
  MaxPoolResult<T> r;
  r.values = Tensor4<T>(x.n(), x.c(), oh, ow);
  r.argmax.resize(x.n() * x.c() * oh * ow);

  parallel_for(x.n(), [&](std::size_t n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* in = x.plane(n, c);
      T* out = r.values.plane(n, c);
      std::uint8_t* arg = r.argmax.data() + (n * x.c() + c) * oh * ow;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const std::size_t base = 2 * i * x.w() + 2 * j;
          const T cand[4] = {in[base], in[base + 1], in[base + x.w()], in[base + x.w() + 1]};
          std::uint8_t best = 0;
          for (std::uint8_t k = 1; k < 4; ++k)
            if (cand[k] > cand[best]) best = k;
          out[i * ow + j] = cand[best];
          arg[i * ow + j] = best;
        }
      }
    }
  });
  return r;
}

// Routes grad_out to the recorded argmax cell of each window.
template <typename T>
Tensor4<T> maxpool2x2_backward(const std::vector<std::uint8_t>& argmax, std::size_t in_h,
                               std::size_t in_w, const Tensor4<T>& grad_out) {
  const std::size_t oh = grad_out.h(), ow = grad_out.w();
  if (in_h != 2 * oh || in_w != 2 * ow || argmax.size() != grad_out.size())
    throw std::invalid_argument("maxpool2x2_backward: shape mismatch");
  Tensor4<T> grad_x(grad_out.n(), grad_out.c(), in_h, in_w);

  parallel_for(grad_out.n(), [&](std::size_t n) {
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      const T* go = grad_out.plane(n, c);
      T* gx = grad_x.plane(n, c);
      const std::uint8_t* arg = argmax.data() + (n * grad_out.c() + c) * oh * ow;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const std::uint8_t k = arg[i * ow + j];
          const std::size_t base = 2 * i * in_w + 2 * j;
          const std::size_t offset[4] = {base, base + 1, base + in_w, base + in_w + 1};
          gx[offset[k]] += go[i * ow + j];
        }
      }
    }
  });
  return grad_x;
}

}  // namespace chanloc
