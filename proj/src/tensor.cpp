#include "vipnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace vipnas {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

Tensor Tensor::batch_slice(int first, int count) const {
  if (first < 0 || count < 0 || first + count > shape_.n) {
    throw std::out_of_range("batch_slice out of range");
  }
  Tensor out(count, shape_.c, shape_.h, shape_.w);
  const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w;
  std::memcpy(out.data(), data_.data() + first * per, count * per * sizeof(float));
  return out;
}

Tensor Tensor::stack(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  const Shape s0 = parts.front().shape();
  int n = 0;
  for (const auto& p : parts) {
    if (p.c() != s0.c || p.h() != s0.h || p.w() != s0.w) {
      throw std::invalid_argument("stack: shape mismatch " + p.shape().str() +
                                  " vs " + s0.str());
    }
    n += p.n();
  }
  Tensor out(n, s0.c, s0.h, s0.w);
  float* dst = out.data();
  for (const auto& p : parts) {
    std::memcpy(dst, p.data(), p.numel() * sizeof(float));
    dst += p.numel();
  }
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace vipnas
