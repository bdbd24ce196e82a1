#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "xlut/error.hpp"

namespace xlut::nn {

/// NCHW extent.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW array of doubles with optional same-shape gradient storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.count(), fill) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
      throw ShapeError("tensor extents must be positive, got " + shape.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }

  /// Allocates (if needed) and clears the gradient buffer.
  void zero_grad() { grad_.assign(data_.size(), 0.0); }

  double& at(int n, int c, int y, int x) noexcept { return data_[offset(n, c, y, x)]; }
  double at(int n, int c, int y, int x) const noexcept { return data_[offset(n, c, y, x)]; }

  /// Pointer to the (n, c) plane.
  double* plane(int n, int c) noexcept { return data_.data() + offset(n, c, 0, 0); }
  const double* plane(int n, int c) const noexcept { return data_.data() + offset(n, c, 0, 0); }
  double* grad_plane(int n, int c) noexcept { return grad_.data() + offset(n, c, 0, 0); }

  std::size_t offset(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + static_cast<std::size_t>(c)) * shape_.h +
            static_cast<std::size_t>(y)) *
               shape_.w +
           static_cast<std::size_t>(x);
  }

 private:
  Shape shape_{};
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// A trainable tensor with its manifest name.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline void require_shape(const Tensor& t, const Shape& s, const char* what) {
  if (t.shape() != s) throw ShapeError(std::string(what) + ": expected " + s.str() + ", got " + t.shape().str());
}

}  // namespace xlut::nn
