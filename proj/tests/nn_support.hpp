#pragma once

// Finite-difference helpers for layer-level gradient tests.

#include <functional>
#include <random>

#include "xlut/nn/tensor.hpp"

namespace nn_support {

inline xlut::nn::Tensor random_tensor(std::mt19937_64& rng, xlut::nn::Shape s, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  xlut::nn::Tensor t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// sum(r * y): a scalar probe whose upstream gradient is r.
inline double probe(const xlut::nn::Tensor& y, const xlut::nn::Tensor& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y.data()[i] * r.data()[i];
  return acc;
}

inline double numeric(double& x, double step, const std::function<double()>& f) {
  const double keep = x;
  x = keep + step;
  const double up = f();
  x = keep - step;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * step);
}

inline double rel(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace nn_support
