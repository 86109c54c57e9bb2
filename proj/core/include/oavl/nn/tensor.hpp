#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace oavl::nn {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

std::string shape_string(const Shape& shape);

// Dense row-major tensor. Real is float for training, double for gradient checks.
template <typename Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<Real> d);
  explicit Tensor(Shape s, Real fill = Real{0}) : shape(std::move(s)), data(nn::numel(shape), fill) {}

  std::size_t numel() const noexcept { return data.size(); }
  int dim(std::size_t axis) const { return shape.at(axis); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, std::vector<Other>(data.begin(), data.end()));
  }

  bool operator==(const Tensor&) const = default;
};

// A trainable tensor with its gradient accumulator and Adam moments.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  std::vector<Real> grad;
  std::vector<Real> m;
  std::vector<Real> v;
  std::int64_t step = 0;
  bool grad_ready = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<Real> t)
      : name(std::move(n)), value(std::move(t)), grad(value.numel()), m(value.numel()), v(value.numel()) {}

  void zero_grad() {
    std::fill(grad.begin(), grad.end(), Real{0});
    grad_ready = false;
  }

  void accumulate_grad(const std::vector<Real>& g);
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;
extern template struct Parameter<float>;
extern template struct Parameter<double>;

}  // namespace oavl::nn
