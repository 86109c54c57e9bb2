#include "oavl/nn/tensor.hpp"

#include "oavl/errors.hpp"

namespace oavl::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += ",";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename Real>
Tensor<Real>::Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
  if (nn::numel(shape) != data.size()) {
    throw ValidationError("tensor: shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) +
                          " values");
  }
}

template <typename Real>
void Parameter<Real>::accumulate_grad(const std::vector<Real>& g) {
  if (g.size() != grad.size()) {
    throw ValidationError("parameter " + name + ": gradient size mismatch");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    grad[i] += g[i];
  }
  grad_ready = true;
}

template struct Tensor<float>;
template struct Tensor<double>;
template struct Parameter<float>;
template struct Parameter<double>;

}  // namespace oavl::nn
