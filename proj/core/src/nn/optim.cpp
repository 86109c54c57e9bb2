#include "oavl/nn/optim.hpp"

#include <cmath>

#include "oavl/errors.hpp"

namespace oavl::nn {

template <typename Real>
void adam_step(Parameter<Real>& p, const AdamConfig& cfg) {
  if (!p.grad_ready) {
    throw ValidationError("adam_step: parameter " + p.name + " has no gradient");
  }
  ++p.step;
  const double t = static_cast<double>(p.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = cfg.lr * cfg.weight_decay;
  auto& w = p.value.data;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = p.grad[i];
    const double m = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
    p.m[i] = static_cast<Real>(m);
    p.v[i] = static_cast<Real>(v);
    double x = w[i];
    x -= decay * x;
    x -= cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    w[i] = static_cast<Real>(x);
  }
}

template void adam_step<float>(Parameter<float>&, const AdamConfig&);
template void adam_step<double>(Parameter<double>&, const AdamConfig&);

}  // namespace oavl::nn
