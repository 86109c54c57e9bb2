#pragma once

#include "oavl/nn/tensor.hpp"

namespace oavl::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

// Decoupled weight decay (p -= lr * wd * p), then the bias-corrected Adam
// update. Throws ValidationError when the parameter has no gradient.
template <typename Real>
void adam_step(Parameter<Real>& p, const AdamConfig& cfg);

extern template void adam_step<float>(Parameter<float>&, const AdamConfig&);
extern template void adam_step<double>(Parameter<double>&, const AdamConfig&);

}  // namespace oavl::nn
