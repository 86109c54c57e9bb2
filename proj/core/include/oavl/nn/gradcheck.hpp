#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "oavl/nn/graph.hpp"

namespace oavl::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Central differences (f(t + h e_i) - f(t - h e_i)) / 2h against `analytic`,
// relative error |a - b| / max(|a|, |b|, 1e-8). When `coords` is given only
// those indices are probed. Throws ValidationError on non-finite values.
GradCheckResult finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> theta, const std::vector<double>& analytic,
                                        double h = 1e-4, const std::vector<std::size_t>* coords = nullptr);

// Builds a scalar on a fresh 64-bit graph from differentiable inputs.
using GraphFunction = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

// Checks d(fn)/d(inputs) for every input element (or `probes_per_input`
// seeded-random elements per input when nonzero). Returns the worst result.
GradCheckResult check_graph_gradient(const GraphFunction& fn, const std::vector<Tensor<double>>& inputs,
                                     double h = 1e-4, std::size_t probes_per_input = 0, std::uint64_t seed = 0);

}  // namespace oavl::nn
