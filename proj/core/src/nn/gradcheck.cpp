#include "oavl/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "oavl/errors.hpp"
#include "oavl/rng.hpp"

namespace oavl::nn {

GradCheckResult finite_difference_check(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> theta, const std::vector<double>& analytic, double h,
                                        const std::vector<std::size_t>* coords) {
  if (analytic.size() != theta.size()) {
    throw ValidationError("finite_difference_check: gradient has " + std::to_string(analytic.size()) +
                          " entries for " + std::to_string(theta.size()) + " parameters");
  }
  std::vector<std::size_t> all;
  if (coords == nullptr) {
    all.resize(theta.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
      all[i] = i;
    }
    coords = &all;
  }
  GradCheckResult result;
  for (auto i : *coords) {
    const double saved = theta.at(i);
    theta[i] = saved + h;
    const double fp = f(theta);
    theta[i] = saved - h;
    const double fm = f(theta);
    theta[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
      throw ValidationError("finite_difference_check: non-finite value at index " + std::to_string(i));
    }
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    if (result.checked == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

GradCheckResult check_graph_gradient(const GraphFunction& fn, const std::vector<Tensor<double>>& inputs, double h,
                                     std::size_t probes_per_input, std::uint64_t seed) {
  Graph<double> g;
  std::vector<Var> vars;
  for (const auto& t : inputs) {
    vars.push_back(g.leaf(t));
  }
  const Var root = fn(g, vars);
  g.backward(root);

  Rng rng(seed, 0x6C);
  GradCheckResult worst;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic = g.grad(vars[k]);
    if (analytic.empty()) {
      analytic.assign(inputs[k].numel(), 0.0);
    }
    auto eval = [&](const std::vector<double>& theta) {
      Graph<double> probe;
      std::vector<Var> pv;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        pv.push_back(probe.constant(j == k ? Tensor<double>(inputs[j].shape, theta) : inputs[j]));
      }
      return probe.value(fn(probe, pv)).data.at(0);
    };
    std::vector<std::size_t> coords;
    const std::vector<std::size_t>* probe_coords = nullptr;
    if (probes_per_input > 0 && probes_per_input < inputs[k].numel()) {
      for (std::size_t p = 0; p < probes_per_input; ++p) {
        coords.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(inputs[k].numel()) - 1)));
      }
      probe_coords = &coords;
    }
    const auto r = finite_difference_check(eval, inputs[k].data, analytic, h, probe_coords);
    if (r.max_rel_error >= worst.max_rel_error) {
      const auto checked = worst.checked;
      worst = r;
      worst.checked += checked;
    } else {
      worst.checked += r.checked;
    }
  }
  return worst;
}

}  // namespace oavl::nn
