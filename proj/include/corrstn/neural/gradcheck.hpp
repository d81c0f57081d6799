#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "corrstn/neural/tensor.hpp"

namespace corrstn::nn {

/// One scalar coordinate of a leaf to probe.
struct Probe {
  Var var;
  std::size_t index = 0;
  std::string label;
};

struct GradCheckResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  std::size_t probes = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares reverse-mode gradients of the scalar `loss()` against central
/// differences with step `h` at every probe. Leaves must be zero-grad on entry;
/// they are left zero-grad on exit.
inline GradCheckResult gradcheck(const std::function<Var()>& loss, const std::vector<Probe>& probes,
                                 double h = 1e-5, double floor = 1e-6) {
  GradCheckResult r;
  r.probes = probes.size();
  {
    Var out = loss();
    out.backward();
  }
  for (const auto& p : probes) r.analytic.push_back(p.var.grad()[p.index]);
  for (const auto& p : probes) {
    Var v = p.var;
    v.zero_grad();
  }
  for (const auto& p : probes) {
    Var v = p.var;
    double& x = v.mutable_value()[p.index];
    const double x0 = x;
    x = x0 + h;
    const double fp = loss().value()[0];
    x = x0 - h;
    const double fm = loss().value()[0];
    x = x0;
    r.numeric.push_back((fp - fm) / (2.0 * h));
  }
  double diff = 0.0;
  double na = 0.0;
  double nn = 0.0;
  for (std::size_t i = 0; i < r.probes; ++i) {
    diff += (r.analytic[i] - r.numeric[i]) * (r.analytic[i] - r.numeric[i]);
    na += r.analytic[i] * r.analytic[i];
    nn += r.numeric[i] * r.numeric[i];
  }
  r.rel_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
  return r;
}

/// Probes for every coordinate of each leaf.
inline std::vector<Probe> all_coordinates(const std::vector<Var>& leaves) {
  std::vector<Probe> probes;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].numel(); ++i) {
      probes.push_back({leaves[l], i, "leaf" + std::to_string(l) + "[" + std::to_string(i) + "]"});
    }
  }
  return probes;
}

}  // namespace corrstn::nn
