#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mts2s/params.hpp"

namespace mts2s {

struct GradCheckEntry {
  std::string group, name;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradCheckReport {
  std::map<std::string, GradCheckEntry> worst_per_group;
  double max_rel_error = 0;
  std::size_t checked = 0;

  bool pass(double tolerance) const { return max_rel_error < tolerance; }
};

// Central finite differences against analytic gradients, in 64-bit mode.
//
// Protocol: loss_and_grad computes the loss AND accumulates gradients into the
// store's grad buffers (the loss functions all do). It must be deterministic —
// dropout disabled, fixed data; two baseline evaluations are compared to
// detect violations.
//
// relative error = |analytic − numeric| / max(|analytic|, |numeric|, noise_floor).
// The floor absorbs finite-difference resolution on near-zero gradients: one
// ulp of rounding in a loss of magnitude L shifts the central difference by
// ~eps_mach·L/(2·epsilon) ≈ 1e-11 for L ≈ 2, epsilon = 1e-5, so gradients
// below the floor compare as noise, not as relative disagreement.
inline GradCheckReport finite_difference_gradcheck(
    const std::function<double(ParameterStore<double>&)>& loss_and_grad,
    ParameterStore<double>& params, double epsilon = 1e-5, double tolerance = 1e-4,
    double noise_floor = 1e-5) {
  params.zero_grads();
  const double base = loss_and_grad(params);

  // Snapshot analytic gradients.
  std::map<std::string, Tensor<double>> analytic;
  params.for_each([&](const std::string& g, const std::string& n, const Param<double>& p) {
    analytic[g + "/" + n] = p.grad;
  });

  params.zero_grads();
  const double base2 = loss_and_grad(params);
  if (base != base2) {
    throw ContractError("gradcheck: loss function is not deterministic (" +
                        std::to_string(base) + " vs " + std::to_string(base2) + ")");
  }

  GradCheckReport report;
  params.for_each([&](const std::string& g, const std::string& n, Param<double>& p) {
    const Tensor<double>& a = analytic.at(g + "/" + n);
    GradCheckEntry worst;
    worst.group = g;
    worst.name = n;
    worst.rel_error = -1;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + epsilon;
      const double up = loss_and_grad(params);
      p.value[i] = saved - epsilon;
      const double down = loss_and_grad(params);
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), noise_floor});
      const double rel = std::abs(a[i] - numeric) / denom;
      ++report.checked;
      if (rel > worst.rel_error) {
        worst.index = i;
        worst.analytic = a[i];
        worst.numeric = numeric;
        worst.rel_error = rel;
      }
    }
    auto it = report.worst_per_group.find(g);
    if (it == report.worst_per_group.end() || worst.rel_error > it->second.rel_error) {
      report.worst_per_group[g] = worst;
    }
    report.max_rel_error = std::max(report.max_rel_error, worst.rel_error);
  });

  // Leave the store with the analytic gradients of the unperturbed point.
  params.for_each([&](const std::string& g, const std::string& n, Param<double>& p) {
    p.grad = analytic.at(g + "/" + n);
  });
  return report;
}

}  // namespace mts2s
