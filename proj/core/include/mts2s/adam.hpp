#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

#include "mts2s/params.hpp"

namespace mts2s {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment slots plus a per-group step counter. Counters are kept
// per group so that groups untouched by a task's update stay bit-identical
// (updating them with decayed moments would drift them).
template <typename S>
struct OptimizerState {
  std::map<std::string, Tensor<S>> m;  // key: "group/name"
  std::map<std::string, Tensor<S>> v;
  std::map<std::string, std::uint64_t> step;  // per group

  static std::string key(const std::string& group, const std::string& name) {
    return group + "/" + name;
  }
};

// Standard Adam with bias correction, applied only to the listed groups.
template <typename S>
void adam_step(ParameterStore<S>& store, const std::set<std::string>& groups,
               OptimizerState<S>& opt, const AdamConfig& cfg) {
  for (const std::string& g : groups) {
    if (!store.has_group(g)) throw ContractError("adam_step: unknown group " + g);
    const std::uint64_t t = ++opt.step[g];
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& [name, p] : store.groups().at(g)) {
      const std::string k = OptimizerState<S>::key(g, name);
      auto mit = opt.m.find(k);
      if (mit == opt.m.end()) {
        mit = opt.m.emplace(k, Tensor<S>(p.value.shape())).first;
        opt.v.emplace(k, Tensor<S>(p.value.shape()));
      }
      Tensor<S>& m = mit->second;
      Tensor<S>& v = opt.v.at(k);
      if (!m.same_shape(p.grad)) {
        throw ContractError("adam_step: moment/gradient shape mismatch for " + k + ": " +
                            m.shape_string() + " vs " + p.grad.shape_string());
      }
      const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const S grad = p.grad[i];
        m[i] = b1 * m[i] + (S(1) - b1) * grad;
        v[i] = b2 * v[i] + (S(1) - b2) * grad * grad;
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        p.value[i] -= static_cast<S>(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
      }
    }
  }
}

}  // namespace mts2s
