#pragma once

#include <set>

#include "mts2s/config.hpp"
#include "mts2s/multitask.hpp"
#include "mts2s/rng.hpp"

namespace mts2s {

// Creates and fills parameters for the active tasks: weights i.i.d. uniform in
// [-init_range, init_range], biases zero. Fill order is the store's
// deterministic traversal, so a seed pins the whole store.
template <typename S>
ParameterStore<S> init_parameters(const TrainConfig& cfg, const SharingPlan& plan,
                                  const ModelDims& dims, const std::set<TaskKind>& active,
                                  Rng rng) {
  cfg.validate();
  ParameterStore<S> store;
  create_parameters(store, plan, cfg, dims, active);
  const double r = cfg.init_range;
  store.for_each([&](const std::string&, const std::string& name, Param<S>& p) {
    if (is_bias_name(name)) return;  // created zero-valued
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.value[i] = static_cast<S>(rng.uniform(-r, r));
    }
  });
  return store;
}

template <typename S>
ParameterStore<S> init_parameters(const TrainConfig& cfg, const SharingPlan& plan,
                                  const ModelDims& dims, const std::set<TaskKind>& active) {
  return init_parameters<S>(cfg, plan, dims, active, Rng(cfg.seed).derive("init"));
}

}  // namespace mts2s
