#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mts2s/adam.hpp"
#include "mts2s/config.hpp"
#include "mts2s/multitask.hpp"
#include "mts2s/params.hpp"

namespace mts2s {

// Self-contained training snapshot. On disk: magic "MTS2S1\0", a u64-LE
// length-prefixed JSON manifest (config, plan, vocabulary, tensor names and
// shapes, update counter, validation scores), then raw little-endian float32
// arrays in manifest order (parameters, then Adam m/v slots).
struct Checkpoint {
  TrainConfig config;
  SharingPlan plan;
  ModelDims dims;
  std::vector<std::string> vocab_tokens;
  std::uint64_t update = 0;
  std::map<std::string, double> validation;  // empty until a validation ran
  ParameterStore<float> params;
  OptimizerState<float> opt;
  AdamConfig adam;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mts2s
