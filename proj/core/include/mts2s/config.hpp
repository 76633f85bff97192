#pragma once

#include <cstdint>
#include <string>

#include "mts2s/errors.hpp"
#include "mts2s/params.hpp"

namespace mts2s {

struct TrainConfig {
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::size_t attention = 0;  // 0 = same as hidden
  std::size_t unroll_visual = 50;
  std::size_t unroll_text = 30;
  double dropout = 0.0;
  double learning_rate = 1e-3;
  double init_range = 0.05;
  std::size_t batch_size = 16;
  MixingRatio ratio{100, 100, 50};
  double encode_fraction = 0.8;
  std::size_t max_updates = 2000;
  std::size_t validation_interval = 200;
  std::uint64_t seed = 0;
  double grad_clip = 5.0;  // 0 disables clipping
  std::size_t min_count = 1;
  bool beam_length_norm = false;

  std::size_t attention_dim() const { return attention == 0 ? hidden : attention; }

  void validate() const {
    if (hidden == 0 || embed == 0 || batch_size == 0) {
      throw DomainError("config: hidden, embed and batch_size must be positive");
    }
    if (unroll_visual == 0 || unroll_text == 0) {
      throw DomainError("config: unroll caps must be positive");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw DomainError("config: dropout must be in [0,1)");
    }
    if (encode_fraction <= 0.0 || encode_fraction >= 1.0) {
      throw DomainError("config: encode_fraction must be in (0,1)");
    }
    if (learning_rate <= 0.0) throw DomainError("config: learning_rate must be positive");
    if (init_range < 0.0) throw DomainError("config: init_range must be nonnegative");
    if (ratio.total() == 0) throw DomainError("config: mixing ratio must not be all zero");
  }

  // Hyperparameters used for the full-dataset experiments.
  static TrainConfig paper_profile() {
    TrainConfig c;
    c.hidden = 1024;
    c.embed = 512;
    c.dropout = 0.5;
    c.learning_rate = 1e-4;
    c.init_range = 0.05;
    c.batch_size = 32;
    c.ratio = MixingRatio{100, 100, 50};
    return c;
  }

  static TrainConfig desk_profile() { return TrainConfig{}; }
};

}  // namespace mts2s
