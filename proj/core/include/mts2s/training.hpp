#pragma once

#include <iosfwd>
#include <vector>

#include "mts2s/checkpoint.hpp"
#include "mts2s/config.hpp"
#include "mts2s/data.hpp"
#include "mts2s/metrics.hpp"
#include "mts2s/params.hpp"

namespace mts2s {

struct TrainData {
  std::vector<CaptionExample> cap_train;
  std::vector<CaptionExample> cap_val;
  std::vector<FeatureClip> video_train;
  std::vector<EntailmentPair> entail_train;
};

struct TrainResult {
  Checkpoint best;
  double best_average = -1.0;
  std::uint64_t best_update = 0;
  std::uint64_t updates_run = 0;
};

// Alternates tasks per the mixing ratio, one Adam step per mini-batch, a
// greedy-decode validation of the captioning set every validation_interval
// updates (and at the end); keeps the checkpoint maximizing the average of
// BLEU-4 / ROUGE-L / CIDEr-D. Writes one JSON line per update and per
// validation to `log` when given. Throws NumericalError naming the update and
// task if the loss stops being finite.
TrainResult train(const TrainConfig& cfg, const SharingPlan& plan, const Vocabulary& vocab,
                  const TrainData& data, std::ostream* log = nullptr);

// k independent runs differing only in seed (cfg.seed + run index).
std::vector<TrainResult> train_ensemble(const TrainConfig& cfg, const SharingPlan& plan,
                                        const Vocabulary& vocab, const TrainData& data,
                                        std::size_t k,
                                        const std::vector<std::ostream*>* logs = nullptr);

// Greedy-decodes every validation example and scores it against its
// references; exposed for reuse by evaluation and tests.
MetricReport validate_captioning(ParameterStore<float>& params, const SharingPlan& plan,
                                 const TrainConfig& cfg, const Vocabulary& vocab,
                                 const std::vector<CaptionExample>& examples);

}  // namespace mts2s
