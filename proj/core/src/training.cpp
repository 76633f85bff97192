#include "mts2s/training.hpp"

#include <cmath>
#include <ostream>

#include "json.hpp"
#include "mts2s/adam.hpp"
#include "mts2s/decoding.hpp"
#include "mts2s/init.hpp"

namespace mts2s {

namespace {

using nlohmann::json;

// Independent shuffled epoch iterator; rewinds and reshuffles when exhausted.
class EpochIterator {
 public:
  EpochIterator(std::size_t count, Rng rng) : rng_(std::move(rng)) {
    order_.resize(count);
    for (std::size_t i = 0; i < count; ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

struct CaptionItem {
  std::size_t example;
  std::size_t caption;
};

std::size_t infer_feature_dim(const TrainData& data) {
  for (const auto& ex : data.cap_train) {
    if (!ex.features.empty()) return ex.features[0].size();
  }
  throw DomainError("train: captioning training set has no features");
}

}  // namespace

MetricReport validate_captioning(ParameterStore<float>& params, const SharingPlan& plan,
                                 const TrainConfig& cfg, const Vocabulary& vocab,
                                 const std::vector<CaptionExample>& examples) {
  std::vector<Tokens> candidates;
  std::vector<std::vector<Tokens>> references;
  candidates.reserve(examples.size());
  references.reserve(examples.size());
  for (const auto& ex : examples) {
    auto stepper = ModelTokenStepper<float>::for_features(params, plan, ex.features, cfg);
    TokenSeq ids = greedy_decode(stepper, cfg.unroll_text);
    candidates.push_back(vocab.decode(ids));
    std::vector<Tokens> refs;
    refs.reserve(ex.captions.size());
    for (const auto& c : ex.captions) refs.push_back(tokenize(c));
    references.push_back(std::move(refs));
  }
  return evaluate_captions(candidates, references);
}

TrainResult train(const TrainConfig& cfg, const SharingPlan& plan, const Vocabulary& vocab,
                  const TrainData& data, std::ostream* log) {
  cfg.validate();
  if (data.cap_train.empty() || data.cap_val.empty()) {
    throw DomainError("train: captioning train and validation sets must be non-empty");
  }

  std::set<TaskKind> active = {TaskKind::Captioning};
  if (cfg.ratio.video_prediction > 0) {
    if (data.video_train.empty()) {
      throw DomainError("train: video prediction has a nonzero ratio but no clips");
    }
    active.insert(TaskKind::VideoPrediction);
  }
  if (cfg.ratio.entailment > 0) {
    if (data.entail_train.empty()) {
      throw DomainError("train: entailment has a nonzero ratio but no pairs");
    }
    active.insert(TaskKind::EntailmentGeneration);
  }

  ModelDims dims{infer_feature_dim(data), vocab.size()};
  for (const auto& clip : data.video_train) {
    if (!clip.features.empty() && clip.features[0].size() != dims.feature_dim) {
      throw DataError("train: clip " + clip.id + " feature dimension " +
                      std::to_string(clip.features[0].size()) + " != captioning dimension " +
                      std::to_string(dims.feature_dim));
    }
  }

  Rng root(cfg.seed);
  ParameterStore<float> params =
      init_parameters<float>(cfg, plan, dims, active, root.derive("init"));
  OptimizerState<float> opt;
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;

  // Flattened training items.
  std::vector<CaptionItem> cap_items;
  for (std::size_t e = 0; e < data.cap_train.size(); ++e) {
    for (std::size_t c = 0; c < data.cap_train[e].captions.size(); ++c) {
      cap_items.push_back({e, c});
    }
  }
  struct EntItem {
    TokenSeq premise, hypothesis;
  };
  std::vector<EntItem> ent_items;
  ent_items.reserve(data.entail_train.size());
  for (const auto& p : data.entail_train) {
    ent_items.push_back(
        {vocab.encode(tokenize(p.premise)), vocab.encode(tokenize(p.hypothesis))});
  }

  EpochIterator cap_iter(cap_items.size(), root.derive("epoch.captioning"));
  EpochIterator vid_iter(std::max<std::size_t>(data.video_train.size(), 1),
                         root.derive("epoch.video"));
  EpochIterator ent_iter(std::max<std::size_t>(ent_items.size(), 1),
                         root.derive("epoch.entailment"));

  Rng dropout_rng = root.derive("dropout");
  DropoutCtx dropout{cfg.dropout, true, &dropout_rng};

  TaskScheduler scheduler(cfg.ratio);
  TrainResult result;

  auto encode_caption = [&](const CaptionItem& item) {
    const auto& ex = data.cap_train[item.example];
    if (!ex.caption_ids.empty()) return ex.caption_ids[item.caption];
    return vocab.encode(tokenize(ex.captions[item.caption]));
  };

  auto run_validation = [&](std::uint64_t update) {
    MetricReport report = validate_captioning(params, plan, cfg, vocab, data.cap_val);
    const double avg = report.average();
    if (log) {
      json rec;
      rec["update"] = update;
      rec["validation"] = {{"bleu4", report.bleu4},
                           {"rouge_l", report.rouge_l},
                           {"cider_d", report.cider_d},
                           {"average", avg}};
      (*log) << rec.dump() << '\n';
    }
    if (avg > result.best_average) {
      result.best_average = avg;
      result.best_update = update;
      result.best = Checkpoint{cfg,
                               plan,
                               dims,
                               vocab.tokens(),
                               update,
                               {{"bleu4", report.bleu4},
                                {"rouge_l", report.rouge_l},
                                {"cider_d", report.cider_d},
                                {"average", avg}},
                               params,
                               opt,
                               adam};
    }
  };

  for (std::uint64_t update = 1; update <= cfg.max_updates; ++update) {
    const TaskKind task = scheduler.next();
    params.zero_grads();

    TaskBatch<float> batch;
    batch.kind = task;
    float loss = 0;
    if (task == TaskKind::Captioning) {
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const CaptionItem& item = cap_items[cap_iter.next()];
        batch.feature_sources.push_back(data.cap_train[item.example].features);
        batch.token_targets.push_back(encode_caption(item));
      }
      loss = captioning_loss(batch, params, plan, cfg, &dropout).loss;
    } else if (task == TaskKind::VideoPrediction) {
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        batch.feature_sources.push_back(data.video_train[vid_iter.next()].features);
      }
      loss = video_prediction_loss(batch, params, plan, cfg, cfg.encode_fraction, &dropout).loss;
    } else {
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        const EntItem& item = ent_items[ent_iter.next()];
        batch.token_sources.push_back(item.premise);
        batch.token_targets.push_back(item.hypothesis);
      }
      loss = entailment_loss(batch, params, plan, cfg, &dropout).loss;
    }

    if (!std::isfinite(loss)) {
      throw NumericalError("training diverged: loss is not finite at update " +
                           std::to_string(update) + " (task " + task_name(task) + ")");
    }

    const std::set<std::string> groups = plan.groups_of(task);
    if (cfg.grad_clip > 0) params.clip_grad_norm(groups, cfg.grad_clip);
    adam_step(params, groups, opt, adam);

    if (log) {
      json rec;
      rec["update"] = update;
      rec["task"] = task_name(task);
      rec["loss"] = loss;
      (*log) << rec.dump() << '\n';
    }
    result.updates_run = update;

    if (cfg.validation_interval > 0 && update % cfg.validation_interval == 0) {
      run_validation(update);
    }
  }
  if (result.best_average < 0 ||
      (cfg.max_updates > 0 && (cfg.validation_interval == 0 ||
                               cfg.max_updates % cfg.validation_interval != 0))) {
    run_validation(cfg.max_updates);
  }
  return result;
}

std::vector<TrainResult> train_ensemble(const TrainConfig& cfg, const SharingPlan& plan,
                                        const Vocabulary& vocab, const TrainData& data,
                                        std::size_t k, const std::vector<std::ostream*>* logs) {
  if (k == 0) throw DomainError("train_ensemble: k must be >= 1");
  std::vector<TrainResult> results;
  results.reserve(k);
  for (std::size_t run = 0; run < k; ++run) {
    TrainConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + run;
    std::ostream* log = logs && run < logs->size() ? (*logs)[run] : nullptr;
    try {
      results.push_back(train(run_cfg, plan, vocab, data, log));
    } catch (const std::exception& e) {
      throw NumericalError("ensemble run " + std::to_string(run) + " failed: " + e.what());
    }
  }
  return results;
}

}  // namespace mts2s
