#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "mts2s/config.hpp"
#include "mts2s/network.hpp"
#include "mts2s/params.hpp"

namespace mts2s {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

template <typename S>
using FeatureSeq = std::vector<std::vector<S>>;
using TokenSeq = std::vector<int>;

// A mini-batch homogeneous in task kind. Sequences are kept at natural length;
// target_masks (when non-empty) exclude positions from the loss.
template <typename S>
struct TaskBatch {
  TaskKind kind = TaskKind::Captioning;
  std::vector<FeatureSeq<S>> feature_sources;  // captioning + video prediction
  std::vector<TokenSeq> token_sources;         // entailment premises
  std::vector<TokenSeq> token_targets;         // captions / hypotheses
  std::vector<std::vector<std::uint8_t>> target_masks;  // optional, parallel to token_targets

  std::size_t size() const {
    return kind == TaskKind::EntailmentGeneration ? token_sources.size() : feature_sources.size();
  }
};

struct ModelDims {
  std::size_t feature_dim = 0;
  std::size_t vocab = 0;
};

namespace detail {

template <typename S>
void ensure_tensor(ParameterStore<S>& store, const std::string& group, const std::string& name,
                   std::vector<std::size_t> shape) {
  if (store.has(group, name)) {
    const auto& have = store.value(group, name).shape();
    if (have != shape) {
      throw ContractError("parameter " + group + "/" + name + " already exists with shape " +
                          store.value(group, name).shape_string());
    }
    return;
  }
  store.add(group, name, std::move(shape));
}

template <typename S>
void ensure_encoder_group(ParameterStore<S>& store, const std::string& group, std::size_t hidden,
                          std::size_t embed) {
  for (const char* dir : {"fwd", "bwd"}) {
    ensure_tensor(store, group, std::string(dir) + ".Wx", {4 * hidden, embed});
    ensure_tensor(store, group, std::string(dir) + ".Wh", {4 * hidden, hidden});
    ensure_tensor(store, group, std::string(dir) + ".b", {4 * hidden});
  }
  ensure_tensor(store, group, "bridge.Wh", {hidden, 2 * hidden});
  ensure_tensor(store, group, "bridge.bh", {hidden});
  ensure_tensor(store, group, "bridge.Wc", {hidden, 2 * hidden});
  ensure_tensor(store, group, "bridge.bc", {hidden});
}

template <typename S>
void ensure_attention_group(ParameterStore<S>& store, const std::string& group, std::size_t att,
                            std::size_t hidden) {
  ensure_tensor(store, group, "Wenc", {att, 2 * hidden});
  ensure_tensor(store, group, "Wdec", {att, hidden});
  ensure_tensor(store, group, "b", {att});
  ensure_tensor(store, group, "v", {att});
}

}  // namespace detail

// Creates (zero-valued) parameters for every group the active tasks reach
// through the plan. Shared group ids are created once; shape conflicts from an
// inconsistent plan are contract errors.
template <typename S>
void create_parameters(ParameterStore<S>& store, const SharingPlan& plan, const TrainConfig& cfg,
                       const ModelDims& dims, const std::set<TaskKind>& active) {
  const std::size_t H = cfg.hidden, E = cfg.embed, A = cfg.attention_dim();
  for (TaskKind task : kAllTasks) {
    if (!active.count(task)) continue;
    detail::ensure_encoder_group(store, plan.encoder.at(task), H, E);
    detail::ensure_attention_group(store, plan.attention.at(task), A, H);

    const std::string& emb = plan.input_embedding.at(task);
    if (task == TaskKind::EntailmentGeneration) {
      detail::ensure_tensor(store, emb, "E", {dims.vocab, E});
    } else {
      detail::ensure_tensor(store, emb, "W", {E, dims.feature_dim});
      detail::ensure_tensor(store, emb, "b", {E});
    }

    const std::string& dec = plan.decoder.at(task);
    detail::ensure_tensor(store, dec, "lstm.Wx", {4 * H, E + 2 * H});
    detail::ensure_tensor(store, dec, "lstm.Wh", {4 * H, H});
    detail::ensure_tensor(store, dec, "lstm.b", {4 * H});
    if (task == TaskKind::VideoPrediction) {
      detail::ensure_tensor(store, dec, "out.W", {dims.feature_dim, H});
      detail::ensure_tensor(store, dec, "out.b", {dims.feature_dim});
    } else {
      detail::ensure_tensor(store, dec, "emb.E", {dims.vocab, E});
      detail::ensure_tensor(store, dec, "out.W", {dims.vocab, H});
      detail::ensure_tensor(store, dec, "out.b", {dims.vocab});
    }
  }
}

inline bool is_bias_name(const std::string& name) {
  const auto pos = name.rfind('.');
  const std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
  return leaf == "b" || leaf == "bh" || leaf == "bc";
}

// Wiring for the token-emitting tasks (captioning, entailment generation).
template <typename S>
struct TokenTaskRefs {
  bool visual_input = true;
  Tensor<S>*embW = nullptr, *embb = nullptr, *gembW = nullptr, *gembb = nullptr;  // visual
  Tensor<S>*embE = nullptr, *gembE = nullptr;                                     // text lookup
  EncoderRefs<S> enc;
  TokenDecoderRefs<S> dec;
  Tensor<S>*dec_embE, *gdec_embE;
};

template <typename S>
struct FrameTaskRefs {
  Tensor<S>*embW, *embb, *gembW, *gembb;
  EncoderRefs<S> enc;
  FrameDecoderRefs<S> dec;
};

template <typename S>
TokenTaskRefs<S> bind_token_task(ParameterStore<S>& store, const SharingPlan& plan, TaskKind task) {
  if (task == TaskKind::VideoPrediction) {
    throw ContractError("bind_token_task: video prediction is not a token task");
  }
  TokenTaskRefs<S> r;
  const std::string& emb = plan.input_embedding.at(task);
  r.visual_input = task == TaskKind::Captioning;
  if (r.visual_input) {
    r.embW = &store.value(emb, "W");
    r.embb = &store.value(emb, "b");
    r.gembW = &store.grad(emb, "W");
    r.gembb = &store.grad(emb, "b");
  } else {
    r.embE = &store.value(emb, "E");
    r.gembE = &store.grad(emb, "E");
  }
  r.enc = EncoderRefs<S>::bind(store, plan.encoder.at(task));
  const std::string& dec = plan.decoder.at(task);
  r.dec.lstm = LstmRefs<S>::bind(store, dec, "lstm");
  r.dec.att = AttentionRefs<S>::bind(store, plan.attention.at(task));
  r.dec.outW = &store.value(dec, "out.W");
  r.dec.outb = &store.value(dec, "out.b");
  r.dec.goutW = &store.grad(dec, "out.W");
  r.dec.goutb = &store.grad(dec, "out.b");
  r.dec_embE = &store.value(dec, "emb.E");
  r.gdec_embE = &store.grad(dec, "emb.E");
  return r;
}

template <typename S>
FrameTaskRefs<S> bind_frame_task(ParameterStore<S>& store, const SharingPlan& plan) {
  const TaskKind task = TaskKind::VideoPrediction;
  FrameTaskRefs<S> r;
  const std::string& emb = plan.input_embedding.at(task);
  r.embW = &store.value(emb, "W");
  r.embb = &store.value(emb, "b");
  r.gembW = &store.grad(emb, "W");
  r.gembb = &store.grad(emb, "b");
  r.enc = EncoderRefs<S>::bind(store, plan.encoder.at(task));
  const std::string& dec = plan.decoder.at(task);
  r.dec.lstm = LstmRefs<S>::bind(store, dec, "lstm");
  r.dec.att = AttentionRefs<S>::bind(store, plan.attention.at(task));
  r.dec.embW = r.embW;
  r.dec.embb = r.embb;
  r.dec.gembW = r.gembW;
  r.dec.gembb = r.gembb;
  r.dec.outW = &store.value(dec, "out.W");
  r.dec.outb = &store.value(dec, "out.b");
  r.dec.goutW = &store.grad(dec, "out.W");
  r.dec.goutb = &store.grad(dec, "out.b");
  return r;
}

template <typename S>
Tensor<S> embed_token(const Tensor<S>& table, int token) {
  if (token < 0 || static_cast<std::size_t>(token) >= table.rows()) {
    throw DomainError("embed_token: token id " + std::to_string(token) + " out of range");
  }
  const std::size_t e = table.cols();
  Tensor<S> out({e});
  for (std::size_t j = 0; j < e; ++j) out[j] = table.at(token, j);
  return out;
}

template <typename S>
void embed_token_backward(Tensor<S>& grad_table, int token, const Tensor<S>& dembedding) {
  const std::size_t e = grad_table.cols();
  for (std::size_t j = 0; j < e; ++j) grad_table.at(token, j) += dembedding[j];
}

template <typename S>
struct LossResult {
  S loss = 0;
  std::size_t count = 0;    // tokens (token losses) or predicted frames (video loss)
  std::size_t skipped = 0;  // clips shorter than 2 frames
};

namespace detail {

// Cached forward pass of one teacher-forced token example.
template <typename S>
struct TokenExampleRun {
  EncoderCache<S> enc_cache;
  EncoderOutput<S> enc;
  std::vector<Tensor<S>> enc_raw_inputs;   // embedded, pre-dropout
  std::vector<Tensor<S>> enc_input_masks;  // dropout masks (empty when inactive)
  std::vector<int> enc_tokens;             // text-encoder case
  const FeatureSeq<S>* enc_feats = nullptr;
  std::size_t enc_len = 0;
  std::vector<TokenStepCache<S>> steps;
  std::vector<int> fed_tokens;  // token embedded at each step
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  S neg_log_prob_sum = 0;
  std::size_t token_count = 0;
};

template <typename S>
std::vector<Tensor<S>> embed_visual_sequence(const TokenTaskRefs<S>& refs,
                                             const FeatureSeq<S>& feats, std::size_t len) {
  std::vector<Tensor<S>> out(len);
  for (std::size_t t = 0; t < len; ++t) {
    Tensor<S> f({feats[t].size()}, feats[t]);
    out[t] = affine(f, *refs.embW, *refs.embb);
  }
  return out;
}

template <typename S>
TokenExampleRun<S> token_forward(const TokenTaskRefs<S>& refs, const FeatureSeq<S>* feat_src,
                                 const TokenSeq* tok_src, const TokenSeq& target,
                                 const std::vector<std::uint8_t>* mask, const TrainConfig& cfg,
                                 DropoutCtx& dropout) {
  TokenExampleRun<S> run;

  // Encoder inputs, truncated to the unroll cap.
  if (refs.visual_input) {
    run.enc_len = std::min(feat_src->size(), cfg.unroll_visual);
    run.enc_feats = feat_src;
    run.enc_raw_inputs = embed_visual_sequence(refs, *feat_src, run.enc_len);
  } else {
    run.enc_len = std::min(tok_src->size(), cfg.unroll_text);
    run.enc_tokens.assign(tok_src->begin(), tok_src->begin() + run.enc_len);
    run.enc_raw_inputs.resize(run.enc_len);
    for (std::size_t t = 0; t < run.enc_len; ++t) {
      run.enc_raw_inputs[t] = embed_token(*refs.embE, run.enc_tokens[t]);
    }
  }
  run.enc_input_masks.resize(run.enc_len);
  std::vector<Tensor<S>> enc_inputs(run.enc_len);
  for (std::size_t t = 0; t < run.enc_len; ++t) {
    enc_inputs[t] = apply_dropout(run.enc_raw_inputs[t], dropout, &run.enc_input_masks[t]);
  }
  run.enc = encode_sequence(enc_inputs, refs.enc, &run.enc_cache);

  // Teacher-forced decode over [target tokens, eos], capped at unroll_text.
  const std::size_t steps = std::min(target.size() + 1, cfg.unroll_text);
  run.steps.resize(steps);
  run.fed_tokens.resize(steps);
  run.targets.resize(steps);
  run.mask.resize(steps);
  LstmState<S> state = run.enc.final_state;
  for (std::size_t t = 0; t < steps; ++t) {
    run.fed_tokens[t] = t == 0 ? kBosId : target[t - 1];
    run.targets[t] = t < target.size() ? target[t] : kEosId;
    run.mask[t] = mask && t < mask->size() ? (*mask)[t] : 1;
    Tensor<S> emb = embed_token(*refs.dec_embE, run.fed_tokens[t]);
    DecoderStepOutput<S> out =
        decode_step_token(emb, state, run.enc, refs.dec, &run.steps[t], &dropout);
    if (run.mask[t]) {
      run.neg_log_prob_sum -= out.emission[run.targets[t]];
      ++run.token_count;
    }
    state = out.state;
  }
  return run;
}

template <typename S>
void token_backward(const TokenExampleRun<S>& run, const TokenTaskRefs<S>& refs,
                    const TrainConfig& /*cfg*/, S scale) {
  const std::size_t vocab = refs.dec.outb->size();
  std::vector<Tensor<S>> dstates(run.enc.states.size());
  for (auto& d : dstates) d = Tensor<S>({run.enc.states[0].size()});

  const std::size_t hidden = run.enc.final_state.h.size();
  Tensor<S> dh({hidden}), dc({hidden});
  for (std::size_t t = run.steps.size(); t-- > 0;) {
    Tensor<S> demission({vocab});
    if (run.mask[t]) demission[run.targets[t]] = -scale;
    LstmState<S> dprev;
    Tensor<S> demb;
    decode_step_token_backward(run.steps[t], run.enc, refs.dec, demission, dh, dc, dstates, dprev,
                               demb);
    embed_token_backward(*refs.gdec_embE, run.fed_tokens[t], demb);
    dh = std::move(dprev.h);
    dc = std::move(dprev.c);
  }
  LstmState<S> dfinal{std::move(dh), std::move(dc)};
  std::vector<Tensor<S>> dinputs = encode_backward(run.enc_cache, refs.enc, dstates, dfinal);

  for (std::size_t t = 0; t < run.enc_len; ++t) {
    Tensor<S> draw = dropout_backward(dinputs[t], run.enc_input_masks[t]);
    if (refs.visual_input) {
      Tensor<S> f({(*run.enc_feats)[t].size()}, (*run.enc_feats)[t]);
      Tensor<S> dfeat({f.size()});
      affine_backward(f, *refs.embW, draw, *refs.gembW, *refs.gembb, dfeat);
    } else {
      embed_token_backward(*refs.gembE, run.enc_tokens[t], draw);
    }
  }
}

template <typename S>
LossResult<S> token_loss(const TaskBatch<S>& batch, ParameterStore<S>& store,
                         const SharingPlan& plan, const TrainConfig& cfg, TaskKind kind,
                         DropoutCtx* dropout_ctx) {
  if (batch.kind != kind) {
    throw ContractError(std::string("loss called with wrong task kind: batch is ") +
                        task_name(batch.kind) + ", expected " + task_name(kind));
  }
  TokenTaskRefs<S> refs = bind_token_task(store, plan, kind);
  DropoutCtx off;
  DropoutCtx& dropout = dropout_ctx ? *dropout_ctx : off;

  const std::size_t n = batch.token_targets.size();
  std::vector<TokenExampleRun<S>> runs;
  runs.reserve(n);
  LossResult<S> result;
  for (std::size_t e = 0; e < n; ++e) {
    const FeatureSeq<S>* feats =
        kind == TaskKind::Captioning ? &batch.feature_sources[e] : nullptr;
    const TokenSeq* toks =
        kind == TaskKind::EntailmentGeneration ? &batch.token_sources[e] : nullptr;
    const std::vector<std::uint8_t>* mask =
        e < batch.target_masks.size() ? &batch.target_masks[e] : nullptr;
    runs.push_back(
        token_forward(refs, feats, toks, batch.token_targets[e], mask, cfg, dropout));
    result.loss += runs.back().neg_log_prob_sum;
    result.count += runs.back().token_count;
  }
  if (result.count == 0) return result;
  result.loss /= static_cast<S>(result.count);
  const S scale = S(1) / static_cast<S>(result.count);
  for (const auto& run : runs) token_backward(run, refs, cfg, scale);
  return result;
}

}  // namespace detail

// Mean over unmasked target tokens of −log p(w_t | h^d_t); gradients
// accumulate into the groups the plan maps for captioning.
template <typename S>
LossResult<S> captioning_loss(const TaskBatch<S>& batch, ParameterStore<S>& store,
                              const SharingPlan& plan, const TrainConfig& cfg,
                              DropoutCtx* dropout = nullptr) {
  return detail::token_loss(batch, store, plan, cfg, TaskKind::Captioning, dropout);
}

// Identical functional form to captioning_loss; the premise runs through the
// text encoder path with its own word embeddings.
template <typename S>
LossResult<S> entailment_loss(const TaskBatch<S>& batch, ParameterStore<S>& store,
                              const SharingPlan& plan, const TrainConfig& cfg,
                              DropoutCtx* dropout = nullptr) {
  return detail::token_loss(batch, store, plan, cfg, TaskKind::EntailmentGeneration, dropout);
}

// Splits each clip at k = max(1, floor(encode_fraction·n)), encodes the first
// k frames and predicts the rest autoregressively; mean squared L2 distance
// over all predicted frames in the batch.
template <typename S>
LossResult<S> video_prediction_loss(const TaskBatch<S>& batch, ParameterStore<S>& store,
                                    const SharingPlan& plan, const TrainConfig& cfg,
                                    double encode_fraction, DropoutCtx* dropout_ctx = nullptr) {
  if (batch.kind != TaskKind::VideoPrediction) {
    throw ContractError(std::string("video_prediction_loss: batch kind is ") +
                        task_name(batch.kind));
  }
  if (encode_fraction <= 0.0 || encode_fraction >= 1.0) {
    throw DomainError("video_prediction_loss: encode_fraction must be in (0,1)");
  }
  FrameTaskRefs<S> refs = bind_frame_task(store, plan);
  DropoutCtx off;
  DropoutCtx& dropout = dropout_ctx ? *dropout_ctx : off;

  struct Run {
    EncoderCache<S> enc_cache;
    EncoderOutput<S> enc;
    std::vector<Tensor<S>> enc_raw_inputs;
    std::vector<Tensor<S>> enc_input_masks;
    const FeatureSeq<S>* clip;
    std::size_t k = 0, preds = 0;
    std::vector<FrameStepCache<S>> steps;
    std::vector<Tensor<S>> predictions;
  };
  std::vector<Run> runs;
  LossResult<S> result;

  for (const FeatureSeq<S>& clip_full : batch.feature_sources) {
    const std::size_t n = std::min(clip_full.size(), cfg.unroll_visual);
    if (n < 2) {
      ++result.skipped;
      continue;
    }
    Run run;
    run.clip = &clip_full;
    run.k = std::max<std::size_t>(1, static_cast<std::size_t>(encode_fraction * n));
    run.preds = n - run.k;

    run.enc_raw_inputs.resize(run.k);
    run.enc_input_masks.resize(run.k);
    std::vector<Tensor<S>> enc_inputs(run.k);
    for (std::size_t t = 0; t < run.k; ++t) {
      Tensor<S> f({clip_full[t].size()}, clip_full[t]);
      run.enc_raw_inputs[t] = affine(f, *refs.embW, *refs.embb);
      enc_inputs[t] = apply_dropout(run.enc_raw_inputs[t], dropout, &run.enc_input_masks[t]);
    }
    run.enc = encode_sequence(enc_inputs, refs.enc, &run.enc_cache);

    LstmState<S> state = run.enc.final_state;
    run.steps.resize(run.preds);
    run.predictions.resize(run.preds);
    Tensor<S> prev_frame({clip_full[run.k - 1].size()}, clip_full[run.k - 1]);
    for (std::size_t t = 0; t < run.preds; ++t) {
      DecoderStepOutput<S> out =
          decode_step_frame(prev_frame, state, run.enc, refs.dec, &run.steps[t], &dropout);
      run.predictions[t] = out.emission;
      Tensor<S> target({clip_full[run.k + t].size()}, clip_full[run.k + t]);
      result.loss += l2_distance_sq(out.emission, target);
      prev_frame = run.predictions[t];
      state = out.state;
    }
    result.count += run.preds;
    runs.push_back(std::move(run));
  }
  if (result.count == 0) return result;
  result.loss /= static_cast<S>(result.count);
  const S scale = S(1) / static_cast<S>(result.count);

  for (const Run& run : runs) {
    std::vector<Tensor<S>> dstates(run.enc.states.size());
    for (auto& d : dstates) d = Tensor<S>({run.enc.states[0].size()});
    const std::size_t hidden = run.enc.final_state.h.size();
    Tensor<S> dh({hidden}), dc({hidden});
    Tensor<S> dfeed;  // gradient on the prediction fed into the following step
    for (std::size_t t = run.preds; t-- > 0;) {
      const auto& target_vec = (*run.clip)[run.k + t];
      Tensor<S> demission({run.predictions[t].size()});
      for (std::size_t j = 0; j < demission.size(); ++j) {
        demission[j] = S(2) * scale * (run.predictions[t][j] - target_vec[j]);
      }
      if (!dfeed.empty()) {
        for (std::size_t j = 0; j < demission.size(); ++j) demission[j] += dfeed[j];
      }
      LstmState<S> dprev;
      Tensor<S> dprev_frame;
      decode_step_frame_backward(run.steps[t], run.enc, refs.dec, demission, dh, dc, dstates,
                                 dprev, dprev_frame);
      dfeed = std::move(dprev_frame);  // consumed by step t-1 (its prediction fed step t)
      dh = std::move(dprev.h);
      dc = std::move(dprev.c);
    }
    // dfeed now targets the seed frame f_k, which is data; dropped.
    LstmState<S> dfinal{std::move(dh), std::move(dc)};
    std::vector<Tensor<S>> dinputs = encode_backward(run.enc_cache, refs.enc, dstates, dfinal);
    for (std::size_t t = 0; t < run.k; ++t) {
      Tensor<S> draw = dropout_backward(dinputs[t], run.enc_input_masks[t]);
      Tensor<S> f({(*run.clip)[t].size()}, (*run.clip)[t]);
      Tensor<S> dfeat({f.size()});
      affine_backward(f, *refs.embW, draw, *refs.gembW, *refs.gembb, dfeat);
    }
  }
  return result;
}

// Deterministic block cycle: all captioning batches, then video prediction,
// then entailment; repeats.
class TaskScheduler {
 public:
  explicit TaskScheduler(MixingRatio ratio) : ratio_(ratio) {
    if (ratio.total() == 0) throw DomainError("mixing ratio must have at least one mini-batch");
  }

  TaskKind next() {
    const unsigned pos = pos_;
    pos_ = (pos_ + 1) % ratio_.total();
    if (pos < ratio_.captioning) return TaskKind::Captioning;
    if (pos < ratio_.captioning + ratio_.video_prediction) return TaskKind::VideoPrediction;
    return TaskKind::EntailmentGeneration;
  }

  const MixingRatio& ratio() const { return ratio_; }

 private:
  MixingRatio ratio_;
  unsigned pos_ = 0;
};

}  // namespace mts2s
