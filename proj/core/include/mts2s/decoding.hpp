#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "mts2s/multitask.hpp"
#include "mts2s/network.hpp"

namespace mts2s {

// A stepper encapsulates model(s) plus one encoded source:
//   State start();                                      — decoder initial state
//   std::pair<State, std::vector<double>> step(state, prev_token);
//   std::size_t vocab() const;
// States are immutable values; step never mutates the stepper's parameters.

template <typename State>
struct BeamHypothesis {
  TokenSeq tokens;  // includes the trailing end-of-sequence once finished
  double log_prob = 0;
  State state;
  bool finished = false;
};

// Emitted caption: hypothesis tokens without the trailing end-of-sequence.
template <typename State>
TokenSeq emitted_tokens(const BeamHypothesis<State>& hyp) {
  TokenSeq t = hyp.tokens;
  if (!t.empty() && t.back() == kEosId) t.pop_back();
  return t;
}

// Argmax decoding with ties broken toward the lowest vocabulary index.
template <typename Stepper>
TokenSeq greedy_decode(Stepper& stepper, std::size_t max_len) {
  TokenSeq out;
  auto state = stepper.start();
  int prev = kBosId;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto [next_state, logp] = stepper.step(state, prev);
    std::size_t best = 0;
    for (std::size_t j = 1; j < logp.size(); ++j) {
      if (logp[j] > logp[best]) best = j;
    }
    if (static_cast<int>(best) == kEosId) break;
    out.push_back(static_cast<int>(best));
    prev = static_cast<int>(best);
    state = std::move(next_state);
  }
  return out;
}

// Standard beam search: expand each live hypothesis by its top-width tokens,
// keep the global top-width by total log-probability, retire finished
// hypotheses to a pool. Returns pool ∪ live ranked by log-probability (or by
// per-token log-probability when length_norm is set). Deterministic: token
// ties break toward the lower index, score ties keep insertion order.
template <typename Stepper>
std::vector<BeamHypothesis<typename Stepper::State>> beam_decode(Stepper& stepper,
                                                                 std::size_t width,
                                                                 std::size_t max_len,
                                                                 bool length_norm = false) {
  if (width == 0) throw DomainError("beam_decode: width must be >= 1");
  using Hyp = BeamHypothesis<typename Stepper::State>;

  std::vector<Hyp> live;
  live.push_back(Hyp{{}, 0.0, stepper.start(), false});
  std::vector<Hyp> pool;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Hyp> candidates;
    candidates.reserve(live.size() * width);
    for (const Hyp& hyp : live) {
      const int prev = hyp.tokens.empty() ? kBosId : hyp.tokens.back();
      auto [next_state, logp] = stepper.step(hyp.state, prev);
      // Top-width tokens of this hypothesis.
      std::vector<std::size_t> order(logp.size());
      for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
      const std::size_t take = std::min(width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                        order.end(), [&](std::size_t a, std::size_t b) {
                          if (logp[a] != logp[b]) return logp[a] > logp[b];
                          return a < b;
                        });
      for (std::size_t r = 0; r < take; ++r) {
        const int tok = static_cast<int>(order[r]);
        Hyp next;
        next.tokens = hyp.tokens;
        next.tokens.push_back(tok);
        next.log_prob = hyp.log_prob + logp[tok];
        next.state = next_state;
        next.finished = tok == kEosId;
        candidates.push_back(std::move(next));
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hyp& a, const Hyp& b) { return a.log_prob > b.log_prob; });
    if (candidates.size() > width) candidates.resize(width);
    live.clear();
    for (Hyp& c : candidates) {
      if (c.finished) {
        pool.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }

  std::vector<Hyp> result = std::move(pool);
  for (Hyp& h : live) result.push_back(std::move(h));
  auto rank = [&](const Hyp& h) {
    if (!length_norm) return h.log_prob;
    return h.log_prob / std::max<double>(1.0, static_cast<double>(h.tokens.size()));
  };
  std::stable_sort(result.begin(), result.end(),
                   [&](const Hyp& a, const Hyp& b) { return rank(a) > rank(b); });
  return result;
}

// Arithmetic mean of the models' per-step probability distributions
// (probabilities, not logits); the result sums to 1.
inline std::vector<double> ensemble_step_distribution(
    const std::vector<std::vector<double>>& member_log_probs) {
  if (member_log_probs.empty()) throw DomainError("ensemble: no members");
  const std::size_t vocab = member_log_probs[0].size();
  for (const auto& lp : member_log_probs) {
    if (lp.size() != vocab) {
      throw ContractError("ensemble: vocabulary mismatch (" + std::to_string(lp.size()) + " vs " +
                          std::to_string(vocab) + ")");
    }
  }
  std::vector<double> mean(vocab, 0.0);
  for (const auto& lp : member_log_probs) {
    for (std::size_t j = 0; j < vocab; ++j) mean[j] += std::exp(lp[j]);
  }
  for (double& p : mean) p /= static_cast<double>(member_log_probs.size());
  return mean;
}

// Binds one token-emitting model to one encoded source.
template <typename S>
class ModelTokenStepper {
 public:
  using State = LstmState<S>;

  ModelTokenStepper(TokenTaskRefs<S> refs, EncoderOutput<S> enc)
      : refs_(std::move(refs)), enc_(std::move(enc)) {}

  // Encodes a visual or token source with dropout off.
  static ModelTokenStepper for_features(ParameterStore<S>& store, const SharingPlan& plan,
                                        const FeatureSeq<S>& features, const TrainConfig& cfg) {
    TokenTaskRefs<S> refs = bind_token_task(store, plan, TaskKind::Captioning);
    const std::size_t len = std::min(features.size(), cfg.unroll_visual);
    std::vector<Tensor<S>> inputs(len);
    for (std::size_t t = 0; t < len; ++t) {
      Tensor<S> f({features[t].size()}, features[t]);
      inputs[t] = affine(f, *refs.embW, *refs.embb);
    }
    EncoderOutput<S> enc = encode_sequence(inputs, refs.enc);
    return ModelTokenStepper(std::move(refs), std::move(enc));
  }

  static ModelTokenStepper for_tokens(ParameterStore<S>& store, const SharingPlan& plan,
                                      const TokenSeq& tokens, const TrainConfig& cfg) {
    TokenTaskRefs<S> refs = bind_token_task(store, plan, TaskKind::EntailmentGeneration);
    const std::size_t len = std::min(tokens.size(), cfg.unroll_text);
    std::vector<Tensor<S>> inputs(len);
    for (std::size_t t = 0; t < len; ++t) inputs[t] = embed_token(*refs.embE, tokens[t]);
    EncoderOutput<S> enc = encode_sequence(inputs, refs.enc);
    return ModelTokenStepper(std::move(refs), std::move(enc));
  }

  State start() const { return enc_.final_state; }

  std::pair<State, std::vector<double>> step(const State& state, int prev_token) const {
    Tensor<S> emb = embed_token(*refs_.dec_embE, prev_token);
    DecoderStepOutput<S> out = decode_step_token(emb, state, enc_, refs_.dec);
    std::vector<double> logp(out.emission.size());
    for (std::size_t j = 0; j < logp.size(); ++j) logp[j] = static_cast<double>(out.emission[j]);
    return {std::move(out.state), std::move(logp)};
  }

  std::size_t vocab() const { return refs_.dec.outb->size(); }
  const EncoderOutput<S>& encoder_output() const { return enc_; }

 private:
  TokenTaskRefs<S> refs_;
  EncoderOutput<S> enc_;
};

// Averages member probability distributions at every step, before pruning.
template <typename S>
class EnsembleTokenStepper {
 public:
  using State = std::vector<LstmState<S>>;

  explicit EnsembleTokenStepper(std::vector<ModelTokenStepper<S>> members)
      : members_(std::move(members)) {
    if (members_.empty()) throw DomainError("ensemble: no members");
    for (const auto& m : members_) {
      if (m.vocab() != members_[0].vocab()) {
        throw ContractError("ensemble: members disagree on vocabulary size");
      }
    }
  }

  State start() const {
    State s;
    s.reserve(members_.size());
    for (const auto& m : members_) s.push_back(m.start());
    return s;
  }

  std::pair<State, std::vector<double>> step(const State& state, int prev_token) const {
    State next(members_.size());
    std::vector<std::vector<double>> member_logp(members_.size());
    for (std::size_t k = 0; k < members_.size(); ++k) {
      auto [s, lp] = members_[k].step(state[k], prev_token);
      next[k] = std::move(s);
      member_logp[k] = std::move(lp);
    }
    std::vector<double> probs = ensemble_step_distribution(member_logp);
    std::vector<double> logp(probs.size());
    for (std::size_t j = 0; j < probs.size(); ++j) logp[j] = std::log(probs[j]);
    return {std::move(next), std::move(logp)};
  }

  std::size_t vocab() const { return members_[0].vocab(); }

 private:
  std::vector<ModelTokenStepper<S>> members_;
};

// Autoregressive frame prediction: each emission feeds the next step.
template <typename S>
FeatureSeq<S> rollout_frames(ParameterStore<S>& store, const SharingPlan& plan,
                             const FeatureSeq<S>& source, std::size_t horizon,
                             const TrainConfig& cfg) {
  if (horizon == 0) throw DomainError("rollout_frames: horizon must be >= 1");
  if (source.empty()) throw DomainError("rollout_frames: empty source");
  FrameTaskRefs<S> refs = bind_frame_task(store, plan);

  const std::size_t len = std::min(source.size(), cfg.unroll_visual);
  std::vector<Tensor<S>> inputs(len);
  for (std::size_t t = 0; t < len; ++t) {
    Tensor<S> f({source[t].size()}, source[t]);
    inputs[t] = affine(f, *refs.embW, *refs.embb);
  }
  EncoderOutput<S> enc = encode_sequence(inputs, refs.enc);

  FeatureSeq<S> out;
  out.reserve(horizon);
  LstmState<S> state = enc.final_state;
  Tensor<S> prev({source[len - 1].size()}, source[len - 1]);
  for (std::size_t t = 0; t < horizon; ++t) {
    DecoderStepOutput<S> step = decode_step_frame(prev, state, enc, refs.dec);
    out.push_back(step.emission.vec());
    prev = std::move(step.emission);
    state = std::move(step.state);
  }
  return out;
}

}  // namespace mts2s
