#pragma once

#include <utility>
#include <vector>

#include "mts2s/dropout.hpp"
#include "mts2s/params.hpp"
#include "mts2s/tensor.hpp"

namespace mts2s {

template <typename S>
struct LstmState {
  Tensor<S> h;
  Tensor<S> c;

  static LstmState zeros(std::size_t hidden) {
    return LstmState{Tensor<S>({hidden}), Tensor<S>({hidden})};
  }
};

// Value+grad references into one LSTM direction's parameter group.
// Gate rows are packed [i; f; g; o] in the 4H x in matrices.
template <typename S>
struct LstmRefs {
  Tensor<S>*Wx, *Wh, *b;
  Tensor<S>*gWx, *gWh, *gb;

  std::size_t hidden() const { return b->size() / 4; }
  std::size_t input() const { return Wx->cols(); }

  static LstmRefs bind(ParameterStore<S>& store, const std::string& group,
                       const std::string& prefix) {
    return LstmRefs{&store.value(group, prefix + ".Wx"), &store.value(group, prefix + ".Wh"),
                    &store.value(group, prefix + ".b"),  &store.grad(group, prefix + ".Wx"),
                    &store.grad(group, prefix + ".Wh"),  &store.grad(group, prefix + ".b")};
  }
};

template <typename S>
struct LstmStepCache {
  Tensor<S> x, h_prev, c_prev;
  Tensor<S> i, f, g, o, c;
};

// Standard gated update: i,f,o = sigmoid, g = tanh, c' = f⊙c + i⊙g, h' = o⊙tanh(c').
template <typename S>
LstmState<S> lstm_step(const Tensor<S>& x, const LstmState<S>& prev, const LstmRefs<S>& w,
                       LstmStepCache<S>* cache = nullptr) {
  const std::size_t hidden = w.hidden();
  if (x.size() != w.input() || prev.h.size() != hidden || prev.c.size() != hidden) {
    throw DimensionError("lstm_step: input " + x.shape_string() + ", state h " +
                         prev.h.shape_string() + " vs Wx " + w.Wx->shape_string());
  }
  Tensor<S> pre({4 * hidden});
  matvec(*w.Wx, x, pre);
  matvec(*w.Wh, prev.h, pre, /*accumulate=*/true);
  for (std::size_t j = 0; j < 4 * hidden; ++j) pre[j] += (*w.b)[j];

  Tensor<S> gi({hidden}), gf({hidden}), gg({hidden}), go({hidden});
  for (std::size_t j = 0; j < hidden; ++j) {
    gi[j] = sigmoid(pre[j]);
    gf[j] = sigmoid(pre[hidden + j]);
    gg[j] = std::tanh(pre[2 * hidden + j]);
    go[j] = sigmoid(pre[3 * hidden + j]);
  }
  LstmState<S> next = LstmState<S>::zeros(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    next.c[j] = gf[j] * prev.c[j] + gi[j] * gg[j];
    next.h[j] = go[j] * std::tanh(next.c[j]);
  }
  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(gi);
    cache->f = std::move(gf);
    cache->g = std::move(gg);
    cache->o = std::move(go);
    cache->c = next.c;
  }
  return next;
}

// Accumulates weight gradients and returns (dx, dprev) for upstream (dh, dc).
template <typename S>
void lstm_step_backward(const LstmStepCache<S>& cache, const LstmRefs<S>& w, const Tensor<S>& dh,
                        const Tensor<S>& dc_in, Tensor<S>& dx, LstmState<S>& dprev) {
  const std::size_t hidden = w.hidden();
  Tensor<S> dpre({4 * hidden});
  dprev = LstmState<S>::zeros(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    const S tc = std::tanh(cache.c[j]);
    const S d_o = dh[j] * tc;
    const S dc = dc_in[j] + dh[j] * cache.o[j] * (S(1) - tc * tc);
    const S d_f = dc * cache.c_prev[j];
    const S d_i = dc * cache.g[j];
    const S d_g = dc * cache.i[j];
    dprev.c[j] = dc * cache.f[j];
    dpre[j] = d_i * cache.i[j] * (S(1) - cache.i[j]);
    dpre[hidden + j] = d_f * cache.f[j] * (S(1) - cache.f[j]);
    dpre[2 * hidden + j] = d_g * (S(1) - cache.g[j] * cache.g[j]);
    dpre[3 * hidden + j] = d_o * cache.o[j] * (S(1) - cache.o[j]);
  }
  outer_accum(dpre, cache.x, *w.gWx);
  outer_accum(dpre, cache.h_prev, *w.gWh);
  for (std::size_t j = 0; j < 4 * hidden; ++j) (*w.gb)[j] += dpre[j];
  if (dx.size() != w.input()) dx = Tensor<S>({w.input()});
  dx.zero();
  matvec_transpose_accum(*w.Wx, dpre, dx);
  matvec_transpose_accum(*w.Wh, dpre, dprev.h);
}

// Maps the concatenated last-forward/first-backward encoder states to the
// decoder's initial state: tanh-squashed for h (keeps the LstmState bound),
// plain affine for c.
template <typename S>
struct BridgeRefs {
  Tensor<S>*Wh, *bh, *Wc, *bc;
  Tensor<S>*gWh, *gbh, *gWc, *gbc;

  static BridgeRefs bind(ParameterStore<S>& store, const std::string& group) {
    return BridgeRefs{&store.value(group, "bridge.Wh"), &store.value(group, "bridge.bh"),
                      &store.value(group, "bridge.Wc"), &store.value(group, "bridge.bc"),
                      &store.grad(group, "bridge.Wh"),  &store.grad(group, "bridge.bh"),
                      &store.grad(group, "bridge.Wc"),  &store.grad(group, "bridge.bc")};
  }
};

template <typename S>
struct EncoderRefs {
  LstmRefs<S> fwd, bwd;
  BridgeRefs<S> bridge;

  static EncoderRefs bind(ParameterStore<S>& store, const std::string& group) {
    return EncoderRefs{LstmRefs<S>::bind(store, group, "fwd"), LstmRefs<S>::bind(store, group, "bwd"),
                       BridgeRefs<S>::bind(store, group)};
  }
};

// Per-step forward‖backward concatenations plus the bridged decoder-init state.
template <typename S>
struct EncoderOutput {
  std::vector<Tensor<S>> states;  // each [2H]
  LstmState<S> final_state;
};

template <typename S>
struct EncoderCache {
  std::vector<LstmStepCache<S>> fwd_steps;
  std::vector<LstmStepCache<S>> bwd_steps;  // bwd_steps[j] processed input position n-1-j
  Tensor<S> bridge_h_in, bridge_c_in;       // [2H] concatenations fed to the bridge
  Tensor<S> final_h;                        // tanh output, needed for its backward
};

template <typename S>
EncoderOutput<S> encode_sequence(const std::vector<Tensor<S>>& inputs, const EncoderRefs<S>& w,
                                 EncoderCache<S>* cache = nullptr) {
  if (inputs.empty()) throw DomainError("encode_sequence: empty input sequence");
  const std::size_t n = inputs.size();
  const std::size_t hidden = w.fwd.hidden();

  std::vector<LstmStepCache<S>> fwd_steps(n), bwd_steps(n);
  std::vector<Tensor<S>> hf(n), hb(n);
  LstmState<S> sf = LstmState<S>::zeros(hidden);
  for (std::size_t t = 0; t < n; ++t) {
    sf = lstm_step(inputs[t], sf, w.fwd, &fwd_steps[t]);
    hf[t] = sf.h;
  }
  LstmState<S> sb = LstmState<S>::zeros(hidden);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t pos = n - 1 - j;
    sb = lstm_step(inputs[pos], sb, w.bwd, &bwd_steps[j]);
    hb[pos] = sb.h;
  }

  EncoderOutput<S> out;
  out.states.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    Tensor<S> s({2 * hidden});
    for (std::size_t j = 0; j < hidden; ++j) {
      s[j] = hf[t][j];
      s[hidden + j] = hb[t][j];
    }
    out.states[t] = std::move(s);
  }

  Tensor<S> h_in({2 * hidden}), c_in({2 * hidden});
  for (std::size_t j = 0; j < hidden; ++j) {
    h_in[j] = sf.h[j];
    h_in[hidden + j] = sb.h[j];
    c_in[j] = sf.c[j];
    c_in[hidden + j] = sb.c[j];
  }
  Tensor<S> h0 = affine(h_in, *w.bridge.Wh, *w.bridge.bh);
  for (std::size_t j = 0; j < h0.size(); ++j) h0[j] = std::tanh(h0[j]);
  out.final_state.h = h0;
  out.final_state.c = affine(c_in, *w.bridge.Wc, *w.bridge.bc);

  if (cache) {
    cache->fwd_steps = std::move(fwd_steps);
    cache->bwd_steps = std::move(bwd_steps);
    cache->bridge_h_in = std::move(h_in);
    cache->bridge_c_in = std::move(c_in);
    cache->final_h = out.final_state.h;
  }
  return out;
}

// Accumulates weight gradients; returns gradients w.r.t. the embedded inputs.
// dstates holds one [2H] gradient per step; dfinal the gradient on the bridged
// initial decoder state.
template <typename S>
std::vector<Tensor<S>> encode_backward(const EncoderCache<S>& cache, const EncoderRefs<S>& w,
                                       const std::vector<Tensor<S>>& dstates,
                                       const LstmState<S>& dfinal) {
  const std::size_t n = cache.fwd_steps.size();
  if (dstates.size() != n) {
    throw ContractError("encode_backward: cached steps and dstates disagree");
  }
  const std::size_t hidden = w.fwd.hidden();

  // Bridge backward.
  Tensor<S> dpre_h({hidden});
  for (std::size_t j = 0; j < hidden; ++j) {
    dpre_h[j] = dfinal.h[j] * (S(1) - cache.final_h[j] * cache.final_h[j]);
  }
  Tensor<S> dh_in({2 * hidden}), dc_in({2 * hidden});
  affine_backward(cache.bridge_h_in, *w.bridge.Wh, dpre_h, *w.bridge.gWh, *w.bridge.gbh, dh_in);
  affine_backward(cache.bridge_c_in, *w.bridge.Wc, dfinal.c, *w.bridge.gWc, *w.bridge.gbc, dc_in);

  std::vector<Tensor<S>> dinputs(n);
  const std::size_t in_dim = w.fwd.input();
  for (std::size_t t = 0; t < n; ++t) dinputs[t] = Tensor<S>({in_dim});

  // Forward direction, reverse time. The bridge consumed (h, c) of the last step.
  Tensor<S> dh({hidden}), dc({hidden}), dx({in_dim});
  for (std::size_t j = 0; j < hidden; ++j) {
    dh[j] = dh_in[j];
    dc[j] = dc_in[j];
  }
  for (std::size_t t = n; t-- > 0;) {
    for (std::size_t j = 0; j < hidden; ++j) dh[j] += dstates[t][j];
    LstmState<S> dprev;
    lstm_step_backward(cache.fwd_steps[t], w.fwd, dh, dc, dx, dprev);
    for (std::size_t j = 0; j < in_dim; ++j) dinputs[t][j] += dx[j];
    dh = std::move(dprev.h);
    dc = std::move(dprev.c);
  }

  // Backward direction: step j covered input position n-1-j; its last step
  // (j = n-1, position 0) fed the bridge.
  for (std::size_t j = 0; j < hidden; ++j) {
    dh[j] = dh_in[hidden + j];
    dc[j] = dc_in[hidden + j];
  }
  for (std::size_t j = n; j-- > 0;) {
    const std::size_t pos = n - 1 - j;
    for (std::size_t k = 0; k < hidden; ++k) dh[k] += dstates[pos][hidden + k];
    LstmState<S> dprev;
    lstm_step_backward(cache.bwd_steps[j], w.bwd, dh, dc, dx, dprev);
    for (std::size_t k = 0; k < in_dim; ++k) dinputs[pos][k] += dx[k];
    dh = std::move(dprev.h);
    dc = std::move(dprev.c);
  }
  return dinputs;
}

template <typename S>
struct AttentionRefs {
  Tensor<S>*Wenc, *Wdec, *b, *v;
  Tensor<S>*gWenc, *gWdec, *gb, *gv;

  static AttentionRefs bind(ParameterStore<S>& store, const std::string& group) {
    return AttentionRefs{&store.value(group, "Wenc"), &store.value(group, "Wdec"),
                         &store.value(group, "b"),    &store.value(group, "v"),
                         &store.grad(group, "Wenc"),  &store.grad(group, "Wdec"),
                         &store.grad(group, "b"),     &store.grad(group, "v")};
  }
};

template <typename S>
struct AttentionCache {
  std::vector<Tensor<S>> u;  // tanh activations per source step [A]
  Tensor<S> weights;         // alpha [n]
  Tensor<S> h_prev;          // query
};

// e_i = v·tanh(Wenc·state_i + Wdec·h_prev + b); weights = softmax(e);
// context = Σ alpha_i state_i.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> attend(const LstmState<S>& dec_prev, const EncoderOutput<S>& enc,
                                       const AttentionRefs<S>& w,
                                       AttentionCache<S>* cache = nullptr) {
  if (enc.states.empty()) throw DomainError("attend: empty encoder output");
  const std::size_t n = enc.states.size();
  const std::size_t att = w.b->size();
  Tensor<S> query_part({att});
  matvec(*w.Wdec, dec_prev.h, query_part);
  for (std::size_t j = 0; j < att; ++j) query_part[j] += (*w.b)[j];

  std::vector<Tensor<S>> u(n);
  Tensor<S> scores({n});
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<S> z({att});
    matvec(*w.Wenc, enc.states[i], z);
    S e = 0;
    for (std::size_t j = 0; j < att; ++j) {
      z[j] = std::tanh(z[j] + query_part[j]);
      e += (*w.v)[j] * z[j];
    }
    u[i] = std::move(z);
    scores[i] = e;
  }
  Tensor<S> weights = softmax(scores);
  const std::size_t dim = enc.states[0].size();
  Tensor<S> context({dim});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) context[j] += weights[i] * enc.states[i][j];
  }
  if (cache) {
    cache->u = std::move(u);
    cache->weights = weights;
    cache->h_prev = dec_prev.h;
  }
  return {std::move(context), std::move(weights)};
}

// Accumulates attention weight gradients plus per-step encoder-state gradients
// and the query gradient.
template <typename S>
void attend_backward(const AttentionCache<S>& cache, const EncoderOutput<S>& enc,
                     const AttentionRefs<S>& w, const Tensor<S>& dcontext,
                     std::vector<Tensor<S>>& dstates, Tensor<S>& dh_prev) {
  const std::size_t n = enc.states.size();
  const std::size_t att = w.b->size();
  if (dstates.size() != n) throw ContractError("attend_backward: dstates size mismatch");

  Tensor<S> dalpha({n});
  for (std::size_t i = 0; i < n; ++i) {
    S acc = 0;
    for (std::size_t j = 0; j < dcontext.size(); ++j) acc += dcontext[j] * enc.states[i][j];
    dalpha[i] = acc;
    for (std::size_t j = 0; j < dcontext.size(); ++j) {
      dstates[i][j] += cache.weights[i] * dcontext[j];
    }
  }
  Tensor<S> de = softmax_backward(cache.weights, dalpha);
  Tensor<S> dz({att});
  for (std::size_t i = 0; i < n; ++i) {
    if (de[i] == S(0)) continue;
    for (std::size_t j = 0; j < att; ++j) {
      (*w.gv)[j] += de[i] * cache.u[i][j];
      dz[j] = de[i] * (*w.v)[j] * (S(1) - cache.u[i][j] * cache.u[i][j]);
    }
    outer_accum(dz, enc.states[i], *w.gWenc);
    outer_accum(dz, cache.h_prev, *w.gWdec);
    for (std::size_t j = 0; j < att; ++j) (*w.gb)[j] += dz[j];
    matvec_transpose_accum(*w.Wenc, dz, dstates[i]);
    matvec_transpose_accum(*w.Wdec, dz, dh_prev);
  }
}

template <typename S>
struct DecoderStepOutput {
  LstmState<S> state;
  Tensor<S> attention_weights;
  Tensor<S> emission;  // token log-probabilities, or the predicted frame feature
};

template <typename S>
struct TokenDecoderRefs {
  LstmRefs<S> lstm;
  AttentionRefs<S> att;
  Tensor<S>*outW, *outb;
  Tensor<S>*goutW, *goutb;
};

template <typename S>
struct FrameDecoderRefs {
  LstmRefs<S> lstm;
  AttentionRefs<S> att;
  Tensor<S>*embW, *embb;  // visual embedding applied to the fed-back prediction
  Tensor<S>*gembW, *gembb;
  Tensor<S>*outW, *outb;
  Tensor<S>*goutW, *goutb;
};

template <typename S>
struct TokenStepCache {
  AttentionCache<S> att;
  LstmStepCache<S> lstm;  // lstm.x is the (possibly dropped) [embedding ‖ context] input
  Tensor<S> input_mask;
  Tensor<S> h_dropped, h_mask;
  Tensor<S> probs;  // softmax of the output logits
};

template <typename S>
struct FrameStepCache {
  AttentionCache<S> att;
  LstmStepCache<S> lstm;
  Tensor<S> prev_frame;
  Tensor<S> input_mask;
  Tensor<S> h_dropped, h_mask;
};

namespace detail {

template <typename S>
Tensor<S> concat2(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out({a.size() + b.size()});
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j];
  for (std::size_t j = 0; j < b.size(); ++j) out[a.size() + j] = b[j];
  return out;
}

}  // namespace detail

// Attention from the previous decoder state, then one LSTM step over
// [embedding ‖ context]; emission is the log-softmax of the output projection.
template <typename S>
DecoderStepOutput<S> decode_step_token(const Tensor<S>& prev_embedding, const LstmState<S>& prev,
                                       const EncoderOutput<S>& enc, const TokenDecoderRefs<S>& w,
                                       TokenStepCache<S>* cache = nullptr,
                                       DropoutCtx* dropout = nullptr) {
  TokenStepCache<S> local;
  TokenStepCache<S>& cc = cache ? *cache : local;
  DropoutCtx off;
  DropoutCtx& dctx = dropout ? *dropout : off;

  auto [context, weights] = attend(prev, enc, w.att, &cc.att);
  Tensor<S> raw = detail::concat2(prev_embedding, context);
  Tensor<S> x = apply_dropout(raw, dctx, &cc.input_mask);

  DecoderStepOutput<S> out;
  out.state = lstm_step(x, prev, w.lstm, &cc.lstm);
  out.attention_weights = std::move(weights);

  cc.h_dropped = apply_dropout(out.state.h, dctx, &cc.h_mask);
  Tensor<S> logits = affine(cc.h_dropped, *w.outW, *w.outb);
  cc.probs = softmax(logits);
  out.emission = log_softmax(logits);
  return out;
}

// demission is the gradient on the log-probabilities; dh_in/dc_in arrive from
// the next time step. Returns the previous-state and embedding gradients and
// accumulates encoder-state gradients into dstates.
template <typename S>
void decode_step_token_backward(const TokenStepCache<S>& cache, const EncoderOutput<S>& enc,
                                const TokenDecoderRefs<S>& w, const Tensor<S>& demission,
                                const Tensor<S>& dh_in, const Tensor<S>& dc_in,
                                std::vector<Tensor<S>>& dstates, LstmState<S>& dprev,
                                Tensor<S>& dembedding) {
  // y = log_softmax(z):  dz = dy − softmax(z) · Σ dy
  S dsum = 0;
  for (std::size_t j = 0; j < demission.size(); ++j) dsum += demission[j];
  Tensor<S> dlogits(demission.shape());
  for (std::size_t j = 0; j < demission.size(); ++j) {
    dlogits[j] = demission[j] - cache.probs[j] * dsum;
  }
  Tensor<S> dh_dropped({cache.h_dropped.size()});
  affine_backward(cache.h_dropped, *w.outW, dlogits, *w.goutW, *w.goutb, dh_dropped);
  Tensor<S> dh = dropout_backward(dh_dropped, cache.h_mask);
  for (std::size_t j = 0; j < dh.size(); ++j) dh[j] += dh_in[j];

  Tensor<S> dx;
  lstm_step_backward(cache.lstm, w.lstm, dh, dc_in, dx, dprev);
  Tensor<S> draw = dropout_backward(dx, cache.input_mask);

  const std::size_t emb_dim = draw.size() - enc.states[0].size();
  dembedding = Tensor<S>({emb_dim});
  Tensor<S> dcontext({enc.states[0].size()});
  for (std::size_t j = 0; j < emb_dim; ++j) dembedding[j] = draw[j];
  for (std::size_t j = 0; j < dcontext.size(); ++j) dcontext[j] = draw[emb_dim + j];
  attend_backward(cache.att, enc, w.att, dcontext, dstates, dprev.h);
}

// Same recurrence as the token step, but the previous *prediction* is embedded
// through the visual embedding and the emission is a plain affine projection
// into feature space.
template <typename S>
DecoderStepOutput<S> decode_step_frame(const Tensor<S>& prev_frame, const LstmState<S>& prev,
                                       const EncoderOutput<S>& enc, const FrameDecoderRefs<S>& w,
                                       FrameStepCache<S>* cache = nullptr,
                                       DropoutCtx* dropout = nullptr) {
  FrameStepCache<S> local;
  FrameStepCache<S>& cc = cache ? *cache : local;
  DropoutCtx off;
  DropoutCtx& dctx = dropout ? *dropout : off;

  auto [context, weights] = attend(prev, enc, w.att, &cc.att);
  Tensor<S> embedded = affine(prev_frame, *w.embW, *w.embb);
  Tensor<S> raw = detail::concat2(embedded, context);
  Tensor<S> x = apply_dropout(raw, dctx, &cc.input_mask);

  DecoderStepOutput<S> out;
  out.state = lstm_step(x, prev, w.lstm, &cc.lstm);
  out.attention_weights = std::move(weights);

  cc.prev_frame = prev_frame;
  cc.h_dropped = apply_dropout(out.state.h, dctx, &cc.h_mask);
  out.emission = affine(cc.h_dropped, *w.outW, *w.outb);
  return out;
}

// Returns the gradient w.r.t. the fed-in previous frame so chained predictions
// backpropagate through their own feed-forward path.
template <typename S>
void decode_step_frame_backward(const FrameStepCache<S>& cache, const EncoderOutput<S>& enc,
                                const FrameDecoderRefs<S>& w, const Tensor<S>& demission,
                                const Tensor<S>& dh_in, const Tensor<S>& dc_in,
                                std::vector<Tensor<S>>& dstates, LstmState<S>& dprev,
                                Tensor<S>& dprev_frame) {
  Tensor<S> dh_dropped({cache.h_dropped.size()});
  affine_backward(cache.h_dropped, *w.outW, demission, *w.goutW, *w.goutb, dh_dropped);
  Tensor<S> dh = dropout_backward(dh_dropped, cache.h_mask);
  for (std::size_t j = 0; j < dh.size(); ++j) dh[j] += dh_in[j];

  Tensor<S> dx;
  lstm_step_backward(cache.lstm, w.lstm, dh, dc_in, dx, dprev);
  Tensor<S> draw = dropout_backward(dx, cache.input_mask);

  const std::size_t emb_dim = draw.size() - enc.states[0].size();
  Tensor<S> dembedded({emb_dim});
  Tensor<S> dcontext({enc.states[0].size()});
  for (std::size_t j = 0; j < emb_dim; ++j) dembedded[j] = draw[j];
  for (std::size_t j = 0; j < dcontext.size(); ++j) dcontext[j] = draw[emb_dim + j];

  dprev_frame = Tensor<S>({cache.prev_frame.size()});
  affine_backward(cache.prev_frame, *w.embW, dembedded, *w.gembW, *w.gembb, dprev_frame);
  attend_backward(cache.att, enc, w.att, dcontext, dstates, dprev.h);
}

}  // namespace mts2s
