#pragma once

#include "mts2s/errors.hpp"
#include "mts2s/rng.hpp"
#include "mts2s/tensor.hpp"

namespace mts2s {

// Inverted dropout on the non-recurrent (vertical) LSTM connections. In eval
// mode, or at rate 0, the mask stays empty and the input passes through.
struct DropoutCtx {
  double rate = 0.0;
  bool training = false;
  Rng* rng = nullptr;

  bool active() const { return training && rate > 0.0; }
};

template <typename S>
Tensor<S> apply_dropout(const Tensor<S>& x, DropoutCtx& ctx, Tensor<S>* mask_out = nullptr) {
  if (ctx.rate < 0.0 || ctx.rate >= 1.0) throw DomainError("dropout rate must be in [0,1)");
  if (!ctx.active()) {
    if (mask_out) *mask_out = Tensor<S>();
    return x;
  }
  const S keep_scale = static_cast<S>(1.0 / (1.0 - ctx.rate));
  Tensor<S> mask(x.shape());
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool keep = ctx.rng->uniform() >= ctx.rate;
    mask[i] = keep ? keep_scale : S(0);
    y[i] = x[i] * mask[i];
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

// dy through a recorded mask; empty mask means dropout was inactive.
template <typename S>
Tensor<S> dropout_backward(const Tensor<S>& dy, const Tensor<S>& mask) {
  if (mask.empty()) return dy;
  Tensor<S> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

}  // namespace mts2s
