#include <cmath>
#include <functional>
#include <map>

#include "doctest.h"
#include "mts2s/decoding.hpp"
#include "mts2s/init.hpp"

using namespace mts2s;

namespace {

// Token-level tabular model: the state is the consumed history, and a callback
// supplies p(token | history).
struct ToyStepper {
  using State = TokenSeq;
  std::function<std::vector<double>(const TokenSeq&)> dist;
  std::size_t vocab_size = 0;

  State start() const { return {}; }
  std::pair<State, std::vector<double>> step(const State& s, int prev) const {
    State next = s;
    if (prev != kBosId) next.push_back(prev);
    std::vector<double> p = dist(next);
    std::vector<double> logp(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) logp[j] = std::log(std::max(p[j], 1e-300));
    return {std::move(next), std::move(logp)};
  }
  std::size_t vocab() const { return vocab_size; }
};

// Hand-set probabilities where greedy is suboptimal. Vocabulary: 2 = eos,
// 3 = "a", 4 = "b"; ids 0/1 get negligible mass.
ToyStepper greedy_trap() {
  ToyStepper toy;
  toy.vocab_size = 5;
  toy.dist = [](const TokenSeq& hist) -> std::vector<double> {
    const double tiny = 1e-12;
    if (hist.empty()) return {tiny, tiny, tiny, 0.6, 0.4 - 3 * tiny};  // a likelier than b
    if (hist == TokenSeq{4}) return {tiny, tiny, 0.9, 0.05, 0.05 - 2 * tiny};  // b then eos
    // After "a" (and anywhere else): mass spread, no good finish.
    return {tiny, tiny, 0.2, 0.5, 0.3 - 2 * tiny};
  };
  return toy;
}

// Exhaustive enumeration over all sequences up to max_len: the independent
// search oracle.
void enumerate_best(const ToyStepper& toy, TokenSeq prefix, double logp, std::size_t max_len,
                    double& best, TokenSeq& best_seq) {
  if (!prefix.empty() && prefix.back() == kEosId) {
    if (logp > best) {
      best = logp;
      best_seq = prefix;
    }
    return;
  }
  if (prefix.size() == max_len) {
    if (logp > best) {
      best = logp;
      best_seq = prefix;
    }
    return;
  }
  std::vector<double> p = toy.dist(prefix);
  for (std::size_t tok = 0; tok < p.size(); ++tok) {
    TokenSeq next = prefix;
    next.push_back(static_cast<int>(tok));
    enumerate_best(toy, next, logp + std::log(std::max(p[tok], 1e-300)), max_len, best, best_seq);
  }
}

}  // namespace

TEST_CASE("greedy walks the argmax path and stops at eos") {
  ToyStepper toy = greedy_trap();
  TokenSeq g = greedy_decode(toy, 3);
  CHECK(g == TokenSeq{3, 3, 3});  // never reaches eos within 3 steps

  // A model that puts probability 1 on eos at step 1 yields an empty caption.
  ToyStepper eos_first;
  eos_first.vocab_size = 4;
  eos_first.dist = [](const TokenSeq&) -> std::vector<double> { return {0, 0, 1.0, 0}; };
  CHECK(greedy_decode(eos_first, 5).empty());
}

TEST_CASE("beam width 1 equals greedy token-for-token") {
  ToyStepper toy = greedy_trap();
  TokenSeq g = greedy_decode(toy, 3);
  auto hyps = beam_decode(toy, 1, 3);
  REQUIRE(!hyps.empty());
  CHECK(emitted_tokens(hyps[0]) == g);
}

TEST_CASE("beam width 2 solves the greedy trap (verified by enumeration)") {
  ToyStepper toy = greedy_trap();

  double best = -1e300;
  TokenSeq best_seq;
  enumerate_best(toy, {}, 0.0, 3, best, best_seq);
  CHECK(best_seq == TokenSeq{4, kEosId});
  CHECK(best == doctest::Approx(std::log(0.4 - 3e-12) + std::log(0.9)).epsilon(1e-12));

  auto hyps1 = beam_decode(toy, 1, 3);
  auto hyps2 = beam_decode(toy, 2, 3);
  CHECK(hyps2[0].log_prob > hyps1[0].log_prob);
  CHECK(hyps2[0].tokens == best_seq);
  CHECK(hyps2[0].log_prob == doctest::Approx(best).epsilon(1e-12));
  CHECK(hyps2[0].finished);
}

TEST_CASE("beam rejects width 0") {
  ToyStepper toy = greedy_trap();
  CHECK_THROWS_AS(beam_decode(toy, 0, 3), DomainError);
}

TEST_CASE("hypothesis log-probabilities are non-increasing along tokens") {
  ToyStepper toy = greedy_trap();
  for (const auto& h : beam_decode(toy, 3, 3)) {
    CHECK(h.log_prob <= 0.0);
    CHECK(h.finished == (!h.tokens.empty() && h.tokens.back() == kEosId));
  }
}

TEST_CASE("ensemble_step_distribution") {
  SUBCASE("mean of opposite one-hots is uniform") {
    std::vector<std::vector<double>> members = {{std::log(1.0 - 1e-12), std::log(1e-12)},
                                                {std::log(1e-12), std::log(1.0 - 1e-12)}};
    std::vector<double> mean = ensemble_step_distribution(members);
    CHECK(mean[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(mean[1] == doctest::Approx(0.5).epsilon(1e-9));
  }
  SUBCASE("three-model average matches hand computation and sums to one") {
    auto lp = [](std::vector<double> p) {
      for (auto& x : p) x = std::log(x);
      return p;
    };
    std::vector<std::vector<double>> members = {lp({0.5, 0.3, 0.2}), lp({0.1, 0.8, 0.1}),
                                                lp({0.3, 0.3, 0.4})};
    std::vector<double> mean = ensemble_step_distribution(members);
    CHECK(mean[0] == doctest::Approx((0.5 + 0.1 + 0.3) / 3).epsilon(1e-12));
    CHECK(mean[1] == doctest::Approx((0.3 + 0.8 + 0.3) / 3).epsilon(1e-12));
    CHECK(mean[2] == doctest::Approx((0.2 + 0.1 + 0.4) / 3).epsilon(1e-12));
    CHECK(mean[0] + mean[1] + mean[2] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("identical members reproduce the single distribution") {
    std::vector<double> one = {std::log(0.7), std::log(0.2), std::log(0.1)};
    std::vector<double> mean = ensemble_step_distribution({one, one, one});
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(mean[j] == doctest::Approx(std::exp(one[j])).epsilon(1e-12));
    }
  }
  SUBCASE("vocabulary mismatch is a contract error") {
    CHECK_THROWS_AS(ensemble_step_distribution({{0.0}, {0.0, 0.0}}), ContractError);
  }
}

namespace {

struct RealModel {
  TrainConfig cfg;
  SharingPlan plan = SharingPlan::many_to_many();
  ParameterStore<float> store;
  FeatureSeq<float> source;

  RealModel(std::uint64_t seed = 101) {
    cfg.hidden = 6;
    cfg.embed = 4;
    cfg.init_range = 0.4;
    cfg.seed = seed;
    std::set<TaskKind> all = {TaskKind::Captioning, TaskKind::VideoPrediction,
                              TaskKind::EntailmentGeneration};
    store = init_parameters<float>(cfg, plan, {3, 9}, all, Rng(seed).derive("init"));
    Rng rng(seed + 1);
    source.assign(5, std::vector<float>(3));
    for (auto& f : source) {
      for (auto& x : f) x = static_cast<float>(rng.uniform(-1, 1));
    }
  }

  ModelTokenStepper<float> stepper() {
    return ModelTokenStepper<float>::for_features(store, plan, source, cfg);
  }
};

}  // namespace

TEST_CASE("real model: beam 1 equals greedy, and width never hurts the best score") {
  RealModel m;
  auto stepper = m.stepper();
  TokenSeq g = greedy_decode(stepper, 12);
  auto h1 = beam_decode(stepper, 1, 12);
  CHECK(emitted_tokens(h1[0]) == g);

  // Greedy sequence log-probability under the same model.
  double greedy_lp = 0;
  {
    auto state = stepper.start();
    int prev = kBosId;
    for (int tok : g) {
      auto [next, lp] = stepper.step(state, prev);
      greedy_lp += lp[tok];
      state = next;
      prev = tok;
    }
    if (g.size() < 12) {
      auto [next, lp] = stepper.step(state, prev);
      greedy_lp += lp[kEosId];
    }
  }

  double prev_best = -1e300;
  for (std::size_t width : {1u, 2u, 5u}) {
    auto hyps = beam_decode(stepper, width, 12);
    CHECK(hyps[0].log_prob >= prev_best - 1e-9);
    CHECK(hyps[0].log_prob >= greedy_lp - 1e-9);
    prev_best = hyps[0].log_prob;
  }
}

TEST_CASE("ensemble of identical models decodes identically to one model") {
  RealModel m;
  auto single = m.stepper();
  TokenSeq g_single = greedy_decode(single, 12);
  auto b_single = beam_decode(single, 5, 12);

  for (std::size_t k : {2u, 10u}) {
    std::vector<ModelTokenStepper<float>> members;
    for (std::size_t i = 0; i < k; ++i) members.push_back(m.stepper());
    EnsembleTokenStepper<float> ens(std::move(members));
    CHECK(greedy_decode(ens, 12) == g_single);
    auto b_ens = beam_decode(ens, 5, 12);
    REQUIRE(b_ens.size() == b_single.size());
    for (std::size_t i = 0; i < b_ens.size(); ++i) {
      CHECK(b_ens[i].tokens == b_single[i].tokens);
      CHECK(b_ens[i].log_prob == doctest::Approx(b_single[i].log_prob).epsilon(1e-5));
    }
  }
}

TEST_CASE("decoding is deterministic") {
  RealModel a(55), b(55);
  auto sa = a.stepper();
  auto sb = b.stepper();
  CHECK(greedy_decode(sa, 10) == greedy_decode(sb, 10));
  auto ha = beam_decode(sa, 5, 10);
  auto hb = beam_decode(sb, 5, 10);
  REQUIRE(ha.size() == hb.size());
  for (std::size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].tokens == hb[i].tokens);
    CHECK(ha[i].log_prob == hb[i].log_prob);
  }
}

TEST_CASE("rollout_frames") {
  RealModel m;
  SUBCASE("horizon 1 equals one frame step") {
    FeatureSeq<float> out = rollout_frames(m.store, m.plan, m.source, 1, m.cfg);
    REQUIRE(out.size() == 1);

    FrameTaskRefs<float> refs = bind_frame_task(m.store, m.plan);
    std::vector<Tensor<float>> inputs;
    for (const auto& f : m.source) {
      inputs.push_back(affine(Tensor<float>({f.size()}, f), *refs.embW, *refs.embb));
    }
    EncoderOutput<float> enc = encode_sequence(inputs, refs.enc);
    Tensor<float> prev({m.source.back().size()}, m.source.back());
    DecoderStepOutput<float> step = decode_step_frame(prev, enc.final_state, enc, refs.dec);
    CHECK(out[0] == step.emission.vec());
  }
  SUBCASE("output length equals the horizon") {
    CHECK(rollout_frames(m.store, m.plan, m.source, 7, m.cfg).size() == 7);
  }
  SUBCASE("horizon 0 is a domain error") {
    CHECK_THROWS_AS(rollout_frames(m.store, m.plan, m.source, 0, m.cfg), DomainError);
  }
}
