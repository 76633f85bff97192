#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mts2s {

using Tokens = std::vector<std::string>;

// Per-example sufficient statistics for corpus BLEU, resampleable.
struct BleuStats {
  std::array<std::int64_t, 4> clipped{};  // clipped n-gram matches, n = 1..4
  std::array<std::int64_t, 4> total{};    // candidate n-gram counts
  std::int64_t candidate_len = 0;
  std::int64_t reference_len = 0;  // closest reference length (ties: shorter)
};

BleuStats bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references);

// Corpus BLEU-4 from summed statistics: geometric mean of clipped precisions
// with brevity penalty. Zero when any precision is zero unless smooth_eps > 0,
// in which case zero counts are replaced by smooth_eps.
double bleu_corpus(const std::vector<BleuStats>& stats, double smooth_eps = 0.0);

double bleu4(const std::vector<Tokens>& candidates,
             const std::vector<std::vector<Tokens>>& references, double smooth_eps = 0.0);

// LCS F-measure, beta = 1.2; max precision / max recall over the references.
double rouge_l_example(const Tokens& candidate, const std::vector<Tokens>& references,
                       double beta = 1.2);

double rouge_l(const std::vector<Tokens>& candidates,
               const std::vector<std::vector<Tokens>>& references);

// CIDEr-D with sigma = 6 and the x10 scaling; IDF comes from the evaluated
// corpus's reference sets.
std::vector<double> cider_d_per_example(const std::vector<Tokens>& candidates,
                                        const std::vector<std::vector<Tokens>>& references,
                                        double sigma = 6.0);

double cider_d(const std::vector<Tokens>& candidates,
               const std::vector<std::vector<Tokens>>& references);

struct MetricReport {
  double bleu4 = 0;
  double rouge_l = 0;
  double cider_d = 0;
  std::vector<BleuStats> bleu_per_example;
  std::vector<double> rouge_per_example;
  std::vector<double> cider_per_example;

  double average() const { return (bleu4 + rouge_l + cider_d) / 3.0; }
  std::size_t examples() const { return bleu_per_example.size(); }
};

MetricReport evaluate_captions(const std::vector<Tokens>& candidates,
                               const std::vector<std::vector<Tokens>>& references);

enum class MetricKind { Bleu4, RougeL, CiderD };

const char* metric_name(MetricKind m);
MetricKind metric_from_name(const std::string& name);

struct BootstrapResult {
  double p_value = 1.0;
  double observed_delta = 0.0;  // metric(a) − metric(b) on the full set
  std::size_t samples = 0;
};

// Paired bootstrap over example indices, testing a > b: resamples with
// replacement, recomputes the corpus metric for both systems from per-example
// sufficient statistics, p = (#{b ≥ a} + 1) / (B + 1).
BootstrapResult bootstrap_significance(const MetricReport& system_a, const MetricReport& system_b,
                                       MetricKind metric, std::size_t samples, std::uint64_t seed);

BootstrapResult bootstrap_significance(const std::vector<Tokens>& system_a,
                                       const std::vector<Tokens>& system_b,
                                       const std::vector<std::vector<Tokens>>& references,
                                       MetricKind metric, std::size_t samples, std::uint64_t seed);

}  // namespace mts2s
