#include "mts2s/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "mts2s/errors.hpp"
#include "mts2s/rng.hpp"

namespace mts2s {

namespace {

// n-grams joined with '\x1f' so multi-token grams cannot collide.
using NgramCounts = std::unordered_map<std::string, std::int64_t>;

std::string make_gram(const Tokens& toks, std::size_t start, std::size_t n) {
  std::string g = toks[start];
  for (std::size_t k = 1; k < n; ++k) {
    g.push_back('\x1f');
    g += toks[start + k];
  }
  return g;
}

NgramCounts count_ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[make_gram(toks, i, n)];
  return counts;
}

void check_aligned(std::size_t cands, std::size_t refs, const char* op) {
  if (cands == 0) throw DomainError(std::string(op) + ": empty candidate list");
  if (cands != refs) {
    throw ContractError(std::string(op) + ": " + std::to_string(cands) + " candidates vs " +
                        std::to_string(refs) + " reference sets");
  }
}

void check_refs_nonempty(const std::vector<std::vector<Tokens>>& references, const char* op) {
  for (const auto& rs : references) {
    if (rs.empty()) throw DomainError(std::string(op) + ": empty reference set");
  }
}

// Weight of one gram: tf · (log N − log max(1, df)). Grams absent from every
// reference keep the full log N factor, as in the reference scorer.
double tfidf(const std::string& gram, std::int64_t tf,
             const std::unordered_map<std::string, std::int64_t>& df, double log_corpus) {
  auto it = df.find(gram);
  const double d = it == df.end() ? 1.0 : std::max<double>(1.0, static_cast<double>(it->second));
  return static_cast<double>(tf) * (log_corpus - std::log(d));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

BleuStats bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references) {
  BleuStats s;
  s.candidate_len = static_cast<std::int64_t>(candidate.size());

  // Closest reference length; ties go to the shorter reference.
  std::int64_t best_diff = -1;
  for (const Tokens& ref : references) {
    const auto len = static_cast<std::int64_t>(ref.size());
    const std::int64_t diff = std::llabs(len - s.candidate_len);
    if (best_diff < 0 || diff < best_diff || (diff == best_diff && len < s.reference_len)) {
      best_diff = diff;
      s.reference_len = len;
    }
  }

  for (std::size_t n = 1; n <= 4; ++n) {
    NgramCounts cand = count_ngrams(candidate, n);
    NgramCounts max_ref;
    for (const Tokens& ref : references) {
      for (auto& [g, c] : count_ngrams(ref, n)) {
        auto it = max_ref.find(g);
        if (it == max_ref.end() || it->second < c) max_ref[g] = c;
      }
    }
    for (auto& [g, c] : cand) {
      s.total[n - 1] += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) s.clipped[n - 1] += std::min(c, it->second);
    }
  }
  return s;
}

double bleu_corpus(const std::vector<BleuStats>& stats, double smooth_eps) {
  if (stats.empty()) throw DomainError("bleu_corpus: empty candidate list");
  std::array<std::int64_t, 4> clipped{}, total{};
  std::int64_t cand_len = 0, ref_len = 0;
  for (const BleuStats& s : stats) {
    for (std::size_t n = 0; n < 4; ++n) {
      clipped[n] += s.clipped[n];
      total[n] += s.total[n];
    }
    cand_len += s.candidate_len;
    ref_len += s.reference_len;
  }
  double log_prec_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    double num = static_cast<double>(clipped[n]);
    if (num == 0.0) {
      if (smooth_eps <= 0.0) return 0.0;
      num = smooth_eps;
    }
    if (total[n] == 0) return 0.0;
    log_prec_sum += std::log(num / static_cast<double>(total[n]));
  }
  double bp = 1.0;
  if (cand_len < ref_len) {
    if (cand_len == 0) return 0.0;
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  }
  return bp * std::exp(log_prec_sum / 4.0);
}

double bleu4(const std::vector<Tokens>& candidates,
             const std::vector<std::vector<Tokens>>& references, double smooth_eps) {
  check_aligned(candidates.size(), references.size(), "bleu4");
  check_refs_nonempty(references, "bleu4");
  std::vector<BleuStats> stats;
  stats.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    stats.push_back(bleu_stats(candidates[i], references[i]));
  }
  return bleu_corpus(stats, smooth_eps);
}

double rouge_l_example(const Tokens& candidate, const std::vector<Tokens>& references,
                       double beta) {
  double best_p = 0, best_r = 0;
  for (const Tokens& ref : references) {
    const auto lcs = static_cast<double>(lcs_length(candidate, ref));
    if (!candidate.empty()) best_p = std::max(best_p, lcs / static_cast<double>(candidate.size()));
    if (!ref.empty()) best_r = std::max(best_r, lcs / static_cast<double>(ref.size()));
  }
  const double denom = best_r + beta * beta * best_p;
  if (denom == 0.0) return 0.0;
  return (1.0 + beta * beta) * best_p * best_r / denom;
}

double rouge_l(const std::vector<Tokens>& candidates,
               const std::vector<std::vector<Tokens>>& references) {
  check_aligned(candidates.size(), references.size(), "rouge_l");
  check_refs_nonempty(references, "rouge_l");
  double sum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += rouge_l_example(candidates[i], references[i]);
  }
  return sum / static_cast<double>(candidates.size());
}

std::vector<double> cider_d_per_example(const std::vector<Tokens>& candidates,
                                        const std::vector<std::vector<Tokens>>& references,
                                        double sigma) {
  check_aligned(candidates.size(), references.size(), "cider_d");
  check_refs_nonempty(references, "cider_d");
  const std::size_t N = candidates.size();

  // Document frequency: one count per example whose references contain a gram.
  NgramCounts df;
  for (const auto& refs : references) {
    NgramCounts seen;
    for (const Tokens& ref : refs) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (auto& [g, c] : count_ngrams(ref, n)) seen[g] = 1;
      }
    }
    for (auto& [g, c] : seen) ++df[g];
  }
  const double log_corpus = std::log(static_cast<double>(N));

  struct Vec {
    std::array<NgramCounts, 4> tf;          // raw term frequencies per n
    std::array<double, 4> norm{};           // tf-idf norms per n
    std::int64_t length = 0;
  };
  auto to_vec = [&](const Tokens& toks) {
    Vec v;
    v.length = static_cast<std::int64_t>(toks.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      v.tf[n - 1] = count_ngrams(toks, n);
      double norm = 0;
      for (auto& [g, c] : v.tf[n - 1]) {
        const double w = tfidf(g, c, df, log_corpus);
        norm += w * w;
      }
      v.norm[n - 1] = std::sqrt(norm);
    }
    return v;
  };

  std::vector<double> scores(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    Vec cand = to_vec(candidates[i]);
    double sum_over_n = 0;
    for (const Tokens& ref_tokens : references[i]) {
      Vec ref = to_vec(ref_tokens);
      const double delta = static_cast<double>(cand.length - ref.length);
      const double penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
      for (std::size_t n = 0; n < 4; ++n) {
        double dot = 0;
        for (auto& [g, c] : cand.tf[n]) {
          auto it = ref.tf[n].find(g);
          if (it == ref.tf[n].end()) continue;
          const double wc = tfidf(g, c, df, log_corpus);
          const double wr = tfidf(g, it->second, df, log_corpus);
          dot += std::min(wc, wr) * wr;  // CIDEr-D count clipping
        }
        if (cand.norm[n] != 0.0 && ref.norm[n] != 0.0) {
          sum_over_n += penalty * dot / (cand.norm[n] * ref.norm[n]);
        }
      }
    }
    // Average over n and references, x10 scaling.
    scores[i] = 10.0 * sum_over_n / (4.0 * static_cast<double>(references[i].size()));
  }
  return scores;
}

double cider_d(const std::vector<Tokens>& candidates,
               const std::vector<std::vector<Tokens>>& references) {
  std::vector<double> scores = cider_d_per_example(candidates, references);
  double sum = 0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

MetricReport evaluate_captions(const std::vector<Tokens>& candidates,
                               const std::vector<std::vector<Tokens>>& references) {
  check_aligned(candidates.size(), references.size(), "evaluate_captions");
  check_refs_nonempty(references, "evaluate_captions");
  MetricReport r;
  r.bleu_per_example.reserve(candidates.size());
  r.rouge_per_example.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    r.bleu_per_example.push_back(bleu_stats(candidates[i], references[i]));
    r.rouge_per_example.push_back(rouge_l_example(candidates[i], references[i]));
  }
  r.cider_per_example = cider_d_per_example(candidates, references);
  r.bleu4 = bleu_corpus(r.bleu_per_example);
  double rsum = 0, csum = 0;
  for (double v : r.rouge_per_example) rsum += v;
  for (double v : r.cider_per_example) csum += v;
  r.rouge_l = rsum / static_cast<double>(candidates.size());
  r.cider_d = csum / static_cast<double>(candidates.size());
  return r;
}

const char* metric_name(MetricKind m) {
  switch (m) {
    case MetricKind::Bleu4: return "bleu4";
    case MetricKind::RougeL: return "rouge_l";
    case MetricKind::CiderD: return "cider_d";
  }
  return "?";
}

MetricKind metric_from_name(const std::string& name) {
  if (name == "bleu4") return MetricKind::Bleu4;
  if (name == "rouge_l") return MetricKind::RougeL;
  if (name == "cider_d") return MetricKind::CiderD;
  throw DomainError("unknown metric: " + name);
}

namespace {

double resample_metric(const MetricReport& r, MetricKind metric,
                       const std::vector<std::size_t>& idx) {
  switch (metric) {
    case MetricKind::Bleu4: {
      std::vector<BleuStats> stats;
      stats.reserve(idx.size());
      for (std::size_t i : idx) stats.push_back(r.bleu_per_example[i]);
      return bleu_corpus(stats);
    }
    case MetricKind::RougeL: {
      double sum = 0;
      for (std::size_t i : idx) sum += r.rouge_per_example[i];
      return sum / static_cast<double>(idx.size());
    }
    case MetricKind::CiderD: {
      double sum = 0;
      for (std::size_t i : idx) sum += r.cider_per_example[i];
      return sum / static_cast<double>(idx.size());
    }
  }
  return 0;
}

double full_metric(const MetricReport& r, MetricKind metric) {
  switch (metric) {
    case MetricKind::Bleu4: return r.bleu4;
    case MetricKind::RougeL: return r.rouge_l;
    case MetricKind::CiderD: return r.cider_d;
  }
  return 0;
}

}  // namespace

BootstrapResult bootstrap_significance(const MetricReport& system_a, const MetricReport& system_b,
                                       MetricKind metric, std::size_t samples, std::uint64_t seed) {
  const std::size_t n = system_a.examples();
  if (n == 0 || samples == 0) throw DomainError("bootstrap: need examples and samples >= 1");
  if (n != system_b.examples()) {
    throw ContractError("bootstrap: systems have " + std::to_string(n) + " vs " +
                        std::to_string(system_b.examples()) + " examples");
  }
  BootstrapResult out;
  out.samples = samples;
  out.observed_delta = full_metric(system_a, metric) - full_metric(system_b, metric);

  Rng rng = Rng(seed).derive("bootstrap");
  std::vector<std::size_t> idx(n);
  std::size_t b_wins = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = rng.uniform_index(n);
    const double a = resample_metric(system_a, metric, idx);
    const double b = resample_metric(system_b, metric, idx);
    if (b >= a) ++b_wins;
  }
  out.p_value = static_cast<double>(b_wins + 1) / static_cast<double>(samples + 1);
  return out;
}

BootstrapResult bootstrap_significance(const std::vector<Tokens>& system_a,
                                       const std::vector<Tokens>& system_b,
                                       const std::vector<std::vector<Tokens>>& references,
                                       MetricKind metric, std::size_t samples,
                                       std::uint64_t seed) {
  if (system_a.size() != system_b.size() || system_a.size() != references.size()) {
    throw ContractError("bootstrap: misaligned output/reference lists");
  }
  const MetricReport ra = evaluate_captions(system_a, references);
  const MetricReport rb = evaluate_captions(system_b, references);
  return bootstrap_significance(ra, rb, metric, samples, seed);
}

}  // namespace mts2s
