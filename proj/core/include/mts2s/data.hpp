#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mts2s/multitask.hpp"

namespace mts2s {

// Lowercase, strip punctuation, split on whitespace. UTF-8 aware for the
// common punctuation/space blocks; unknown codepoints pass through.
std::vector<std::string> tokenize(const std::string& text);

std::string join_tokens(const std::vector<std::string>& tokens);

// Token ↔ index bijection with reserved slots 0..3 (pad, bos, eos, unk).
// Unknown lookups map to unk.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(const std::vector<std::vector<std::string>>& corpora,
                          std::size_t min_count);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int index(const std::string& token) const;
  const std::string& token(int index) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(const std::vector<std::string>& tokens) const;
  // Drops reserved ids; inverse of encode for in-vocabulary text.
  std::vector<std::string> decode(const TokenSeq& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct CaptionExample {
  std::string id;
  FeatureSeq<float> features;
  std::vector<std::string> captions;   // raw reference strings
  std::vector<TokenSeq> caption_ids;   // filled when a vocabulary is supplied
};

struct FeatureClip {
  std::string id;
  FeatureSeq<float> features;
};

// JSON-lines, one clip per record: {"id": ..., "features": [[...], ...]}.
std::vector<FeatureClip> load_feature_file(const std::string& path);

// Joins a feature file with a caption file ({"id":..., "captions":[...]}) by
// id; ids present in only one file are dropped and counted.
std::vector<CaptionExample> load_caption_dataset(const std::string& features_path,
                                                 const std::string& captions_path,
                                                 const Vocabulary* vocab,
                                                 std::size_t* dropped = nullptr);

struct EntailmentPair {
  std::string premise;
  std::string hypothesis;
};

// UTF-8 TSV: premise<TAB>hypothesis per line.
std::vector<EntailmentPair> load_entailment_tsv(const std::string& path);
void write_entailment_tsv(const std::string& path, const std::vector<EntailmentPair>& pairs);

struct EntailmentExample {
  std::vector<std::string> premise;                  // tokenized
  std::vector<std::vector<std::string>> hypotheses;  // tokenized, ≥1
};

struct SplitAudit {
  std::size_t input_pairs = 0;
  std::size_t unique_premises = 0;
  std::size_t single_hypothesis_premises = 0;
  std::size_t multi_hypothesis_premises = 0;
  std::size_t train_pairs = 0, validation_pairs = 0, test_pairs = 0;
  std::size_t validation_premises = 0, test_premises = 0;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> stratum_split;  // hyp count → (val, test)
};

struct SplitResult {
  std::vector<EntailmentExample> train, validation, test;
  SplitAudit audit;
};

// Groups entailment pairs by post-tokenization premise; single-hypothesis
// premises go to train, multi-hypothesis premises are shuffled within strata
// of hypothesis count and divided equally between validation and test (odd
// remainder to validation).
SplitResult snli_regroup_split(const std::vector<EntailmentPair>& pairs, std::uint64_t seed);

std::string split_audit_json(const SplitAudit& audit);

struct SynthConfig {
  std::size_t caption_train = 200;
  std::size_t caption_val = 50;
  std::size_t caption_test = 100;
  std::size_t video_clips = 2000;
  std::size_t entailment_pairs = 2000;
  std::size_t feature_dim = 16;
  std::size_t caption_clip_min = 8, caption_clip_max = 12;
  std::size_t video_clip_min = 15, video_clip_max = 20;
  double noise = 0.1;
  std::uint64_t seed = 0;
};

struct SynthSummary {
  std::size_t caption_train = 0, caption_val = 0, caption_test = 0;
  std::size_t video_clips = 0, entailment_pairs = 0;
  std::size_t feature_dim = 0;
};

// Desk-scale stand-in corpora: latent (action, object, modifier) triples drive
// smooth feature trajectories, templated paraphrase captions, longer
// video-prediction clips and modifier-dropping entailment pairs. Deterministic
// given the seed.
SynthSummary generate_synthetic(const SynthConfig& cfg, const std::string& out_dir);

// Latent triple sets, exposed for learnability checks.
const std::vector<std::string>& synth_actions();
const std::vector<std::string>& synth_objects();
const std::vector<std::string>& synth_modifiers();

}  // namespace mts2s
