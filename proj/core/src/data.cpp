#include "mts2s/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mts2s/errors.hpp"
#include "mts2s/rng.hpp"

namespace mts2s {

namespace {

using nlohmann::json;

// Decodes one UTF-8 codepoint; advances i. Invalid bytes decode as themselves.
std::uint32_t next_codepoint(const std::string& s, std::size_t& i) {
  const unsigned char c = s[i];
  if (c < 0x80) {
    ++i;
    return c;
  }
  std::size_t len = 1;
  std::uint32_t cp = c;
  if ((c >> 5) == 0x6) {
    len = 2;
    cp = c & 0x1f;
  } else if ((c >> 4) == 0xe) {
    len = 3;
    cp = c & 0x0f;
  } else if ((c >> 3) == 0x1e) {
    len = 4;
    cp = c & 0x07;
  }
  if (i + len > s.size()) {
    ++i;
    return c;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const unsigned char cc = s[i + k];
    if ((cc >> 6) != 0x2) {
      ++i;
      return c;
    }
    cp = (cp << 6) | (cc & 0x3f);
  }
  i += len;
  return cp;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

bool is_space_cp(std::uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0a: case 0x0b: case 0x0c: case 0x0d: case 0x20:
    case 0xa0: case 0x1680: case 0x2028: case 0x2029: case 0x202f:
    case 0x205f: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200a;
  }
}

bool is_punct_cp(std::uint32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2f) || (cp >= 0x3a && cp <= 0x40) ||
           (cp >= 0x5b && cp <= 0x60) || (cp >= 0x7b && cp <= 0x7e);
  }
  if (cp >= 0x2010 && cp <= 0x2027) return true;  // dashes, quotes, ellipsis
  if (cp >= 0x2030 && cp <= 0x205e) return true;
  switch (cp) {
    case 0xa1: case 0xab: case 0xb7: case 0xbb: case 0xbf:
    case 0x3001: case 0x3002:  // CJK comma/full stop
      return true;
    default:
      return false;
  }
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return in;
}

json parse_jsonl_line(const std::string& line, const std::string& path, std::size_t line_no) {
  json rec = json::parse(line, nullptr, false);
  if (rec.is_discarded() || !rec.is_object()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": malformed JSON record");
  }
  return rec;
}

FeatureSeq<float> parse_features(const json& rec, const std::string& path, std::size_t line_no,
                                 const std::string& id) {
  if (!rec.contains("features") || !rec["features"].is_array()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": missing \"features\" array");
  }
  FeatureSeq<float> feats;
  std::size_t dim = 0;
  for (const auto& frame : rec["features"]) {
    if (!frame.is_array()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": frame is not an array");
    }
    std::vector<float> v;
    v.reserve(frame.size());
    for (const auto& x : frame) {
      if (!x.is_number()) {
        throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric feature value");
      }
      v.push_back(x.get<float>());
    }
    if (dim == 0) {
      dim = v.size();
    } else if (v.size() != dim) {
      throw DataError("inconsistent feature dimension in clip " + id + " (" +
                      std::to_string(v.size()) + " vs " + std::to_string(dim) + ")");
    }
    feats.push_back(std::move(v));
  }
  return feats;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    std::uint32_t cp = next_codepoint(text, i);
    if (is_space_cp(cp)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      continue;
    }
    if (is_punct_cp(cp)) continue;
    if (cp >= 'A' && cp <= 'Z') cp += 32;
    append_utf8(current, cp);
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < 4; ++i) index_[tokens_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpora,
                             std::size_t min_count) {
  if (min_count < 1) throw DomainError("build_vocab: min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : corpora) {
    for (const auto& tok : seq) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, c] : counts) {
    if (c >= min_count) kept.emplace_back(tok, c);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, c] : kept) {
    v.index_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 4) throw DataError("vocabulary misses reserved tokens");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    v.index_[v.tokens_[i]] = static_cast<int>(i);
  }
  return v;
}

int Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= tokens_.size()) {
    throw DomainError("vocabulary index out of range: " + std::to_string(index));
  }
  return tokens_[index];
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& tokens) const {
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(index(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const TokenSeq& ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id <= kUnkId && id != kUnkId) continue;  // pad/bos/eos dropped
    out.push_back(token(id));
  }
  return out;
}

std::vector<FeatureClip> load_feature_file(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<FeatureClip> clips;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = parse_jsonl_line(line, path, line_no);
    if (!rec.contains("id") || !rec["id"].is_string()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": missing \"id\"");
    }
    FeatureClip clip;
    clip.id = rec["id"].get<std::string>();
    clip.features = parse_features(rec, path, line_no, clip.id);
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::vector<CaptionExample> load_caption_dataset(const std::string& features_path,
                                                 const std::string& captions_path,
                                                 const Vocabulary* vocab, std::size_t* dropped) {
  std::vector<FeatureClip> clips = load_feature_file(features_path);
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < clips.size(); ++i) by_id[clips[i].id] = i;

  std::ifstream in = open_or_throw(captions_path);
  std::string line;
  std::size_t line_no = 0;
  std::size_t drop_count = 0;
  std::vector<char> used(clips.size(), 0);
  std::vector<CaptionExample> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = parse_jsonl_line(line, captions_path, line_no);
    if (!rec.contains("id") || !rec["id"].is_string() || !rec.contains("captions") ||
        !rec["captions"].is_array() || rec["captions"].empty()) {
      throw DataError(captions_path + ":" + std::to_string(line_no) +
                      ": record needs \"id\" and a non-empty \"captions\" array");
    }
    const std::string id = rec["id"].get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      ++drop_count;  // caption with no features
      continue;
    }
    used[it->second] = 1;
    CaptionExample ex;
    ex.id = id;
    ex.features = clips[it->second].features;
    for (const auto& c : rec["captions"]) {
      if (!c.is_string()) {
        throw DataError(captions_path + ":" + std::to_string(line_no) + ": non-string caption");
      }
      ex.captions.push_back(c.get<std::string>());
      if (vocab) ex.caption_ids.push_back(vocab->encode(tokenize(ex.captions.back())));
    }
    out.push_back(std::move(ex));
  }
  for (char u : used) {
    if (!u) ++drop_count;  // features with no caption record
  }
  if (dropped) *dropped = drop_count;
  return out;
}

std::vector<EntailmentPair> load_entailment_tsv(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  std::vector<EntailmentPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected premise<TAB>hypothesis");
    }
    pairs.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return pairs;
}

void write_entailment_tsv(const std::string& path, const std::vector<EntailmentPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& p : pairs) out << p.premise << '\t' << p.hypothesis << '\n';
}

SplitResult snli_regroup_split(const std::vector<EntailmentPair>& pairs, std::uint64_t seed) {
  if (pairs.empty()) throw DomainError("snli_regroup_split: empty input");

  // Group by post-tokenization premise string, first-occurrence order.
  std::vector<EntailmentExample> groups;
  std::map<std::string, std::size_t> group_of;
  std::vector<std::string> keys;
  for (const auto& p : pairs) {
    auto ptoks = tokenize(p.premise);
    const std::string key = join_tokens(ptoks);
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      group_of[key] = groups.size();
      keys.push_back(key);
      groups.push_back(EntailmentExample{std::move(ptoks), {}});
      it = group_of.find(key);
    }
    groups[it->second].hypotheses.push_back(tokenize(p.hypothesis));
  }

  SplitResult result;
  result.audit.input_pairs = pairs.size();
  result.audit.unique_premises = groups.size();

  // Strata of hypothesis count, premises in first-occurrence order.
  std::map<std::size_t, std::vector<std::size_t>> strata;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t h = groups[g].hypotheses.size();
    if (h == 1) {
      result.train.push_back(groups[g]);
      ++result.audit.single_hypothesis_premises;
      result.audit.train_pairs += 1;
    } else {
      strata[h].push_back(g);
      ++result.audit.multi_hypothesis_premises;
    }
  }

  Rng rng = Rng(seed).derive("snli_split");
  for (auto& [hyp_count, members] : strata) {
    rng.shuffle(members);
    const std::size_t to_val = (members.size() + 1) / 2;  // odd remainder to validation
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto& dst = i < to_val ? result.validation : result.test;
      dst.push_back(groups[members[i]]);
    }
    result.audit.stratum_split[hyp_count] = {to_val, members.size() - to_val};
  }
  result.audit.validation_premises = result.validation.size();
  result.audit.test_premises = result.test.size();
  for (const auto& e : result.validation) result.audit.validation_pairs += e.hypotheses.size();
  for (const auto& e : result.test) result.audit.test_pairs += e.hypotheses.size();
  return result;
}

std::string split_audit_json(const SplitAudit& a) {
  json j;
  j["input_pairs"] = a.input_pairs;
  j["unique_premises"] = a.unique_premises;
  j["single_hypothesis_premises"] = a.single_hypothesis_premises;
  j["multi_hypothesis_premises"] = a.multi_hypothesis_premises;
  j["train_pairs"] = a.train_pairs;
  j["validation_pairs"] = a.validation_pairs;
  j["test_pairs"] = a.test_pairs;
  j["validation_premises"] = a.validation_premises;
  j["test_premises"] = a.test_premises;
  json strata = json::object();
  for (const auto& [hyp, vt] : a.stratum_split) {
    strata[std::to_string(hyp)] = {{"validation", vt.first}, {"test", vt.second}};
  }
  j["stratum_split"] = strata;
  return j.dump(2);
}

const std::vector<std::string>& synth_actions() {
  static const std::vector<std::string> v = {"walking",  "running",  "jumping", "dancing",
                                             "eating",   "sleeping", "spinning", "swimming"};
  return v;
}
const std::vector<std::string>& synth_objects() {
  static const std::vector<std::string> v = {"man", "woman", "dog",  "cat",
                                             "robot", "bird", "child", "horse"};
  return v;
}
const std::vector<std::string>& synth_modifiers() {
  static const std::vector<std::string> v = {"quickly", "slowly", "quietly",
                                             "happily", "outside", "alone"};
  return v;
}

namespace {

struct Prototypes {
  // one vector per action/object/modifier, plus a per-action drift
  std::vector<std::vector<double>> action, object, modifier, drift;
};

Prototypes make_prototypes(std::size_t dim, Rng rng) {
  auto draw = [&](std::size_t n, double scale) {
    std::vector<std::vector<double>> out(n, std::vector<double>(dim));
    for (auto& v : out) {
      for (auto& x : v) x = scale * rng.normal();
    }
    return out;
  };
  Prototypes p;
  p.action = draw(synth_actions().size(), 1.0);
  p.object = draw(synth_objects().size(), 1.0);
  p.modifier = draw(synth_modifiers().size(), 0.5);
  p.drift = draw(synth_actions().size(), 0.8);
  return p;
}

struct Triple {
  std::size_t action, object, modifier;
};

FeatureSeq<float> make_trajectory(const Prototypes& proto, const Triple& t, std::size_t len,
                                  double noise, Rng& rng) {
  const std::size_t dim = proto.action[0].size();
  FeatureSeq<float> clip(len, std::vector<float>(dim));
  for (std::size_t step = 0; step < len; ++step) {
    const double phase = len > 1 ? static_cast<double>(step) / static_cast<double>(len - 1) : 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double val = proto.action[t.action][j] + 0.5 * proto.object[t.object][j] +
                         0.25 * proto.modifier[t.modifier][j] + phase * proto.drift[t.action][j] +
                         noise * rng.normal();
      clip[step][j] = static_cast<float>(val);
    }
  }
  return clip;
}

std::vector<std::string> caption_templates(const Triple& t) {
  const std::string& act = synth_actions()[t.action];
  const std::string& obj = synth_objects()[t.object];
  const std::string& mod = synth_modifiers()[t.modifier];
  return {
      "the " + obj + " is " + act + " " + mod,
      "a " + obj + " is " + act + " " + mod,
      "the " + obj + " is " + act,
  };
}

void write_caption_split(const std::string& dir, const std::string& split,
                         const Prototypes& proto, const SynthConfig& cfg, std::size_t count,
                         Rng& rng) {
  std::ofstream feat(dir + "/cap_" + split + "_features.jsonl", std::ios::binary);
  std::ofstream caps(dir + "/cap_" + split + "_captions.jsonl", std::ios::binary);
  if (!feat || !caps) throw DataError("cannot write caption files under " + dir);
  for (std::size_t i = 0; i < count; ++i) {
    Triple t{rng.uniform_index(synth_actions().size()), rng.uniform_index(synth_objects().size()),
             rng.uniform_index(synth_modifiers().size())};
    const std::size_t len =
        cfg.caption_clip_min + rng.uniform_index(cfg.caption_clip_max - cfg.caption_clip_min + 1);
    FeatureSeq<float> clip = make_trajectory(proto, t, len, cfg.noise, rng);
    char id[64];
    std::snprintf(id, sizeof(id), "cap_%s_%04zu", split.c_str(), i);
    json jf;
    jf["id"] = id;
    jf["features"] = clip;
    feat << jf.dump() << '\n';
    json jc;
    jc["id"] = id;
    jc["captions"] = caption_templates(t);
    caps << jc.dump() << '\n';
  }
}

}  // namespace

SynthSummary generate_synthetic(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.feature_dim < 2) throw DomainError("generate_synthetic: feature_dim must be >= 2");
  if (cfg.caption_train == 0) throw DomainError("generate_synthetic: sizes must be >= 1");

  Rng root(cfg.seed);
  const Prototypes proto = make_prototypes(cfg.feature_dim, root.derive("prototypes"));

  Rng cap_rng = root.derive("captions");
  write_caption_split(out_dir, "train", proto, cfg, cfg.caption_train, cap_rng);
  write_caption_split(out_dir, "val", proto, cfg, cfg.caption_val, cap_rng);
  write_caption_split(out_dir, "test", proto, cfg, cfg.caption_test, cap_rng);

  Rng vid_rng = root.derive("video");
  {
    std::ofstream feat(out_dir + "/vp_features.jsonl", std::ios::binary);
    if (!feat) throw DataError("cannot write video prediction file under " + out_dir);
    for (std::size_t i = 0; i < cfg.video_clips; ++i) {
      Triple t{vid_rng.uniform_index(synth_actions().size()),
               vid_rng.uniform_index(synth_objects().size()),
               vid_rng.uniform_index(synth_modifiers().size())};
      const std::size_t len =
          cfg.video_clip_min + vid_rng.uniform_index(cfg.video_clip_max - cfg.video_clip_min + 1);
      FeatureSeq<float> clip = make_trajectory(proto, t, len, cfg.noise, vid_rng);
      char id[64];
      std::snprintf(id, sizeof(id), "vp_%05zu", i);
      json jf;
      jf["id"] = id;
      jf["features"] = clip;
      feat << jf.dump() << '\n';
    }
  }

  Rng ent_rng = root.derive("entailment");
  {
    std::vector<EntailmentPair> pairs;
    pairs.reserve(cfg.entailment_pairs);
    for (std::size_t i = 0; i < cfg.entailment_pairs; ++i) {
      Triple t{ent_rng.uniform_index(synth_actions().size()),
               ent_rng.uniform_index(synth_objects().size()),
               ent_rng.uniform_index(synth_modifiers().size())};
      const std::string& act = synth_actions()[t.action];
      const std::string& obj = synth_objects()[t.object];
      const std::string& mod = synth_modifiers()[t.modifier];
      const std::string premise = "the " + obj + " is " + act + " " + mod;
      // Entailed hypotheses drop the modifier or generalize the subject.
      const std::string hypothesis = ent_rng.uniform() < 0.5
                                         ? "the " + obj + " is " + act
                                         : "a " + obj + " is " + act;
      pairs.push_back({premise, hypothesis});
    }
    write_entailment_tsv(out_dir + "/entailment.tsv", pairs);
  }

  SynthSummary s;
  s.caption_train = cfg.caption_train;
  s.caption_val = cfg.caption_val;
  s.caption_test = cfg.caption_test;
  s.video_clips = cfg.video_clips;
  s.entailment_pairs = cfg.entailment_pairs;
  s.feature_dim = cfg.feature_dim;

  json manifest;
  manifest["seed"] = cfg.seed;
  manifest["feature_dim"] = cfg.feature_dim;
  manifest["noise"] = cfg.noise;
  manifest["caption_clips"] = {{"train", cfg.caption_train},
                               {"val", cfg.caption_val},
                               {"test", cfg.caption_test}};
  manifest["video_clips"] = cfg.video_clips;
  manifest["entailment_pairs"] = cfg.entailment_pairs;
  std::ofstream mf(out_dir + "/synth_manifest.json", std::ios::binary);
  if (!mf) throw DataError("cannot write manifest under " + out_dir);
  mf << manifest.dump(2) << '\n';
  return s;
}

}  // namespace mts2s
