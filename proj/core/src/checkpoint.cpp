#include "mts2s/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "mts2s/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace mts2s {

namespace {

using nlohmann::json;

constexpr char kMagic[7] = {'M', 'T', 'S', '2', 'S', '1', '\0'};

json ratio_to_json(const MixingRatio& r) {
  return json{{"captioning", r.captioning},
              {"video_prediction", r.video_prediction},
              {"entailment", r.entailment}};
}

MixingRatio ratio_from_json(const json& j) {
  MixingRatio r;
  r.captioning = j.at("captioning").get<unsigned>();
  r.video_prediction = j.at("video_prediction").get<unsigned>();
  r.entailment = j.at("entailment").get<unsigned>();
  return r;
}

json config_to_json(const TrainConfig& c) {
  return json{{"hidden", c.hidden},
              {"embed", c.embed},
              {"attention", c.attention},
              {"unroll_visual", c.unroll_visual},
              {"unroll_text", c.unroll_text},
              {"dropout", c.dropout},
              {"learning_rate", c.learning_rate},
              {"init_range", c.init_range},
              {"batch_size", c.batch_size},
              {"ratio", ratio_to_json(c.ratio)},
              {"encode_fraction", c.encode_fraction},
              {"max_updates", c.max_updates},
              {"validation_interval", c.validation_interval},
              {"seed", c.seed},
              {"grad_clip", c.grad_clip},
              {"min_count", c.min_count},
              {"beam_length_norm", c.beam_length_norm}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.embed = j.at("embed").get<std::size_t>();
  c.attention = j.at("attention").get<std::size_t>();
  c.unroll_visual = j.at("unroll_visual").get<std::size_t>();
  c.unroll_text = j.at("unroll_text").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.init_range = j.at("init_range").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.ratio = ratio_from_json(j.at("ratio"));
  c.encode_fraction = j.at("encode_fraction").get<double>();
  c.max_updates = j.at("max_updates").get<std::size_t>();
  c.validation_interval = j.at("validation_interval").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.min_count = j.at("min_count").get<std::size_t>();
  c.beam_length_norm = j.at("beam_length_norm").get<bool>();
  return c;
}

json plan_to_json(const SharingPlan& p) {
  auto map_to_json = [](const std::map<TaskKind, std::string>& m) {
    json j = json::object();
    for (const auto& [k, v] : m) j[task_name(k)] = v;
    return j;
  };
  return json{{"name", p.name},
              {"encoder", map_to_json(p.encoder)},
              {"decoder", map_to_json(p.decoder)},
              {"attention", map_to_json(p.attention)},
              {"input_embedding", map_to_json(p.input_embedding)}};
}

SharingPlan plan_from_json(const json& j) {
  auto map_from_json = [](const json& m) {
    std::map<TaskKind, std::string> out;
    for (auto it = m.begin(); it != m.end(); ++it) {
      out[task_from_name(it.key())] = it.value().get<std::string>();
    }
    return out;
  };
  SharingPlan p;
  p.name = j.at("name").get<std::string>();
  p.encoder = map_from_json(j.at("encoder"));
  p.decoder = map_from_json(j.at("decoder"));
  p.attention = map_from_json(j.at("attention"));
  p.input_embedding = map_from_json(j.at("input_embedding"));
  return p;
}

void write_floats(std::ofstream& out, const Tensor<float>& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
}

void read_floats(std::ifstream& in, Tensor<float>& t, const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!in) throw DataError("checkpoint truncated while reading " + what);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json manifest;
  manifest["format"] = 1;
  manifest["config"] = config_to_json(ckpt.config);
  manifest["plan"] = plan_to_json(ckpt.plan);
  manifest["dims"] = {{"feature_dim", ckpt.dims.feature_dim}, {"vocab", ckpt.dims.vocab}};
  manifest["vocab"] = ckpt.vocab_tokens;
  manifest["update"] = ckpt.update;
  manifest["validation"] = ckpt.validation;

  json tensors = json::array();
  ckpt.params.for_each([&](const std::string& g, const std::string& n, const Param<float>& p) {
    tensors.push_back({{"group", g}, {"name", n}, {"shape", p.value.shape()}});
  });
  manifest["tensors"] = tensors;

  json opt;
  opt["learning_rate"] = ckpt.adam.learning_rate;
  opt["beta1"] = ckpt.adam.beta1;
  opt["beta2"] = ckpt.adam.beta2;
  opt["epsilon"] = ckpt.adam.epsilon;
  opt["steps"] = ckpt.opt.step;
  json opt_tensors = json::array();
  for (const auto& [key, m] : ckpt.opt.m) {
    opt_tensors.push_back({{"key", key}, {"shape", m.shape()}});
  }
  opt["tensors"] = opt_tensors;
  manifest["optimizer"] = opt;

  const std::string bytes = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = bytes.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  ckpt.params.for_each([&](const std::string&, const std::string&, const Param<float>& p) {
    write_floats(out, p.value);
  });
  for (const auto& [key, m] : ckpt.opt.m) {
    write_floats(out, m);
    write_floats(out, ckpt.opt.v.at(key));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + path);
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw DataError("checkpoint truncated: " + path);
  std::string bytes(len, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint manifest truncated: " + path);
  json manifest = json::parse(bytes, nullptr, false);
  if (manifest.is_discarded()) throw DataError("checkpoint manifest is not valid JSON: " + path);

  Checkpoint ckpt;
  ckpt.config = config_from_json(manifest.at("config"));
  ckpt.plan = plan_from_json(manifest.at("plan"));
  ckpt.dims.feature_dim = manifest.at("dims").at("feature_dim").get<std::size_t>();
  ckpt.dims.vocab = manifest.at("dims").at("vocab").get<std::size_t>();
  ckpt.vocab_tokens = manifest.at("vocab").get<std::vector<std::string>>();
  ckpt.update = manifest.at("update").get<std::uint64_t>();
  ckpt.validation = manifest.at("validation").get<std::map<std::string, double>>();

  for (const auto& t : manifest.at("tensors")) {
    ckpt.params.add(t.at("group").get<std::string>(), t.at("name").get<std::string>(),
                    t.at("shape").get<std::vector<std::size_t>>());
  }
  ckpt.params.for_each([&](const std::string& g, const std::string& n, Param<float>& p) {
    read_floats(in, p.value, g + "/" + n);
  });

  const json& opt = manifest.at("optimizer");
  ckpt.adam.learning_rate = opt.at("learning_rate").get<double>();
  ckpt.adam.beta1 = opt.at("beta1").get<double>();
  ckpt.adam.beta2 = opt.at("beta2").get<double>();
  ckpt.adam.epsilon = opt.at("epsilon").get<double>();
  ckpt.opt.step = opt.at("steps").get<std::map<std::string, std::uint64_t>>();
  for (const auto& t : opt.at("tensors")) {
    const auto key = t.at("key").get<std::string>();
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    ckpt.opt.m.emplace(key, Tensor<float>(shape));
    ckpt.opt.v.emplace(key, Tensor<float>(shape));
  }
  for (auto& [key, m] : ckpt.opt.m) {
    read_floats(in, m, "m/" + key);
    read_floats(in, ckpt.opt.v.at(key), "v/" + key);
  }
  return ckpt;
}

}  // namespace mts2s
