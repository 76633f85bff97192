#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mts2s/errors.hpp"
#include "mts2s/tensor.hpp"

namespace mts2s {

enum class TaskKind { Captioning, VideoPrediction, EntailmentGeneration };

constexpr std::array<TaskKind, 3> kAllTasks = {TaskKind::Captioning, TaskKind::VideoPrediction,
                                               TaskKind::EntailmentGeneration};

inline const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::Captioning: return "captioning";
    case TaskKind::VideoPrediction: return "video_prediction";
    case TaskKind::EntailmentGeneration: return "entailment";
  }
  return "?";
}

inline TaskKind task_from_name(const std::string& s) {
  for (TaskKind k : kAllTasks) {
    if (s == task_name(k)) return k;
  }
  throw DomainError("unknown task name: " + s);
}

// Number of consecutive mini-batches per task within one scheduling cycle.
struct MixingRatio {
  unsigned captioning = 1;
  unsigned video_prediction = 0;
  unsigned entailment = 0;

  unsigned total() const { return captioning + video_prediction + entailment; }
  unsigned count(TaskKind k) const {
    switch (k) {
      case TaskKind::Captioning: return captioning;
      case TaskKind::VideoPrediction: return video_prediction;
      case TaskKind::EntailmentGeneration: return entailment;
    }
    return 0;
  }
};

// Maps each task to the parameter group that backs each model part. Two tasks
// sharing a group see (and update) the exact same tensors.
struct SharingPlan {
  std::map<TaskKind, std::string> encoder;
  std::map<TaskKind, std::string> decoder;
  std::map<TaskKind, std::string> attention;
  std::map<TaskKind, std::string> input_embedding;
  std::string name = "custom";

  // All private groups: the single-task baselines.
  static SharingPlan single() {
    SharingPlan p;
    p.name = "single";
    for (TaskKind k : kAllTasks) {
      const std::string t = task_name(k);
      p.encoder[k] = "enc." + t;
      p.decoder[k] = "dec." + t;
      p.attention[k] = "att." + t;
      p.input_embedding[k] = "emb." + t;
    }
    return p;
  }

  // Captioning and video prediction share the video encoder and the visual
  // input embedding (this also embeds the frame decoder's fed-back inputs).
  static SharingPlan one_to_many(bool share_attention = false) {
    SharingPlan p = single();
    p.name = "one-to-many";
    p.encoder[TaskKind::Captioning] = p.encoder[TaskKind::VideoPrediction] = "enc.visual";
    p.input_embedding[TaskKind::Captioning] = p.input_embedding[TaskKind::VideoPrediction] =
        "emb.visual";
    if (share_attention) {
      p.attention[TaskKind::Captioning] = p.attention[TaskKind::VideoPrediction] = "att.visual";
    }
    return p;
  }

  // Captioning and entailment generation share the language decoder group
  // (word embedding + LSTM + output projection).
  static SharingPlan many_to_one(bool share_attention = false) {
    SharingPlan p = single();
    p.name = "many-to-one";
    p.decoder[TaskKind::Captioning] = p.decoder[TaskKind::EntailmentGeneration] = "dec.text";
    if (share_attention) {
      p.attention[TaskKind::Captioning] = p.attention[TaskKind::EntailmentGeneration] = "att.text";
    }
    return p;
  }

  static SharingPlan many_to_many(bool share_attention = false) {
    SharingPlan p = single();
    p.name = "many-to-many";
    p.encoder[TaskKind::Captioning] = p.encoder[TaskKind::VideoPrediction] = "enc.visual";
    p.input_embedding[TaskKind::Captioning] = p.input_embedding[TaskKind::VideoPrediction] =
        "emb.visual";
    p.decoder[TaskKind::Captioning] = p.decoder[TaskKind::EntailmentGeneration] = "dec.text";
    if (share_attention) {
      p.attention[TaskKind::Captioning] = p.attention[TaskKind::VideoPrediction] =
          p.attention[TaskKind::EntailmentGeneration] = "att.shared";
    }
    return p;
  }

  static SharingPlan by_name(const std::string& n, bool share_attention = false) {
    if (n == "single") return single();
    if (n == "one-to-many") return one_to_many(share_attention);
    if (n == "many-to-one") return many_to_one(share_attention);
    if (n == "many-to-many") return many_to_many(share_attention);
    throw DomainError("unknown sharing plan: " + n);
  }

  // Groups a task's update touches, in deterministic order.
  std::set<std::string> groups_of(TaskKind k) const {
    return {encoder.at(k), decoder.at(k), attention.at(k), input_embedding.at(k)};
  }
};

template <typename S>
struct Param {
  Tensor<S> value;
  Tensor<S> grad;
};

// Named parameter groups. Gradients live next to their parameters so that
// shared groups accumulate contributions from whichever task touched them.
// Ordered maps keep every traversal deterministic.
template <typename S>
class ParameterStore {
 public:
  using Group = std::map<std::string, Param<S>>;

  Param<S>& add(const std::string& group, const std::string& name,
                std::vector<std::size_t> shape) {
    Param<S>& p = groups_[group][name];
    p.value = Tensor<S>(shape);
    p.grad = Tensor<S>(std::move(shape));
    return p;
  }

  bool has_group(const std::string& group) const { return groups_.count(group) > 0; }
  bool has(const std::string& group, const std::string& name) const {
    auto it = groups_.find(group);
    return it != groups_.end() && it->second.count(name) > 0;
  }

  Param<S>& at(const std::string& group, const std::string& name) {
    auto git = groups_.find(group);
    if (git == groups_.end()) throw ContractError("parameter group not found: " + group);
    auto pit = git->second.find(name);
    if (pit == git->second.end()) {
      throw ContractError("parameter not found: " + group + "/" + name);
    }
    return pit->second;
  }
  const Param<S>& at(const std::string& group, const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(group, name);
  }

  Tensor<S>& value(const std::string& group, const std::string& name) {
    return at(group, name).value;
  }
  Tensor<S>& grad(const std::string& group, const std::string& name) {
    return at(group, name).grad;
  }

  const std::map<std::string, Group>& groups() const { return groups_; }
  std::map<std::string, Group>& groups() { return groups_; }

  void zero_grads() {
    for (auto& [g, group] : groups_) {
      for (auto& [n, p] : group) p.grad.zero();
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [g, group] : groups_) {
      for (const auto& [nm, p] : group) n += p.value.size();
    }
    return n;
  }

  // Deterministic traversal (group name asc, tensor name asc).
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [g, group] : groups_) {
      for (auto& [n, p] : group) fn(g, n, p);
    }
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [g, group] : groups_) {
      for (const auto& [n, p] : group) fn(g, n, p);
    }
  }

  double grad_norm(const std::set<std::string>& groups) const {
    double acc = 0;
    for (const std::string& g : groups) {
      auto it = groups_.find(g);
      if (it == groups_.end()) continue;
      for (const auto& [n, p] : it->second) {
        for (std::size_t i = 0; i < p.grad.size(); ++i) {
          acc += static_cast<double>(p.grad[i]) * static_cast<double>(p.grad[i]);
        }
      }
    }
    return std::sqrt(acc);
  }

  // Rescales gradients in `groups` so the global norm is at most max_norm.
  // Direction is preserved.
  void clip_grad_norm(const std::set<std::string>& groups, double max_norm) {
    const double norm = grad_norm(groups);
    if (norm <= max_norm || norm == 0.0) return;
    const S scale = static_cast<S>(max_norm / norm);
    for (const std::string& g : groups) {
      auto it = groups_.find(g);
      if (it == groups_.end()) continue;
      for (auto& [n, p] : it->second) {
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] *= scale;
      }
    }
  }

  template <typename T>
  ParameterStore<T> cast() const {
    ParameterStore<T> out;
    for (const auto& [g, group] : groups_) {
      for (const auto& [n, p] : group) {
        auto& q = out.add(g, n, p.value.shape());
        q.value = p.value.template cast<T>();
        q.grad = p.grad.template cast<T>();
      }
    }
    return out;
  }

 private:
  std::map<std::string, Group> groups_;
};

}  // namespace mts2s
