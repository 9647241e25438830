// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "twostage/data/noise.hpp"
#include "twostage/model/config.hpp"
#include "twostage/train/freeze.hpp"
#include "twostage/train/schedule.hpp"

namespace twostage::train {

enum class Objective { MLM, Denoise };

inline const char* to_string(Objective o) { return o == Objective::MLM ? "mlm" : "denoise"; }

inline Objective objective_from_string(const std::string& s) {
  if (s == "mlm") return Objective::MLM;
  if (s == "denoise") return Objective::Denoise;
  throw Error("unknown objective '" + s + "' (expected mlm|denoise)");
}

struct TrainStage {
  std::string name = "stage";
  Objective objective = Objective::MLM;
  data::NoiseConfig noise;
  std::uint64_t steps = 1;
  std::set<FreezeTag> freeze;
  LrSchedule lr;
  /// Position of this stage's first update inside `lr`; lets consecutive stages share
  /// one continuous schedule.
  std::uint64_t lr_offset = 0;
  /// Tokens per update at full scale; only used for cost accounting.
  double batch_tokens = 1e6;
  /// Packed sequences per update when actually training.
  std::size_t batch_size = 8;
  /// Global gradient-norm clip; 0 disables clipping.
  double max_grad_norm = 0.0;

  friend bool operator==(const TrainStage&, const TrainStage&) = default;
};

enum class InitKind { Random, FromCheckpoint, WarmStartEncoder, ExtractEncoder };

inline const char* to_string(InitKind k) {
  switch (k) {
    case InitKind::Random: return "random";
    case InitKind::FromCheckpoint: return "checkpoint";
    case InitKind::WarmStartEncoder: return "warm_start_encoder";
    case InitKind::ExtractEncoder: return "extract_encoder";
  }
  return "?";
}

inline InitKind init_kind_from_string(const std::string& s) {
  for (auto k : {InitKind::Random, InitKind::FromCheckpoint, InitKind::WarmStartEncoder, InitKind::ExtractEncoder}) {
    if (s == to_string(k)) return k;
  }
  throw Error("unknown init kind '" + s + "' (expected random|checkpoint|warm_start_encoder|extract_encoder)");
}

struct TrainPlan {
  std::string name;
  model::ModelConfig model;
  InitKind init = InitKind::Random;
  /// Checkpoint directory for every init kind except Random.
  std::string init_path;
  /// Plan that produced the donor model; its cost is carried as an inherited entry.
  std::shared_ptr<const TrainPlan> donor;
  std::vector<TrainStage> stages;

  std::uint64_t total_steps() const {
    std::uint64_t n = 0;
    for (const auto& s : stages) n += s.steps;
    return n;
  }

  void validate() const {
    model.validate();
    if (init == InitKind::WarmStartEncoder && !model.is_seq2seq()) {
      throw Error("plan '" + name + "': warm_start_encoder needs a model with decoder layers");
    }
    if (init == InitKind::ExtractEncoder && model.is_seq2seq()) {
      throw Error("plan '" + name + "': extract_encoder produces an encoder-only model; set decoder_layers to 0");
    }
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      const std::string where = "plan '" + name + "' stage " + std::to_string(i) + " (" + s.name + "): ";
      if (s.steps == 0) throw Error(where + "steps must be positive");
      s.lr.validate();
      if (s.lr_offset + s.steps > s.lr.total_steps) {
        throw Error(where + "lr_offset + steps exceeds the schedule's total_steps");
      }
      s.noise.validate();
      if (s.objective == Objective::Denoise) {
        if (!model.is_seq2seq()) throw Error(where + "denoise objective needs decoder layers");
        if (s.noise.mode == data::NoiseMode::MlmMask) throw Error(where + "denoise objective needs a span noise mode");
      } else {
        if (model.is_seq2seq()) throw Error(where + "mlm objective needs an encoder-only model");
        if (s.noise.mode != data::NoiseMode::MlmMask) throw Error(where + "mlm objective needs noise mode mlm");
      }
      if (s.batch_size == 0) throw Error(where + "batch_size must be positive");
      if (!(s.batch_tokens > 0.0)) throw Error(where + "batch_tokens must be positive");
      if (s.max_grad_norm < 0.0) throw Error(where + "max_grad_norm must be non-negative");
    }
  }
};

}  // namespace twostage::train
