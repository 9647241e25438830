// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "twostage/train/plan.hpp"

namespace twostage::train {

/// Full-size architecture shared by every registered model.
inline model::ModelConfig full_size_model(std::size_t enc, std::size_t dec) {
  model::ModelConfig m;
  m.encoder_layers = enc;
  m.decoder_layers = dec;
  m.d_model = 1024;
  m.d_ffn = 4096;
  m.heads = 16;
  m.vocab_size = 32000;
  m.max_positions = 514;
  m.dropout = 0.1;
  return m;
}

inline LrSchedule pretrain_schedule(std::uint64_t total, double peak = 1.5e-4, std::uint64_t warmup = 5000) {
  LrSchedule s;
  s.peak = peak;
  s.warmup_steps = warmup;
  s.warmup_kind = WarmupKind::LinearFromZero;
  s.end = 5e-6;
  s.total_steps = total;
  return s;
}

inline TrainStage mlm_stage(std::string name, std::uint64_t steps, LrSchedule lr) {
  TrainStage s;
  s.name = std::move(name);
  s.objective = Objective::MLM;
  s.noise = data::NoiseConfig{0.15, 3.0, data::NoiseMode::MlmMask};
  s.steps = steps;
  s.lr = lr;
  return s;
}

inline TrainStage denoise_stage(std::string name, std::uint64_t steps, LrSchedule lr, data::NoiseMode mode) {
  TrainStage s;
  s.name = std::move(name);
  s.objective = Objective::Denoise;
  s.noise = data::NoiseConfig{0.15, 3.0, mode};
  s.steps = steps;
  s.lr = lr;
  return s;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{
      "roberta-12e",        "bart-12e12d",        "bart-12e12d-mask",          "bart-12e2d",
      "bart-12e2d-mask",    "bart-12e1d-mask",    "bart-12e12d+mlm",           "2stage-bart-12e12d",
      "2stage-bart-12e12d-attn-f", "2stage-bart-12e12d-unfrz"};
  return names;
}

inline std::string preset_list() {
  std::string out;
  for (const auto& n : preset_names()) out += (out.empty() ? "" : ", ") + n;
  return out;
}

/// Full-size plan for a registered model name.
inline TrainPlan preset_plan(const std::string& name) {
  using data::NoiseMode;
  TrainPlan p;
  p.name = name;
  auto seq2seq = [&](std::size_t dec, NoiseMode mode) {
    p.model = full_size_model(12, dec);
    p.stages = {denoise_stage("denoise", 500000, pretrain_schedule(500000), mode)};
  };
  auto two_stage = [&]() {
    p.model = full_size_model(12, 12);
    p.init = InitKind::WarmStartEncoder;
    p.donor = std::make_shared<const TrainPlan>(preset_plan("roberta-12e"));
  };

  if (name == "roberta-12e") {
    p.model = full_size_model(12, 0);
    p.stages = {mlm_stage("mlm", 500000, pretrain_schedule(500000))};
  } else if (name == "bart-12e12d") {
    seq2seq(12, NoiseMode::SpanDrop);
  } else if (name == "bart-12e12d-mask") {
    seq2seq(12, NoiseMode::SpanMask);
  } else if (name == "bart-12e2d") {
    seq2seq(2, NoiseMode::SpanDrop);
  } else if (name == "bart-12e2d-mask") {
    seq2seq(2, NoiseMode::SpanMask);
  } else if (name == "bart-12e1d-mask") {
    seq2seq(1, NoiseMode::SpanMask);
  } else if (name == "bart-12e12d+mlm") {
    p.model = full_size_model(12, 0);
    p.init = InitKind::ExtractEncoder;
    p.donor = std::make_shared<const TrainPlan>(preset_plan("bart-12e12d"));
    p.stages = {mlm_stage("mlm", 100000, pretrain_schedule(100000, 1e-4, 1000))};
  } else if (name == "2stage-bart-12e12d" || name == "2stage-bart-12e12d-attn-f") {
    two_stage();
    if (name.ends_with("attn-f")) p.model.cross_attention = model::CrossAttention::Fusion;
    p.stages = {denoise_stage("frozen", 500000, pretrain_schedule(500000), NoiseMode::SpanDrop)};
    p.stages[0].freeze = {FreezeTag::Encoder};
  } else if (name == "2stage-bart-12e12d-unfrz") {
    two_stage();
    const auto lr = pretrain_schedule(350000);
    p.stages = {denoise_stage("frozen", 200000, lr, NoiseMode::SpanDrop), denoise_stage("unfrozen", 150000, lr, NoiseMode::SpanDrop)};
    p.stages[0].freeze = {FreezeTag::Encoder};
    p.stages[1].lr_offset = 200000;
  } else {
    throw Error("unknown preset '" + name + "'; available presets: " + preset_list());
  }
  return p;
}

/// Shrinks a plan for single-machine runs: layer counts and stage structure are kept,
/// widths are replaced and every step count is divided by `step_divisor`.
struct DeskScale {
  std::size_t d_model = 64;
  std::size_t d_ffn = 256;
  std::size_t heads = 4;
  std::size_t vocab_size = 256;
  std::size_t max_positions = 66;
  std::uint64_t step_divisor = 1000;
  std::size_t batch_size = 8;
  double peak_lr = 1e-3;
  double dropout = 0.1;
  /// Replaces the encoder and decoder depth when nonzero (decoder depth only for seq2seq models).
  std::size_t layers = 0;

  friend bool operator==(const DeskScale&, const DeskScale&) = default;
};

inline TrainPlan desk_scale(const TrainPlan& full, const DeskScale& d) {
  if (d.step_divisor == 0) throw Error("desk scale step_divisor must be positive");
  auto div = [&](std::uint64_t v) { return std::max<std::uint64_t>(1, v / d.step_divisor); };
  TrainPlan p = full;
  p.model.d_model = d.d_model;
  p.model.d_ffn = d.d_ffn;
  p.model.heads = d.heads;
  p.model.vocab_size = d.vocab_size;
  p.model.max_positions = d.max_positions;
  p.model.dropout = d.dropout;
  if (d.layers) {
    p.model.encoder_layers = d.layers;
    if (p.model.decoder_layers) p.model.decoder_layers = d.layers;
  }
  if (full.donor) p.donor = std::make_shared<const TrainPlan>(desk_scale(*full.donor, d));
  for (auto& s : p.stages) {
    s.steps = div(s.steps);
    s.lr_offset = s.lr_offset / d.step_divisor;
    s.lr.total_steps = std::max(div(s.lr.total_steps), s.lr_offset + s.steps);
    s.lr.warmup_steps = std::min(s.lr.warmup_steps / d.step_divisor, s.lr.total_steps);
    s.lr.peak = d.peak_lr;
    s.lr.end = std::min(s.lr.end, d.peak_lr / 10);
    s.batch_size = d.batch_size;
  }
  return p;
}

}  // namespace twostage::train
