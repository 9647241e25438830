// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "twostage/tensor/json_io.hpp"
#include "twostage/train/presets.hpp"

namespace twostage::train {

template <typename Fn>
auto config_field(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- model

inline OrderedJson model_to_json(const model::ModelConfig& m) {
  OrderedJson j;
  j["encoder_layers"] = m.encoder_layers;
  j["decoder_layers"] = m.decoder_layers;
  j["d_model"] = m.d_model;
  j["d_ffn"] = m.d_ffn;
  j["heads"] = m.heads;
  j["vocab_size"] = m.vocab_size;
  j["max_positions"] = m.max_positions;
  j["cross_attention"] = model::to_string(m.cross_attention);
  j["fusion_include_embedding"] = m.fusion_include_embedding;
  j["fusion_init_logit"] = m.fusion_init_logit;
  j["dropout"] = m.dropout;
  j["ln_eps"] = m.ln_eps;
  return j;
}

inline model::ModelConfig model_from_json(const JsonIn& in, model::ModelConfig m = {}) {
  in.only({"encoder_layers", "decoder_layers", "d_model", "d_ffn", "heads", "vocab_size", "max_positions", "cross_attention",
           "fusion_include_embedding", "fusion_init_logit", "dropout", "ln_eps"});
  m.encoder_layers = in.opt<std::size_t>("encoder_layers", m.encoder_layers);
  m.decoder_layers = in.opt<std::size_t>("decoder_layers", m.decoder_layers);
  m.d_model = in.opt<std::size_t>("d_model", m.d_model);
  m.d_ffn = in.opt<std::size_t>("d_ffn", m.d_ffn);
  m.heads = in.opt<std::size_t>("heads", m.heads);
  m.vocab_size = in.opt<std::size_t>("vocab_size", m.vocab_size);
  m.max_positions = in.opt<std::size_t>("max_positions", m.max_positions);
  if (in.has("cross_attention")) {
    const auto s = in.req<std::string>("cross_attention");
    m.cross_attention = config_field(in.field_path("cross_attention"), [&] { return model::cross_attention_from_string(s); });
  }
  m.fusion_include_embedding = in.opt<bool>("fusion_include_embedding", m.fusion_include_embedding);
  m.fusion_init_logit = in.opt<double>("fusion_init_logit", m.fusion_init_logit);
  m.dropout = in.opt<double>("dropout", m.dropout);
  m.ln_eps = in.opt<double>("ln_eps", m.ln_eps);
  config_field(in.path(), [&] { m.validate(); });
  return m;
}

// ---------------------------------------------------------------- stage pieces

inline OrderedJson schedule_to_json(const LrSchedule& s) {
  OrderedJson j;
  j["peak"] = s.peak;
  j["warmup_steps"] = s.warmup_steps;
  j["warmup"] = to_string(s.warmup_kind);
  j["floor"] = s.floor;
  j["end"] = s.end;
  j["total_steps"] = s.total_steps;
  return j;
}

inline LrSchedule schedule_from_json(const JsonIn& in) {
  in.only({"peak", "warmup_steps", "warmup", "floor", "end", "total_steps"});
  LrSchedule s;
  s.peak = in.opt<double>("peak", s.peak);
  s.warmup_steps = in.opt<std::uint64_t>("warmup_steps", s.warmup_steps);
  if (in.has("warmup")) {
    const auto w = in.req<std::string>("warmup");
    s.warmup_kind = config_field(in.field_path("warmup"), [&] { return warmup_kind_from_string(w); });
  }
  s.floor = in.opt<double>("floor", s.floor);
  s.end = in.opt<double>("end", s.end);
  s.total_steps = in.req<std::uint64_t>("total_steps");
  config_field(in.path(), [&] { s.validate(); });
  return s;
}

inline OrderedJson noise_to_json(const data::NoiseConfig& n) {
  OrderedJson j;
  j["mode"] = data::to_string(n.mode);
  j["ratio"] = n.corruption_ratio;
  j["span_lambda"] = n.span_lambda;
  j["mask_p"] = n.mask_p;
  j["random_p"] = n.random_p;
  j["keep_p"] = n.keep_p;
  return j;
}

inline data::NoiseConfig noise_from_json(const JsonIn& in, data::NoiseConfig n) {
  in.only({"mode", "ratio", "span_lambda", "mask_p", "random_p", "keep_p"});
  if (in.has("mode")) {
    const auto m = in.req<std::string>("mode");
    n.mode = config_field(in.field_path("mode"), [&] { return data::noise_mode_from_string(m); });
  }
  n.corruption_ratio = in.opt<double>("ratio", n.corruption_ratio);
  n.span_lambda = in.opt<double>("span_lambda", n.span_lambda);
  n.mask_p = in.opt<double>("mask_p", n.mask_p);
  n.random_p = in.opt<double>("random_p", n.random_p);
  n.keep_p = in.opt<double>("keep_p", n.keep_p);
  config_field(in.path(), [&] { n.validate(); });
  return n;
}

inline OrderedJson stage_to_json(const TrainStage& s) {
  OrderedJson j;
  j["name"] = s.name;
  j["objective"] = to_string(s.objective);
  j["noise"] = noise_to_json(s.noise);
  j["steps"] = s.steps;
  OrderedJson freeze = OrderedJson::array();
  for (auto t : s.freeze) freeze.push_back(to_string(t));
  j["freeze"] = freeze;
  j["lr"] = schedule_to_json(s.lr);
  j["lr_offset"] = s.lr_offset;
  j["batch_tokens"] = s.batch_tokens;
  j["batch_size"] = s.batch_size;
  j["max_grad_norm"] = s.max_grad_norm;
  return j;
}

inline TrainStage stage_from_json(const JsonIn& in) {
  in.only({"name", "objective", "noise", "steps", "freeze", "lr", "lr_offset", "batch_tokens", "batch_size", "max_grad_norm"});
  TrainStage s;
  s.name = in.opt<std::string>("name", s.name);
  const auto obj = in.req<std::string>("objective");
  s.objective = config_field(in.field_path("objective"), [&] { return objective_from_string(obj); });
  data::NoiseConfig n;
  n.mode = s.objective == Objective::MLM ? data::NoiseMode::MlmMask : data::NoiseMode::SpanDrop;
  s.noise = in.has("noise") ? noise_from_json(in.child("noise"), n) : n;
  s.steps = in.req<std::uint64_t>("steps");
  std::size_t k = 0;
  for (const auto& t : in.array("freeze")) {
    const std::string path = in.field_path("freeze") + "[" + std::to_string(k++) + "]";
    const auto tag = JsonIn::convert<std::string>(t, path);
    s.freeze.insert(config_field(path, [&] { return freeze_tag_from_string(tag); }));
  }
  s.lr = schedule_from_json(in.child("lr"));
  s.lr_offset = in.opt<std::uint64_t>("lr_offset", 0);
  s.batch_tokens = in.opt<double>("batch_tokens", s.batch_tokens);
  s.batch_size = in.opt<std::size_t>("batch_size", s.batch_size);
  s.max_grad_norm = in.opt<double>("max_grad_norm", s.max_grad_norm);
  return s;
}

// ---------------------------------------------------------------- desk scale and plans

inline DeskScale desk_from_json(const JsonIn& in) {
  in.only({"d_model", "d_ffn", "heads", "vocab_size", "max_positions", "step_divisor", "batch_size", "peak_lr", "dropout", "layers"});
  DeskScale d;
  d.d_model = in.opt<std::size_t>("d_model", d.d_model);
  d.d_ffn = in.opt<std::size_t>("d_ffn", d.d_ffn);
  d.heads = in.opt<std::size_t>("heads", d.heads);
  d.vocab_size = in.opt<std::size_t>("vocab_size", d.vocab_size);
  d.max_positions = in.opt<std::size_t>("max_positions", d.max_positions);
  d.step_divisor = in.opt<std::uint64_t>("step_divisor", d.step_divisor);
  d.batch_size = in.opt<std::size_t>("batch_size", d.batch_size);
  d.peak_lr = in.opt<double>("peak_lr", d.peak_lr);
  d.dropout = in.opt<double>("dropout", d.dropout);
  d.layers = in.opt<std::size_t>("layers", d.layers);
  return d;
}

inline OrderedJson plan_to_json(const TrainPlan& p) {
  OrderedJson j;
  j["name"] = p.name;
  j["model"] = model_to_json(p.model);
  OrderedJson init;
  init["kind"] = to_string(p.init);
  if (!p.init_path.empty()) init["path"] = p.init_path;
  j["init"] = init;
  if (p.donor) j["donor_plan"] = plan_to_json(*p.donor);
  OrderedJson stages = OrderedJson::array();
  for (const auto& s : p.stages) stages.push_back(stage_to_json(s));
  j["stages"] = stages;
  return j;
}

/// A plan is either {"preset": name, "desk": {...}?} or a full description with
/// name, model, init, donor_plan and stages. Without "desk" a preset stays full size.
inline TrainPlan plan_from_json(const JsonIn& in) {
  if (in.has("preset")) {
    in.only({"preset", "desk", "name", "init"});
    const auto name = in.req<std::string>("preset");
    TrainPlan p = config_field(in.field_path("preset"), [&] { return preset_plan(name); });
    if (in.has("desk")) p = desk_scale(p, desk_from_json(in.child("desk")));
    if (in.has("name")) p.name = in.req<std::string>("name");
    if (in.has("init")) {
      auto init = in.child("init");
      init.only({"kind", "path"});
      p.init_path = init.opt<std::string>("path", "");
    }
    config_field(in.path().empty() ? "plan" : in.path(), [&] { p.validate(); });
    return p;
  }
  in.only({"name", "model", "init", "donor_plan", "stages"});
  TrainPlan p;
  p.name = in.req<std::string>("name");
  p.model = model_from_json(in.child("model"));
  if (in.has("init")) {
    auto init = in.child("init");
    init.only({"kind", "path"});
    const auto kind = init.req<std::string>("kind");
    p.init = config_field(init.field_path("kind"), [&] { return init_kind_from_string(kind); });
    p.init_path = init.opt<std::string>("path", "");
  }
  if (in.has("donor_plan")) {
    const Json& d = in.raw()["donor_plan"];
    if (d.is_string()) {
      const auto name = d.get<std::string>();
      p.donor = std::make_shared<const TrainPlan>(config_field(in.field_path("donor_plan"), [&] { return preset_plan(name); }));
    } else {
      p.donor = std::make_shared<const TrainPlan>(plan_from_json(in.child("donor_plan")));
    }
  }
  const auto stages = in.array("stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    p.stages.push_back(stage_from_json(JsonIn(stages[i], in.field_path("stages") + "[" + std::to_string(i) + "]")));
  }
  config_field(in.path().empty() ? "plan" : in.path(), [&] { p.validate(); });
  return p;
}

}  // namespace twostage::train
