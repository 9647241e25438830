// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twostage/data/batch.hpp"
#include "twostage/model/surgery.hpp"
#include "twostage/model/transformer.hpp"
#include "twostage/tensor/json_io.hpp"
#include "twostage/tensor/optim.hpp"
#include "twostage/train/freeze.hpp"
#include "twostage/train/plan.hpp"

namespace twostage::train {

using model::ModelConfig;
using model::ParameterStore;
using tensor::Graph;
using tensor::Var;

/// Everything needed to continue training: weights, optimizer moments and lineage.
template <typename T>
struct ModelState {
  ModelConfig cfg;
  ParameterStore<T> params;
  tensor::OptimState<T> opt;
  std::uint64_t step = 0;
  std::vector<std::string> provenance;
};

struct TraceRecord {
  std::uint64_t step = 0;
  std::string stage;
  double lr = 0.0;
  double loss = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

inline std::string trace_line(const TraceRecord& r) {
  OrderedJson j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  return j.dump();
}

/// Training stopped on a non-finite loss.
class TrainAbort : public Error {
 public:
  using Error::Error;
};

template <typename T>
Var<T> mlm_loss(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps, const data::MlmBatch& b) {
  auto states = model::encoder_forward(g, cfg, ps, b.input);
  return tensor::softmax_cross_entropy(model::mlm_logits<T>(g, cfg, ps, states), b.labels);
}

template <typename T>
Var<T> denoise_loss(Graph<T>& g, const ModelConfig& cfg, const ParameterStore<T>& ps, const data::Seq2SeqBatch& b) {
  auto states = model::encoder_forward(g, cfg, ps, b.source);
  auto logits = model::decoder_forward<T>(g, cfg, ps, b.target_in, states, b.source.valid);
  return tensor::softmax_cross_entropy(logits, b.labels);
}

inline std::size_t counted_labels(const std::vector<std::int32_t>& labels) {
  std::size_t n = 0;
  for (auto l : labels) n += l != tensor::kIgnoreLabel;
  return n;
}

/// Sum of token NLL and number of scored tokens, without dropout.
struct NllSum {
  double total = 0.0;
  std::size_t tokens = 0;
  double mean() const { return tokens ? total / static_cast<double>(tokens) : 0.0; }
};

template <typename T>
NllSum eval_denoise(const ModelConfig& cfg, const ParameterStore<T>& ps, const std::vector<data::Seq2SeqBatch>& batches) {
  NllSum acc;
  for (const auto& b : batches) {
    Graph<T> g;
    const std::size_t n = counted_labels(b.labels);
    acc.total += static_cast<double>(denoise_loss(g, cfg, ps, b).value().item()) * static_cast<double>(n);
    acc.tokens += n;
  }
  return acc;
}

template <typename T>
NllSum eval_mlm(const ModelConfig& cfg, const ParameterStore<T>& ps, const std::vector<data::MlmBatch>& batches) {
  NllSum acc;
  for (const auto& b : batches) {
    Graph<T> g;
    const std::size_t n = counted_labels(b.labels);
    acc.total += static_cast<double>(mlm_loss(g, cfg, ps, b).value().item()) * static_cast<double>(n);
    acc.tokens += n;
  }
  return acc;
}

/// Scales gradients in place so their global norm is at most `max_norm`.
template <typename T>
void clip_gradients(model::GradMap<T>& grads, double max_norm) {
  const double norm = tensor::grad_norm(grads);
  if (max_norm <= 0.0 || norm <= max_norm) return;
  const T s = static_cast<T>(max_norm / norm);
  for (auto& [_, g] : grads)
    for (T& v : g.values()) v *= s;
}

using StepCallback = std::function<void(const TraceRecord&)>;

/// Performs exactly stage.steps updates. Batches and dropout masks are functions of
/// (seed, step) only. Update i uses the rate lr_at(lr_offset + i + 1).
template <typename T>
std::vector<TraceRecord> run_stage(ModelState<T>& st, const data::SequencePool& pool, const TrainStage& stage,
                                   std::uint64_t seed, const StepCallback& on_step = {}) {
  if (stage.objective == Objective::Denoise && !st.cfg.is_seq2seq()) throw Error("stage '" + stage.name + "': denoise needs a decoder");
  if (stage.objective == Objective::MLM && st.cfg.is_seq2seq()) throw Error("stage '" + stage.name + "': mlm needs an encoder-only model");
  if (stage.lr_offset + stage.steps > stage.lr.total_steps) throw Error("stage '" + stage.name + "': schedule too short");
  apply_freeze_plan(st.params, stage.freeze);
  const data::BatchSource source(pool, stage.noise, st.cfg.vocab_size, stage.batch_size, mix_seed(seed, 1));
  const std::uint64_t dropout_seed = mix_seed(seed, 2);

  std::vector<TraceRecord> trace;
  trace.reserve(stage.steps);
  for (std::uint64_t i = 0; i < stage.steps; ++i) {
    Rng dropout_rng(mix_seed(dropout_seed, i));
    Graph<T> g;
    g.set_training(true, &dropout_rng);
    Var<T> loss = stage.objective == Objective::MLM ? mlm_loss(g, st.cfg, st.params, source.mlm(i))
                                                    : denoise_loss(g, st.cfg, st.params, source.denoise(i));
    const double value = static_cast<double>(loss.value().item());
    if (!std::isfinite(value)) {
      throw TrainAbort("non-finite loss at step " + std::to_string(st.step + 1) + " (stage '" + stage.name + "')");
    }
    g.backward(loss);
    auto grads = model::collect_gradients(g, st.params);
    if (stage.max_grad_norm > 0.0) clip_gradients(grads, stage.max_grad_norm);
    const double lr = lr_at(stage.lr, stage.lr_offset + i + 1);
    tensor::adam_step(st.params, grads, st.opt, lr);
    ++st.step;
    trace.push_back({st.step, stage.name, lr, value});
    if (on_step) on_step(trace.back());
  }
  st.provenance.push_back(stage.name + "@" + std::to_string(st.step));
  return trace;
}

/// Same architecture (dropout may differ).
inline bool same_architecture(ModelConfig a, ModelConfig b) {
  a.dropout = b.dropout = 0.0;
  return a == b;
}

/// Builds the stage-0 model of a plan. `donor` is required for every init kind except Random.
template <typename T>
ModelState<T> init_plan_state(const TrainPlan& plan, std::uint64_t seed, const ModelState<T>* donor) {
  plan.validate();
  ModelState<T> st;
  st.cfg = plan.model;
  const std::uint64_t init_seed = mix_seed(seed, 100);
  if (plan.init != InitKind::Random && !donor) {
    throw Error("plan '" + plan.name + "': init kind " + to_string(plan.init) + " needs a donor checkpoint");
  }
  switch (plan.init) {
    case InitKind::Random:
      st.params = plan.model.is_seq2seq() ? model::init_seq2seq_model<T>(plan.model, init_seed)
                                          : model::init_encoder_model<T>(plan.model, init_seed);
      break;
    case InitKind::FromCheckpoint:
      if (!same_architecture(donor->cfg, plan.model)) throw Error("plan '" + plan.name + "': checkpoint architecture differs from plan model");
      st.params = donor->params;
      st.opt = donor->opt;
      st.step = donor->step;
      st.provenance = donor->provenance;
      break;
    case InitKind::WarmStartEncoder:
      if (donor->cfg.is_seq2seq()) throw Error("plan '" + plan.name + "': warm start needs an encoder-only donor");
      if (donor->cfg.vocab_size != plan.model.vocab_size || donor->cfg.max_positions != plan.model.max_positions) {
        throw DimensionError("plan '" + plan.name + "': donor vocabulary or position table differs from plan model");
      }
      st.params = model::warm_start_seq2seq(donor->params, plan.model, init_seed);
      st.provenance = donor->provenance;
      st.provenance.push_back("warm_start");
      break;
    case InitKind::ExtractEncoder: {
      if (!donor->cfg.is_seq2seq()) throw Error("plan '" + plan.name + "': extraction needs a seq2seq donor");
      auto [cfg, ps] = model::extract_encoder(donor->params, donor->cfg);
      if (!same_architecture(cfg, plan.model)) throw DimensionError("plan '" + plan.name + "': extracted encoder differs from plan model");
      st.params = std::move(ps);
      st.provenance = donor->provenance;
      st.provenance.push_back("extract_encoder");
      break;
    }
  }
  return st;
}

template <typename T>
struct PlanResult {
  ModelState<T> state;
  std::vector<std::vector<TraceRecord>> traces;  // one per stage
};

struct PlanCallbacks {
  std::function<void(std::size_t stage, const TraceRecord&)> on_step;
  std::function<void(std::size_t stage)> on_stage_begin;
};

/// Runs every stage in order, threading model and optimizer state.
template <typename T>
PlanResult<T> run_plan(const TrainPlan& plan, const data::SequencePool& pool, std::uint64_t seed, const ModelState<T>* donor,
                       const PlanCallbacks& cb = {},
                       const std::function<void(std::size_t, const ModelState<T>&)>& on_stage_end = {}) {
  PlanResult<T> out{init_plan_state<T>(plan, seed, donor), {}};
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    if (cb.on_stage_begin) cb.on_stage_begin(i);
    StepCallback step_cb;
    if (cb.on_step) step_cb = [&, i](const TraceRecord& r) { cb.on_step(i, r); };
    out.traces.push_back(run_stage(out.state, pool, plan.stages[i], mix_seed(seed, 1000 + i), step_cb));
    if (on_stage_end) on_stage_end(i, out.state);
  }
  return out;
}

}  // namespace twostage::train
