// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "twostage/evalft/beam.hpp"
#include "twostage/evalft/metrics.hpp"
#include "twostage/evalft/tasks.hpp"
#include "twostage/model/heads.hpp"
#include "twostage/model/surgery.hpp"
#include "twostage/train/schedule.hpp"
#include "twostage/train/trainer.hpp"

namespace twostage::evalft {

using model::ModelConfig;
using model::ParameterStore;

enum class ValidationMetric { Accuracy, SlotF1, ExactMatch, Perplexity };

inline const char* to_string(ValidationMetric m) {
  switch (m) {
    case ValidationMetric::Accuracy: return "accuracy";
    case ValidationMetric::SlotF1: return "f1";
    case ValidationMetric::ExactMatch: return "exact_match";
    case ValidationMetric::Perplexity: return "perplexity";
  }
  return "?";
}

inline ValidationMetric validation_metric_from_string(const std::string& s) {
  for (auto m : {ValidationMetric::Accuracy, ValidationMetric::SlotF1, ValidationMetric::ExactMatch, ValidationMetric::Perplexity}) {
    if (s == to_string(m)) return m;
  }
  throw Error("unknown validation metric '" + s + "' (expected accuracy|f1|exact_match|perplexity)");
}

inline bool higher_is_better(ValidationMetric m) { return m != ValidationMetric::Perplexity; }

struct FinetuneConfig {
  TaskKind task = TaskKind::Classification;
  double peak_lr = 1e-5;
  train::WarmupKind warmup_kind = train::WarmupKind::LinearFromZero;
  std::uint64_t warmup_steps = 1000;
  double warmup_floor = 1e-7;
  double decay_end = 0.0;
  std::size_t batch_size = 128;
  std::size_t epochs = 5;
  std::uint64_t max_updates = 30000;
  ValidationMetric metric = ValidationMetric::Accuracy;
  std::vector<std::size_t> head_hidden{512};
  std::set<train::FreezeTag> freeze{train::FreezeTag::Embeddings};
  double dropout = 0.1;
  GenConfig gen;

  void validate() const {
    if (batch_size == 0 || epochs == 0 || max_updates == 0) throw Error("batch_size, epochs and max_updates must be positive");
    if (!(peak_lr > decay_end) || decay_end < 0.0) throw Error("fine-tuning needs peak_lr > decay_end >= 0");
    const bool ok = task == TaskKind::Classification ? metric == ValidationMetric::Accuracy
                    : task == TaskKind::Labeling     ? metric == ValidationMetric::SlotF1 || metric == ValidationMetric::Accuracy
                                                     : metric == ValidationMetric::ExactMatch || metric == ValidationMetric::Perplexity;
    if (!ok) throw Error(std::string("validation metric ") + to_string(metric) + " does not fit a " + to_string(task) + " task");
    if (task == TaskKind::Generation && freeze.count(train::FreezeTag::Head)) throw Error("generation has no task head to freeze");
    gen.validate();
  }

  /// Total number of updates for a training split of n examples.
  std::uint64_t total_updates(std::size_t n) const {
    const std::uint64_t per_epoch = (n + batch_size - 1) / batch_size;
    return std::min<std::uint64_t>(max_updates, per_epoch * epochs);
  }

  train::LrSchedule schedule(std::size_t n) const {
    train::LrSchedule s;
    s.peak = peak_lr;
    s.total_steps = total_updates(n);
    s.warmup_steps = std::min(warmup_steps, s.total_steps);
    s.warmup_kind = warmup_kind;
    s.floor = warmup_floor;
    s.end = decay_end;
    return s;
  }
};

/// Fine-tuning defaults per evaluation task (xnli, matis, wikiann, udpos, mtop, xsum).
inline FinetuneConfig table8_preset(const std::string& task) {
  FinetuneConfig c;
  c.freeze = {train::FreezeTag::Embeddings};
  auto encoder = [&](TaskKind kind, double lr, std::uint64_t warmup, std::size_t epochs, std::uint64_t updates,
                     std::vector<std::size_t> hidden) {
    c.task = kind;
    c.peak_lr = lr;
    c.warmup_kind = train::WarmupKind::LinearFromZero;
    c.warmup_steps = warmup;
    c.decay_end = 0.0;
    c.batch_size = 128;
    c.epochs = epochs;
    c.max_updates = updates;
    c.metric = kind == TaskKind::Classification ? ValidationMetric::Accuracy : ValidationMetric::SlotF1;
    c.head_hidden = std::move(hidden);
  };
  auto seq2seq = [&](ValidationMetric metric) {
    c.task = TaskKind::Generation;
    c.peak_lr = 5e-6;
    c.warmup_kind = train::WarmupKind::ExponentialFromFloor;
    c.warmup_floor = 1e-7;
    c.warmup_steps = 1000;
    c.decay_end = 1e-7;
    c.batch_size = 32;
    c.epochs = 200;
    c.max_updates = 50000;
    c.metric = metric;
    c.head_hidden.clear();
    c.gen.beam_size = 3;
  };
  if (task == "xnli") {
    encoder(TaskKind::Classification, 1e-5, 1000, 5, 30000, {512});
  } else if (task == "matis") {
    encoder(TaskKind::Labeling, 3e-5, 500, 200, 7000, {256, 256});
  } else if (task == "wikiann") {
    encoder(TaskKind::Labeling, 3e-5, 300, 20, 3000, {512});
  } else if (task == "udpos") {
    encoder(TaskKind::Labeling, 3e-5, 1000, 56, 9000, {512});
  } else if (task == "mtop") {
    seq2seq(ValidationMetric::ExactMatch);
  } else if (task == "xsum") {
    seq2seq(ValidationMetric::Perplexity);
  } else {
    throw Error("unknown fine-tuning preset '" + task + "' (expected xnli|matis|wikiann|udpos|mtop|xsum)");
  }
  return c;
}

/// A model ready for one task: encoder plus head, or a full seq2seq model.
template <typename T>
struct TaskModel {
  ModelConfig cfg;
  ParameterStore<T> params;
  TaskKind kind = TaskKind::Classification;
  model::HeadSpec head;
  std::vector<std::string> label_names;  // index = head output

  std::size_t label_index(const std::string& l) const {
    auto it = std::lower_bound(label_names.begin(), label_names.end(), l);
    if (it == label_names.end() || *it != l) throw Error("label '" + l + "' is not in the model's label set");
    return static_cast<std::size_t>(it - label_names.begin());
  }

  /// Throws unless the parameters hold a head matching label_names.
  void check_head() const {
    if (kind == TaskKind::Generation) {
      if (!cfg.is_seq2seq()) throw Error("generation model has no decoder");
      return;
    }
    const std::string out = head.prefix() + "out.weight";
    if (!params.contains(out)) throw Error("model has no fine-tuned " + std::string(to_string(kind)) + " head");
    if (params.get(out).dim(0) != label_names.size() || head.label_count != label_names.size()) {
      throw DimensionError("head has " + std::to_string(params.get(out).dim(0)) + " outputs for " +
                           std::to_string(label_names.size()) + " labels");
    }
  }
};

inline std::vector<std::string> label_set(const Dataset& a, const Dataset& b) {
  std::set<std::string> s;
  for (const Dataset* d : {&a, &b})
    for (const auto& ex : d->labeled) s.insert(ex.labels.begin(), ex.labels.end());
  return {s.begin(), s.end()};
}

/// Builds the task model from a pre-trained store. Encoder tasks take the encoder
/// (extracted from a seq2seq model if needed) and a fresh head.
template <typename T>
TaskModel<T> make_task_model(const ModelConfig& cfg, const ParameterStore<T>& pretrained, TaskKind kind,
                             std::vector<std::string> labels, const std::vector<std::size_t>& hidden, double dropout,
                             std::uint64_t seed) {
  TaskModel<T> m;
  m.kind = kind;
  if (kind == TaskKind::Generation) {
    if (!cfg.is_seq2seq()) throw Error("generation fine-tuning needs a seq2seq checkpoint");
    m.cfg = cfg;
    m.params = pretrained;
  } else {
    if (cfg.is_seq2seq()) {
      std::tie(m.cfg, m.params) = model::extract_encoder(pretrained, cfg);
    } else {
      m.cfg = cfg;
      m.params = pretrained;
    }
    for (const auto& n : m.params.names_with_prefix(model::names::kMlmHead)) m.params.erase(n);
    for (const auto& n : m.params.names_with_prefix("head.")) m.params.erase(n);
    if (labels.empty()) throw Error("task has no labels");
    m.label_names = std::move(labels);
    m.head.kind = kind == TaskKind::Classification ? model::HeadKind::Classification : model::HeadKind::Labeling;
    m.head.hidden = hidden;
    m.head.label_count = m.label_names.size();
    model::attach_head(m.params, m.cfg, m.head, seed);
  }
  m.cfg.dropout = dropout;
  return m;
}

// ---------------------------------------------------------------- batches

struct EncoderTaskBatch {
  data::TokenBatch input;
  std::vector<std::vector<std::size_t>> word_starts;  // shifted past BOS
  std::vector<std::int32_t> labels;                   // one per head row
};

template <typename T>
EncoderTaskBatch encoder_task_batch(const TaskModel<T>& m, const std::vector<const LabeledExample*>& exs) {
  std::vector<std::vector<data::TokenId>> rows;
  EncoderTaskBatch b;
  for (const auto* ex : exs) {
    rows.push_back(data::frame(ex->ids));
    if (rows.back().size() > m.cfg.max_positions) {
      throw Error("example of " + std::to_string(rows.back().size()) + " tokens exceeds max_positions " + std::to_string(m.cfg.max_positions));
    }
    std::vector<std::size_t> ws;
    for (auto s : ex->word_starts) ws.push_back(s + 1);
    b.word_starts.push_back(std::move(ws));
    if (m.kind == TaskKind::Classification) {
      b.labels.push_back(static_cast<std::int32_t>(m.label_index(ex->labels.at(0))));
    } else {
      for (const auto& l : ex->labels) b.labels.push_back(static_cast<std::int32_t>(m.label_index(l)));
    }
  }
  b.input = data::pad_rows(rows);
  return b;
}

template <typename T>
data::Seq2SeqBatch generation_batch(const TaskModel<T>& m, const std::vector<const GenExample*>& exs) {
  std::vector<std::vector<data::TokenId>> src, tin, lab;
  for (const auto* ex : exs) {
    src.push_back(data::frame(ex->source_ids));
    std::vector<data::TokenId> t{data::special::BOS};
    t.insert(t.end(), ex->target_ids.begin(), ex->target_ids.end());
    tin.push_back(t);
    std::vector<data::TokenId> l(ex->target_ids);
    l.push_back(data::special::EOS);
    lab.push_back(std::move(l));
    if (src.back().size() > m.cfg.max_positions || tin.back().size() > m.cfg.max_positions) {
      throw Error("generation example exceeds max_positions " + std::to_string(m.cfg.max_positions));
    }
  }
  data::Seq2SeqBatch b{data::pad_rows(src), data::pad_rows(tin), {}};
  b.labels = data::pad_labels(lab, b.target_in.length);
  return b;
}

template <typename T>
tensor::Var<T> encoder_task_logits(tensor::Graph<T>& g, const TaskModel<T>& m, const EncoderTaskBatch& b) {
  auto states = model::encoder_forward(g, m.cfg, m.params, b.input);
  auto out = model::encoder_output<T>(g, m.cfg, m.params, states);
  return model::head_forward(g, m.cfg, m.params, m.head, out, &b.word_starts);
}

// ---------------------------------------------------------------- evaluation

template <typename T>
std::vector<std::vector<std::string>> predict_labels(const TaskModel<T>& m, const Dataset& d, std::size_t batch_size = 64) {
  m.check_head();
  if (d.kind != m.kind) throw Error("dataset kind does not match the model's task");
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 0; i < d.labeled.size(); i += batch_size) {
    std::vector<const LabeledExample*> exs;
    for (std::size_t k = i; k < std::min(d.labeled.size(), i + batch_size); ++k) exs.push_back(&d.labeled[k]);
    const auto b = encoder_task_batch(m, exs);
    tensor::Graph<T> g;
    const auto logits = encoder_task_logits(g, m, b).value();
    const std::size_t L = m.label_names.size();
    std::size_t row = 0;
    for (const auto* ex : exs) {
      const std::size_t n = m.kind == TaskKind::Classification ? 1 : ex->labels.size();
      std::vector<std::string> pred;
      for (std::size_t r = 0; r < n; ++r, ++row) {
        const T* p = logits.data() + row * L;
        pred.push_back(m.label_names[static_cast<std::size_t>(std::max_element(p, p + L) - p)]);
      }
      out.push_back(std::move(pred));
    }
  }
  return out;
}

template <typename T>
train::NllSum generation_nll(const TaskModel<T>& m, const Dataset& d, std::size_t batch_size = 32) {
  train::NllSum acc;
  for (std::size_t i = 0; i < d.generation.size(); i += batch_size) {
    std::vector<const GenExample*> exs;
    for (std::size_t k = i; k < std::min(d.generation.size(), i + batch_size); ++k) exs.push_back(&d.generation[k]);
    const auto part = train::eval_denoise<T>(m.cfg, m.params, {generation_batch(m, exs)});
    acc.total += part.total;
    acc.tokens += part.tokens;
  }
  return acc;
}

/// exp of the token-weighted mean NLL over every scored target token.
inline double perplexity(const train::NllSum& s) {
  if (s.tokens == 0) throw Error("perplexity of an empty evaluation stream");
  return std::exp(s.mean());
}

template <typename T>
double perplexity(const ModelConfig& cfg, const ParameterStore<T>& ps, const std::vector<data::Seq2SeqBatch>& batches) {
  if (batches.empty()) throw Error("perplexity of an empty evaluation stream");
  return perplexity(train::eval_denoise(cfg, ps, batches));
}

template <typename T>
std::vector<std::string> generate_texts(const TaskModel<T>& m, const Dataset& d, const GenConfig& gc, const data::Vocab& vocab) {
  m.check_head();
  std::vector<std::string> out;
  for (const auto& ex : d.generation) out.push_back(vocab.decode(generate(m.cfg, m.params, ex.source_ids, gc)));
  return out;
}

/// Single validation metric, computing only what it needs.
template <typename T>
double evaluate_metric(const TaskModel<T>& m, const Dataset& d, ValidationMetric metric, const GenConfig& gc,
                       const data::Vocab* vocab) {
  if (d.empty()) throw Error("evaluation split is empty");
  switch (metric) {
    case ValidationMetric::Accuracy: {
      const auto pred = predict_labels(m, d);
      std::size_t hit = 0, total = 0;
      for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t k = 0; k < pred[i].size(); ++k, ++total) hit += pred[i][k] == d.labeled[i].labels[k];
      return static_cast<double>(hit) / static_cast<double>(total);
    }
    case ValidationMetric::SlotF1: {
      std::vector<std::vector<std::string>> gold;
      for (const auto& ex : d.labeled) gold.push_back(ex.labels);
      return entity_f1(predict_labels(m, d), gold).f1;
    }
    case ValidationMetric::ExactMatch: {
      if (!vocab) throw Error("exact-match evaluation needs the vocabulary");
      const auto pred = generate_texts(m, d, gc, *vocab);
      std::size_t hit = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) hit += sciem(pred[i], d.generation[i].target);
      return static_cast<double>(hit) / static_cast<double>(pred.size());
    }
    case ValidationMetric::Perplexity:
      m.check_head();
      return perplexity(generation_nll(m, d));
  }
  return 0.0;
}

/// Every metric reported for the task kind.
template <typename T>
MetricMap evaluate(const TaskModel<T>& m, const Dataset& d, const GenConfig& gc, const data::Vocab* vocab) {
  if (d.empty()) throw Error("evaluation split is empty");
  MetricMap out;
  if (d.kind == TaskKind::Classification) {
    out["accuracy"] = evaluate_metric(m, d, ValidationMetric::Accuracy, gc, vocab);
  } else if (d.kind == TaskKind::Labeling) {
    const auto pred = predict_labels(m, d);
    std::vector<std::vector<std::string>> gold;
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < d.labeled.size(); ++i) {
      gold.push_back(d.labeled[i].labels);
      for (std::size_t k = 0; k < pred[i].size(); ++k, ++total) hit += pred[i][k] == gold[i][k];
    }
    const auto s = entity_f1(pred, gold);
    out["accuracy"] = static_cast<double>(hit) / static_cast<double>(total);
    out["precision"] = s.precision;
    out["recall"] = s.recall;
    out["f1"] = s.f1;
  } else {
    if (!vocab) throw Error("generation evaluation needs the vocabulary");
    const auto pred = generate_texts(m, d, gc, *vocab);
    std::vector<std::string> gold;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      gold.push_back(d.generation[i].target);
      hit += sciem(pred[i], gold.back());
    }
    const auto r = corpus_rouge(pred, gold);
    out["exact_match"] = static_cast<double>(hit) / static_cast<double>(pred.size());
    out["rouge1"] = r.rouge1;
    out["rouge2"] = r.rouge2;
    out["rougeL"] = r.rougeL;
    out["perplexity"] = perplexity(generation_nll(m, d));
  }
  return out;
}

// ---------------------------------------------------------------- fine-tuning

struct EpochRecord {
  std::size_t epoch = 0;
  std::uint64_t updates = 0;
  double train_loss = 0.0;  // mean over the epoch's updates
  double metric = 0.0;
};

template <typename T>
struct FinetuneResult {
  TaskModel<T> best;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::vector<EpochRecord> history;
};

/// Trains on `train_set`, evaluates `valid_set` after every epoch and keeps the epoch
/// with the best validation metric (earliest on ties).
template <typename T>
FinetuneResult<T> finetune(const ModelConfig& cfg, const ParameterStore<T>& pretrained, const Dataset& train_set,
                           const Dataset& valid_set, const FinetuneConfig& fc, std::uint64_t seed, const data::Vocab* vocab = nullptr) {
  fc.validate();
  if (train_set.empty()) throw Error("finetune: training split is empty");
  if (valid_set.empty()) throw Error("finetune: validation split is empty");
  if (train_set.kind != fc.task || valid_set.kind != fc.task) throw Error("finetune: dataset kind does not match the configured task");
  TaskModel<T> m = make_task_model(cfg, pretrained, fc.task, fc.task == TaskKind::Generation ? std::vector<std::string>{} : label_set(train_set, valid_set),
                                   fc.head_hidden, fc.dropout, mix_seed(seed, 1));
  train::apply_freeze_plan(m.params, fc.freeze);
  tensor::OptimState<T> opt;
  const auto sched = fc.schedule(train_set.size());

  FinetuneResult<T> res;
  std::uint64_t updates = 0;
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < fc.epochs && updates < sched.total_steps; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(seed, 10 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t i = 0; i < order.size() && updates < sched.total_steps; i += fc.batch_size) {
      Rng dropout_rng(mix_seed(mix_seed(seed, 2), updates));
      tensor::Graph<T> g;
      g.set_training(true, &dropout_rng);
      tensor::Var<T> loss;
      const std::size_t end = std::min(order.size(), i + fc.batch_size);
      if (fc.task == TaskKind::Generation) {
        std::vector<const GenExample*> exs;
        for (std::size_t k = i; k < end; ++k) exs.push_back(&train_set.generation[order[k]]);
        loss = train::denoise_loss(g, m.cfg, m.params, generation_batch(m, exs));
      } else {
        std::vector<const LabeledExample*> exs;
        for (std::size_t k = i; k < end; ++k) exs.push_back(&train_set.labeled[order[k]]);
        const auto b = encoder_task_batch(m, exs);
        loss = tensor::softmax_cross_entropy(encoder_task_logits(g, m, b), b.labels);
      }
      const double value = static_cast<double>(loss.value().item());
      if (!std::isfinite(value)) throw train::TrainAbort("non-finite fine-tuning loss at update " + std::to_string(updates + 1));
      g.backward(loss);
      tensor::adam_step(m.params, model::collect_gradients(g, m.params), opt, train::lr_at(sched, updates + 1));
      ++updates;
      loss_sum += value;
      ++loss_n;
    }
    const double metric = evaluate_metric(m, valid_set, fc.metric, fc.gen, vocab);
    res.history.push_back({epoch, updates, loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0, metric});
    const bool better = !have_best || (higher_is_better(fc.metric) ? metric > res.best_metric : metric < res.best_metric);
    if (better) {
      res.best = m;
      res.best_epoch = epoch;
      res.best_metric = metric;
      have_best = true;
    }
  }
  return res;
}

}  // namespace twostage::evalft
