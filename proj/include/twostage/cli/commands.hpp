// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "twostage/cli/checkpoint.hpp"
#include "twostage/cli/config.hpp"
#include "twostage/cli/datasets.hpp"
#include "twostage/cost/tu.hpp"

namespace twostage::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitAbort = 3 };

struct Io {
  std::ostream& out;  // tables and summaries
  std::ostream& log;  // progress and diagnostics
};

inline void write_jsonl(const fs::path& path, const std::vector<OrderedJson>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_text_file(path.string(), text);
}

inline void write_json(const fs::path& path, const Json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

template <typename Fn>
auto with_dtype(const std::string& dtype, Fn&& fn) {
  if (dtype == "f64") return fn(double{});
  return fn(float{});
}

inline Json metrics_json(const evalft::MetricMap& m) {
  Json j = Json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

inline Json aggregate_json(const std::vector<evalft::MetricMap>& runs) {
  Json j = Json::object();
  for (const auto& [k, ms] : evalft::aggregate(runs)) j[k] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
  return j;
}

inline void print_aggregate(Io io, const Json& agg) {
  for (const auto& [split, metrics] : agg.items())
    for (const auto& [name, v] : metrics.items())
      io.out << split << " " << name << ": " << v["mean"].get<double>() << " +- " << v["std"].get<double>() << "\n";
}

// ================================================================ pack

struct PackJob {
  fs::path corpus;
  std::optional<fs::path> vocab;
  std::size_t vocab_size = 256;
  std::size_t target_len = 64;
  double alpha = 0.3;
  bool byte_fallback = false;
};

inline PackJob pack_job(const ExperimentConfig& c) {
  const auto in = c.section("pack");
  in.only({"corpus", "vocab", "vocab_size", "target_len", "alpha", "byte_fallback"});
  PackJob j;
  j.corpus = existing_path(c, in, "corpus");
  if (in.has("vocab")) j.vocab = existing_path(c, in, "vocab");
  j.vocab_size = in.opt<std::size_t>("vocab_size", j.vocab_size);
  j.target_len = in.opt<std::size_t>("target_len", j.target_len);
  if (j.target_len < 2) throw ConfigError(in.field_path("target_len") + ": must be at least 2");
  j.alpha = in.opt<double>("alpha", j.alpha);
  if (!(j.alpha > 0.0 && j.alpha <= 1.0)) throw ConfigError(in.field_path("alpha") + ": must lie in (0, 1]");
  j.byte_fallback = in.opt<bool>("byte_fallback", j.byte_fallback);
  return j;
}

inline int cmd_pack(const ExperimentConfig& c, Io io) {
  const PackJob job = pack_job(c);
  const fs::path out = c.output_dir();
  const auto records = input_field("pack.corpus", [&] { return data::read_corpus(job.corpus.string()); });
  const data::Vocab vocab = job.vocab ? input_field("pack.vocab", [&] { return load_vocab(*job.vocab); })
                                      : input_field("pack.vocab_size", [&] {
                                          return data::build_vocab(data::texts_of(records), job.vocab_size, job.byte_fallback);
                                        });
  const auto docs = data::tokenize_corpus(records, vocab);
  const auto seqs = data::pack_documents(docs, job.target_len);
  const auto stats = pack_stats(docs, seqs, job.target_len, job.alpha);
  write_packed(out, vocab, seqs, stats);
  io.out << "packed " << stats.input_tokens << " tokens into " << stats.sequences << " sequences of " << job.target_len
         << " (padding " << stats.padding_fraction << ") -> " << out.string() << "\n";
  return kExitOk;
}

// ================================================================ pretrain

struct PretrainJob {
  train::TrainPlan plan;
  DataSource data;
  std::optional<DataSource> heldout;
  std::size_t heldout_batches = 4;
  std::string dtype = "f32";
};

namespace detail {

inline void check_plan_names(const train::TrainPlan& p, const std::string& field) {
  auto safe = [&](const std::string& n, const std::string& what) {
    if (n.empty() || n.find('/') != std::string::npos || n.find('\\') != std::string::npos || n == "." || n == "..") {
      throw ConfigError(field + ": " + what + " '" + n + "' cannot be used as a directory name");
    }
  };
  safe(p.name, "plan name");
  for (const auto& s : p.stages) safe(s.name, "stage name");
  if (p.donor) check_plan_names(*p.donor, field + ".donor_plan");
}

// Absolute init paths, checked for existence; a plan without one needs a donor plan.
inline train::TrainPlan resolve_init(const ExperimentConfig& c, train::TrainPlan p, const std::string& field) {
  if (p.donor) p.donor = std::make_shared<const train::TrainPlan>(resolve_init(c, *p.donor, field + ".donor_plan"));
  if (p.init == train::InitKind::Random) return p;
  if (p.init_path.empty()) {
    if (!p.donor) {
      throw ConfigError(field + ".init.path: init kind " + std::string(train::to_string(p.init)) + " needs a donor checkpoint or donor_plan");
    }
    return p;
  }
  const fs::path ck = c.resolve(p.init_path);
  if (!fs::exists(ck / kManifestName)) throw ConfigError(field + ".init.path: '" + ck.string() + "' is not a checkpoint");
  p.init_path = ck.string();
  return p;
}

}  // namespace detail

inline PretrainJob pretrain_job(const ExperimentConfig& c) {
  const auto in = c.section("pretrain");
  in.only({"plan", "data", "heldout", "heldout_batches", "dtype"});
  PretrainJob j;
  j.plan = train::plan_from_json(in.child("plan"));
  detail::check_plan_names(j.plan, "pretrain.plan");
  j.plan = detail::resolve_init(c, j.plan, "pretrain.plan");
  j.data = data_source_from_json(c, in.child("data"));
  if (in.has("heldout")) j.heldout = data_source_from_json(c, in.child("heldout"));
  j.heldout_batches = in.opt<std::size_t>("heldout_batches", j.heldout_batches);
  if (j.heldout && j.heldout_batches == 0) throw ConfigError(in.field_path("heldout_batches") + ": must be positive");
  j.dtype = dtype_from_json(in);
  return j;
}

struct PreparedData {
  data::Vocab vocab;
  std::vector<data::PackedSequence> seqs;
};

/// Tokenizes and packs a data source. `fixed` forces a vocabulary (held-out data).
inline PreparedData prepare_data(const DataSource& d, const model::ModelConfig& m, const std::string& field, const data::Vocab* fixed) {
  if (m.max_positions < 4) throw ConfigError(field + ": model max_positions is too small for packed sequences");
  const std::size_t target_len = m.max_positions - 2;  // BOS and EOS are added per sequence
  PreparedData p;
  if (d.packed) {
    auto pk = input_field(field + ".packed", [&] { return read_packed(*d.packed); });
    if (pk.target_len > target_len) {
      throw ConfigError(field + ".packed: sequences of " + std::to_string(pk.target_len) + " tokens do not fit max_positions " +
                        std::to_string(m.max_positions));
    }
    if (fixed && !(pk.vocab == *fixed)) throw ConfigError(field + ".packed: vocabulary differs from the training data");
    p.vocab = std::move(pk.vocab);
    p.seqs = std::move(pk.seqs);
  } else {
    const auto records = d.corpus ? input_field(field + ".corpus", [&] { return data::read_corpus(d.corpus->string()); })
                                  : data::synthetic_corpus(*d.synthetic);
    if (fixed) p.vocab = *fixed;
    else if (d.vocab) p.vocab = input_field(field + ".vocab", [&] { return load_vocab(*d.vocab); });
    else p.vocab = input_field(field, [&] { return data::build_vocab(data::texts_of(records), m.vocab_size, d.byte_fallback); });
    p.seqs = data::pack_documents(data::tokenize_corpus(records, p.vocab), target_len);
  }
  if (p.vocab.size() > m.vocab_size) {
    throw ConfigError(field + ": vocabulary of " + std::to_string(p.vocab.size()) + " entries exceeds model vocab_size " +
                      std::to_string(m.vocab_size));
  }
  if (p.seqs.empty()) throw ConfigError(field + ": no tokens to train on");
  return p;
}

template <typename T>
class PretrainRun {
 public:
  PretrainRun(const PretrainJob& job, fs::path out, const data::SequencePool& pool, const data::SequencePool* heldout, Io io)
      : job_(job), out_(std::move(out)), pool_(pool), heldout_(heldout), io_(io) {}

  /// Trains `plan` (and, first, any donor it must be built from). Returns the final state.
  train::ModelState<T> run(const train::TrainPlan& plan, std::uint64_t seed) {
    std::optional<train::ModelState<T>> donor;
    if (plan.init != train::InitKind::Random) {
      if (!plan.init_path.empty()) donor = load_checkpoint<T>(plan.init_path).state;
      else donor = run(*plan.donor, mix_seed(seed, fnv1a(plan.donor->name)));
    }
    const fs::path dir = out_ / plan.name;
    fs::create_directories(dir);
    std::ofstream trace;
    Json stages = Json::array();
    std::vector<double> last_losses;

    train::PlanCallbacks cb;
    cb.on_stage_begin = [&](std::size_t i) {
      const auto& s = plan.stages[i];
      trace = std::ofstream(dir / ("trace-" + std::to_string(i) + "-" + s.name + ".jsonl"), std::ios::binary | std::ios::trunc);
      if (!trace) throw Error("cannot write trace in " + dir.string());
      last_losses.clear();
      io_.log << "[" << plan.name << "] stage " << i << " (" << s.name << "): " << s.steps << " steps\n";
    };
    cb.on_step = [&](std::size_t, const train::TraceRecord& r) {
      trace << train::trace_line(r) << '\n';
      trace.flush();
      last_losses.push_back(r.loss);
    };
    auto on_end = [&](std::size_t i, const train::ModelState<T>& st) {
      trace.close();
      const auto& s = plan.stages[i];
      save_checkpoint(dir / ("stage-" + std::to_string(i) + "-" + s.name), st);
      Json e;
      e["index"] = i;
      e["name"] = s.name;
      e["objective"] = train::to_string(s.objective);
      e["steps"] = s.steps;
      e["final_loss"] = last_losses.back();
      const std::size_t tail = std::max<std::size_t>(1, last_losses.size() / 10);
      double sum = 0.0;
      for (std::size_t k = last_losses.size() - tail; k < last_losses.size(); ++k) sum += last_losses[k];
      e["tail_mean_loss"] = sum / static_cast<double>(tail);
      if (heldout_) {
        const auto h = heldout_loss(st, s, seed);
        e["heldout_loss"] = h.tokens ? Json(h.mean()) : Json();  // null when nothing was scored
      }
      io_.log << "[" << plan.name << "] stage " << i << " done, loss " << last_losses.back() << "\n";
      stages.push_back(std::move(e));
    };
    auto res = train::run_plan<T>(plan, pool_, seed, donor ? &*donor : nullptr, cb, on_end);
    save_checkpoint(dir / "final", res.state);

    Json p;
    p["name"] = plan.name;
    p["seed"] = seed;
    p["total_steps"] = plan.total_steps();
    p["stages"] = std::move(stages);
    try {
      const auto tu = cost::tu_cost(plan).total();
      p["compute_cost_tu"] = tu.str();
    } catch (const Error&) {
      // plans with fractional batch_tokens have no exact cost
    }
    plans_.push_back(std::move(p));
    return std::move(res.state);
  }

  const Json& plans() const { return plans_; }

 private:
  train::NllSum heldout_loss(const train::ModelState<T>& st, const train::TrainStage& s, std::uint64_t seed) const {
    const data::BatchSource src(*heldout_, s.noise, st.cfg.vocab_size, s.batch_size, mix_seed(seed, 0x4e1d));
    if (s.objective == train::Objective::MLM) {
      std::vector<data::MlmBatch> bs;
      for (std::size_t k = 0; k < job_.heldout_batches; ++k) bs.push_back(src.mlm(k));
      return train::eval_mlm(st.cfg, st.params, bs);
    }
    std::vector<data::Seq2SeqBatch> bs;
    for (std::size_t k = 0; k < job_.heldout_batches; ++k) bs.push_back(src.denoise(k));
    return train::eval_denoise(st.cfg, st.params, bs);
  }

  const PretrainJob& job_;
  fs::path out_;
  const data::SequencePool& pool_;
  const data::SequencePool* heldout_;
  Io io_;
  Json plans_ = Json::array();
};

inline int cmd_pretrain(const ExperimentConfig& c, Io io) {
  const PretrainJob job = pretrain_job(c);
  const fs::path out = c.output_dir();
  const auto train_data = prepare_data(job.data, job.plan.model, "pretrain.data", nullptr);
  std::optional<PreparedData> held;
  if (job.heldout) held = prepare_data(*job.heldout, job.plan.model, "pretrain.heldout", &train_data.vocab);

  fs::create_directories(out);
  save_vocab(out / kVocabFile, train_data.vocab);
  const data::SequencePool pool(train_data.seqs, job.data.alpha);
  std::optional<data::SequencePool> held_pool;
  if (held) held_pool.emplace(held->seqs, job.heldout->alpha);

  return with_dtype(job.dtype, [&](auto tag) {
    using T = decltype(tag);
    PretrainRun<T> run(job, out, pool, held_pool ? &*held_pool : nullptr, io);
    run.run(job.plan, c.seed);
    Json s;
    s["command"] = "pretrain";
    s["seed"] = c.seed;
    s["dtype"] = job.dtype;
    s["vocab_size"] = train_data.vocab.size();
    s["vocab_hash"] = hex64(train_data.vocab.hash());
    s["sequences"] = train_data.seqs.size();
    s["plans"] = run.plans();
    s["final_checkpoint"] = job.plan.name + "/final";
    write_json(out / "summary.json", s);
    io.out << "pretrained " << job.plan.name << " -> " << (out / job.plan.name / "final").string() << "\n";
    return kExitOk;
  });
}

// ================================================================ finetune / evaluate

/// Reads one task split and encodes it with the model vocabulary.
inline evalft::Dataset load_split(const fs::path& path, evalft::TaskKind kind, const data::Vocab& vocab, const std::string& field) {
  return input_field(field, [&] { return evalft::encode_task(evalft::read_task_file(path.string(), kind), kind, vocab); });
}

inline std::string split_name(const std::string& base, const std::string& lang) { return lang.empty() ? base : base + "/" + lang; }

/// Generation metrics plus one record per example (prediction, reference, exact match).
template <typename T>
std::pair<evalft::MetricMap, Json> generation_report(const evalft::TaskModel<T>& m, const evalft::Dataset& d, const evalft::GenConfig& gc,
                                                      const data::Vocab& vocab) {
  const auto pred = evalft::generate_texts(m, d, gc, vocab);
  std::vector<std::string> gold;
  Json examples = Json::array();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    gold.push_back(d.generation[i].target);
    const bool em = evalft::sciem(pred[i], gold.back());
    hit += em;
    examples.push_back({{"index", i}, {"prediction", pred[i]}, {"reference", gold.back()}, {"sciem", em}});
  }
  const auto r = evalft::corpus_rouge(pred, gold);
  evalft::MetricMap mm;
  mm["exact_match"] = static_cast<double>(hit) / static_cast<double>(pred.size());
  mm["rouge1"] = r.rouge1;
  mm["rouge2"] = r.rouge2;
  mm["rougeL"] = r.rougeL;
  mm["perplexity"] = evalft::perplexity(evalft::generation_nll(m, d));
  return {mm, examples};
}

/// Metrics of one split; generation also yields per-example records.
template <typename T>
std::pair<evalft::MetricMap, Json> split_report(const evalft::TaskModel<T>& m, const evalft::Dataset& d, const evalft::GenConfig& gc,
                                                 const data::Vocab& vocab) {
  if (m.kind == evalft::TaskKind::Generation) return generation_report(m, d, gc, vocab);
  return {evalft::evaluate(m, d, gc, &vocab), Json()};
}

struct FinetuneJob {
  fs::path checkpoint;
  fs::path vocab;
  evalft::TaskKind kind = evalft::TaskKind::Classification;
  fs::path train;
  fs::path validation;
  std::vector<std::pair<std::string, fs::path>> test;
  evalft::FinetuneConfig settings;
  std::size_t runs = 3;
};

inline FinetuneJob finetune_job(const ExperimentConfig& c) {
  const auto in = c.section("finetune");
  in.only({"checkpoint", "vocab", "task", "preset", "settings", "runs"});
  FinetuneJob j;
  j.checkpoint = existing_path(c, in, "checkpoint");
  if (!fs::exists(j.checkpoint / kManifestName)) throw ConfigError(in.field_path("checkpoint") + ": not a checkpoint directory");
  j.vocab = existing_path(c, in, "vocab");
  evalft::FinetuneConfig base;
  std::optional<evalft::TaskKind> preset_kind;
  if (in.has("preset")) {
    const auto name = in.req<std::string>("preset");
    base = train::config_field(in.field_path("preset"), [&] { return evalft::table8_preset(name); });
    preset_kind = base.task;
  }
  const auto task = in.child("task");
  task.only({"kind", "train", "validation", "test"});
  if (task.has("kind")) {
    const auto k = task.req<std::string>("kind");
    j.kind = train::config_field(task.field_path("kind"), [&] { return evalft::task_kind_from_string(k); });
    if (preset_kind && *preset_kind != j.kind) throw ConfigError(task.field_path("kind") + ": does not match the preset's task kind");
  } else if (preset_kind) {
    j.kind = *preset_kind;
  } else {
    throw ConfigError(task.field_path("kind") + ": required field is missing");
  }
  if (!preset_kind) {
    base.task = j.kind;
    if (j.kind == evalft::TaskKind::Labeling) base.metric = evalft::ValidationMetric::SlotF1;
    if (j.kind == evalft::TaskKind::Generation) {
      base.metric = evalft::ValidationMetric::ExactMatch;
      base.head_hidden.clear();
    }
  }
  j.train = existing_path(c, task, "train");
  j.validation = existing_path(c, task, "validation");
  if (task.has("test")) j.test = split_paths(c, task, "test");
  j.settings = in.has("settings") ? finetune_settings_from_json(in.child("settings"), base) : base;
  j.settings.task = j.kind;
  train::config_field("finetune.settings", [&] { j.settings.validate(); });
  j.runs = in.opt<std::size_t>("runs", j.runs);
  if (j.runs == 0) throw ConfigError(in.field_path("runs") + ": must be positive");
  return j;
}

inline int cmd_finetune(const ExperimentConfig& c, Io io) {
  const FinetuneJob job = finetune_job(c);
  const fs::path out = c.output_dir();
  const data::Vocab vocab = input_field("finetune.vocab", [&] { return load_vocab(job.vocab); });
  const auto train_set = load_split(job.train, job.kind, vocab, "finetune.task.train");
  const auto valid_set = load_split(job.validation, job.kind, vocab, "finetune.task.validation");
  std::vector<std::pair<std::string, evalft::Dataset>> tests;
  for (const auto& [lang, p] : job.test) tests.emplace_back(split_name("test", lang), load_split(p, job.kind, vocab, "finetune.task.test"));

  return with_dtype(checkpoint_dtype(job.checkpoint), [&](auto tag) {
    using T = decltype(tag);
    const auto ck = load_checkpoint<T>(job.checkpoint);
    if (vocab.size() > ck.state.cfg.vocab_size) throw ConfigError("finetune.vocab: vocabulary is larger than the checkpoint's embedding table");
    fs::create_directories(out);

    Json runs = Json::array();
    std::map<std::string, std::vector<evalft::MetricMap>> per_split;
    for (std::size_t r = 0; r < job.runs; ++r) {
      const std::uint64_t seed = mix_seed(c.seed, 500 + r);
      io.log << "[finetune] run " << r << " (seed " << seed << ")\n";
      auto res = evalft::finetune<T>(ck.state.cfg, ck.state.params, train_set, valid_set, job.settings, seed, &vocab);
      const fs::path run_dir = out / ("run-" + std::to_string(r));
      train::ModelState<T> st;
      st.cfg = res.best.cfg;
      st.params = res.best.params;
      st.step = ck.state.step;
      st.provenance = ck.state.provenance;
      st.provenance.push_back(std::string("finetune:") + evalft::to_string(job.kind) + "@epoch" + std::to_string(res.best_epoch));
      save_checkpoint(run_dir, st, task_info(res.best));

      std::vector<OrderedJson> hist;
      for (const auto& h : res.history) {
        OrderedJson e;
        e["epoch"] = h.epoch;
        e["updates"] = h.updates;
        e["train_loss"] = h.train_loss;
        e[evalft::to_string(job.settings.metric)] = h.metric;
        hist.push_back(std::move(e));
      }
      write_jsonl(run_dir / "history.jsonl", hist);

      Json splits = Json::object();
      auto add = [&](const std::string& name, const evalft::Dataset& d) {
        auto [mm, examples] = split_report(res.best, d, job.settings.gen, vocab);
        Json sj{{"metrics", metrics_json(mm)}};
        if (!examples.is_null()) sj["examples"] = std::move(examples);
        splits[name] = std::move(sj);
        per_split[name].push_back(mm);
      };
      add("validation", valid_set);
      for (const auto& [name, d] : tests) add(name, d);
      runs.push_back({{"run", r},
                      {"seed", seed},
                      {"best_epoch", res.best_epoch},
                      {"validation_metric", evalft::to_string(job.settings.metric)},
                      {"best_validation", res.best_metric},
                      {"checkpoint", "run-" + std::to_string(r)},
                      {"splits", std::move(splits)}});
    }
    Json agg = Json::object();
    for (const auto& [name, ms] : per_split) agg[name] = aggregate_json(ms);
    Json report;
    report["command"] = "finetune";
    report["task"] = evalft::to_string(job.kind);
    report["seed"] = c.seed;
    report["runs"] = std::move(runs);
    report["aggregate"] = agg;
    write_json(out / "report.json", report);
    print_aggregate(io, agg);
    return kExitOk;
  });
}

struct EvaluateJob {
  std::vector<std::pair<std::string, fs::path>> checkpoints;  // (as written in the config, resolved)
  fs::path vocab;
  std::vector<std::pair<std::string, fs::path>> data;
  evalft::TaskKind kind = evalft::TaskKind::Classification;
  evalft::GenConfig gen;
};

inline EvaluateJob evaluate_job(const ExperimentConfig& c) {
  const auto in = c.section("evaluate");
  in.only({"checkpoint", "checkpoints", "vocab", "data", "kind", "beam_size", "max_len"});
  EvaluateJob j;
  std::vector<std::string> names;
  if (in.has("checkpoints")) names = in.req<std::vector<std::string>>("checkpoints");
  else names.push_back(in.req<std::string>("checkpoint"));
  if (names.empty()) throw ConfigError(in.field_path("checkpoints") + ": no checkpoints given");
  std::optional<evalft::TaskKind> kind;
  for (const auto& n : names) {
    const fs::path p = c.resolve(n);
    const std::string field = in.field_path(in.has("checkpoints") ? "checkpoints" : "checkpoint");
    if (!fs::exists(p / kManifestName)) throw ConfigError(field + ": '" + p.string() + "' is not a checkpoint");
    const Json m = load_json_file((p / kManifestName).string());
    if (!m.contains("task")) throw ConfigError(field + ": '" + n + "' has no fine-tuned task head; run finetune first");
    const TaskInfo t = detail::task_from_json(JsonIn(m["task"], field + ".task"));
    if (t.kind != evalft::TaskKind::Generation && t.head.label_count != t.labels.size()) {
      throw ConfigError(field + ": '" + n + "' head has " + std::to_string(t.head.label_count) + " outputs for " +
                        std::to_string(t.labels.size()) + " labels");
    }
    if (kind && *kind != t.kind) throw ConfigError(field + ": checkpoints were fine-tuned for different task kinds");
    kind = t.kind;
    j.checkpoints.emplace_back(n, p);
  }
  j.kind = *kind;
  if (in.has("kind")) {
    const auto k = in.req<std::string>("kind");
    if (train::config_field(in.field_path("kind"), [&] { return evalft::task_kind_from_string(k); }) != j.kind) {
      throw ConfigError(in.field_path("kind") + ": checkpoint was fine-tuned for a " + evalft::to_string(j.kind) + " task");
    }
  }
  j.vocab = existing_path(c, in, "vocab");
  if (!in.has("data")) throw ConfigError(in.field_path("data") + ": required field is missing");
  j.data = split_paths(c, in, "data");
  gen_from_json(in, j.gen);
  return j;
}

inline int cmd_evaluate(const ExperimentConfig& c, Io io) {
  const EvaluateJob job = evaluate_job(c);
  const fs::path out = c.output_dir();
  const data::Vocab vocab = input_field("evaluate.vocab", [&] { return load_vocab(job.vocab); });
  std::vector<std::pair<std::string, evalft::Dataset>> splits;
  for (const auto& [lang, p] : job.data) splits.emplace_back(split_name("data", lang), load_split(p, job.kind, vocab, "evaluate.data"));

  Json per_ck = Json::array();
  std::map<std::string, std::vector<evalft::MetricMap>> per_split;
  for (const auto& [name, path] : job.checkpoints) {
    with_dtype(checkpoint_dtype(path), [&](auto tag) {
      using T = decltype(tag);
      const auto m = task_model(load_checkpoint<T>(path));
      Json sj = Json::object();
      for (const auto& [sname, d] : splits) {
        auto [mm, examples] = split_report(m, d, job.gen, vocab);
        Json e{{"metrics", metrics_json(mm)}};
        if (!examples.is_null()) e["examples"] = std::move(examples);
        sj[sname] = std::move(e);
        per_split[sname].push_back(mm);
      }
      per_ck.push_back({{"checkpoint", name}, {"splits", std::move(sj)}});
      return 0;
    });
  }
  fs::create_directories(out);
  Json agg = Json::object();
  for (const auto& [name, ms] : per_split) agg[name] = aggregate_json(ms);
  Json report;
  report["command"] = "evaluate";
  report["task"] = evalft::to_string(job.kind);
  report["checkpoints"] = std::move(per_ck);
  report["aggregate"] = agg;
  write_json(out / "report.json", report);
  print_aggregate(io, agg);
  return kExitOk;
}

// ================================================================ cost

inline train::TrainPlan plan_entry(const Json& v, const std::string& field) {
  if (v.is_string()) {
    const auto name = v.get<std::string>();
    return train::config_field(field, [&] { return train::preset_plan(name); });
  }
  return train::plan_from_json(JsonIn(v, field));
}

inline int cmd_cost(const ExperimentConfig& c, bool table1, Io io) {
  std::vector<train::TrainPlan> plans;
  std::optional<cost::SavingsReport> savings;
  std::optional<JsonIn> in;
  if (c.raw.contains("cost")) {
    in = c.section("cost");
    in->only({"table1", "plans", "baseline"});
    table1 = table1 || in->opt<bool>("table1", false);
  }
  if (table1) {
    plans = cost::table1_plans();
    savings = cost::table1_savings();
  } else {
    if (!in) throw ConfigError("cost: required section is missing (or pass --table1)");
    if (!in->has("plans")) throw ConfigError(in->field_path("plans") + ": required field is missing");
    const auto arr = in->array("plans");
    for (std::size_t i = 0; i < arr.size(); ++i) plans.push_back(plan_entry(arr[i], in->field_path("plans") + "[" + std::to_string(i) + "]"));
    if (in->has("baseline")) {
      const auto b = in->child("baseline");
      b.only({"encoder", "seq2seq"});
      if (!b.has("encoder")) throw ConfigError(b.field_path("encoder") + ": required field is missing");
      if (!b.has("seq2seq")) throw ConfigError(b.field_path("seq2seq") + ": required field is missing");
      const auto enc = plan_entry(b.raw()["encoder"], b.field_path("encoder"));
      const auto s2s = plan_entry(b.raw()["seq2seq"], b.field_path("seq2seq"));
      savings = train::config_field("cost.baseline", [&] { return cost::compare_recipes(plans, enc, s2s); });
    }
  }
  std::vector<cost::TUCost> costs;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    costs.push_back(train::config_field("cost.plans[" + std::to_string(i) + "]", [&] { return cost::tu_cost(plans[i]); }));
  }
  std::string text = cost::render_cost_table(costs);
  if (savings) text += "\n" + cost::render_savings(*savings);
  io.out << text;
  if (c.output) {
    fs::create_directories(*c.output);
    write_text_file((*c.output / "cost.txt").string(), text);
    write_jsonl(*c.output / "cost.jsonl", cost::cost_records(costs, savings ? &*savings : nullptr));
  }
  return kExitOk;
}

// ================================================================ dispatch

inline const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v{"pretrain", "finetune", "evaluate", "cost", "pack"};
  return v;
}

/// Runs one verb and maps failures to exit codes: 2 for configuration and input
/// errors, 3 for runtime aborts.
inline int run_command(const std::string& verb, const RunOptions& opts, Io io) {
  try {
    if (std::find(verbs().begin(), verbs().end(), verb) == verbs().end()) {
      throw ConfigError("unknown command '" + verb + "' (expected pretrain|finetune|evaluate|cost|pack)");
    }
    ExperimentConfig c;
    if (!opts.config_path.empty()) c = load_experiment(opts);
    else if (verb == "cost" && opts.table1) c = flag_only_experiment(opts);
    else throw ConfigError("--config is required for " + verb);
    if (verb == "pretrain") return cmd_pretrain(c, io);
    if (verb == "finetune") return cmd_finetune(c, io);
    if (verb == "evaluate") return cmd_evaluate(c, io);
    if (verb == "cost") return cmd_cost(c, opts.table1, io);
    return cmd_pack(c, io);
  } catch (const ConfigError& e) {
    io.log << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const train::TrainAbort& e) {
    io.log << "aborted: " << e.what() << "\n";
    return kExitAbort;
  } catch (const std::exception& e) {
    io.log << "error: " << e.what() << "\n";
    return kExitAbort;
  }
}

}  // namespace twostage::cli
