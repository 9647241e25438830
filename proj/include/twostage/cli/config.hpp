// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "twostage/data/synthetic.hpp"
#include "twostage/evalft/finetune.hpp"
#include "twostage/train/plan_io.hpp"

namespace twostage::cli {

namespace fs = std::filesystem;

inline constexpr int kConfigVersion = 1;

/// Flags given on the command line; they override the config file.
struct RunOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool table1 = false;
};

/// Parsed top level of an experiment file. Sections stay raw until a command reads its own.
struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  fs::path base_dir;               // relative paths resolve against this
  std::optional<fs::path> output;  // --out wins over "output"
  Json raw = Json::object();

  fs::path resolve(const std::string& p) const { return (fs::path(p).is_absolute() ? fs::path(p) : base_dir / p).lexically_normal(); }

  JsonIn section(const std::string& name) const {
    if (!raw.contains(name) || raw[name].is_null()) throw ConfigError(name + ": required section is missing");
    return JsonIn(raw[name], name);
  }

  fs::path output_dir() const {
    if (!output) throw ConfigError("output: required field is missing (or pass --out)");
    return *output;
  }
};

/// Reads and checks the top level. The version is checked before anything else.
inline ExperimentConfig load_experiment(const RunOptions& opts) {
  ExperimentConfig c;
  c.raw = load_json_file(opts.config_path);
  const JsonIn in(c.raw, "");
  if (!in.has("version")) throw ConfigError("version: required field is missing");
  c.version = in.req<int>("version");
  if (c.version != kConfigVersion) {
    throw ConfigError("version: unsupported config version " + std::to_string(c.version) + " (this tool reads " +
                      std::to_string(kConfigVersion) + ")");
  }
  in.only({"version", "seed", "output", "description", "pretrain", "finetune", "evaluate", "cost", "pack"});
  c.seed = opts.seed ? *opts.seed : in.req<std::uint64_t>("seed");
  c.base_dir = fs::absolute(opts.config_path).parent_path();
  if (opts.out) c.output = fs::path(*opts.out);
  else if (in.has("output")) c.output = c.resolve(in.req<std::string>("output"));
  return c;
}

/// Config with no file behind it (e.g. `cost --table1`).
inline ExperimentConfig flag_only_experiment(const RunOptions& opts) {
  ExperimentConfig c;
  c.seed = opts.seed.value_or(0);
  c.base_dir = fs::current_path();
  if (opts.out) c.output = fs::path(*opts.out);
  return c;
}

/// Path field that must name an existing file or directory.
inline fs::path existing_path(const ExperimentConfig& c, const JsonIn& in, const std::string& key) {
  const fs::path p = c.resolve(in.req<std::string>(key));
  if (!fs::exists(p)) throw ConfigError(in.field_path(key) + ": '" + p.string() + "' does not exist");
  return p;
}

/// Runs `fn`, turning input-data errors into config errors that name the field.
template <typename Fn>
auto input_field(const std::string& field, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

// ---------------------------------------------------------------- pieces

inline data::SyntheticSpec synthetic_from_json(const JsonIn& in) {
  in.only({"languages", "docs_per_language", "words_per_language", "min_doc_words", "max_doc_words", "follow_p", "process_seed", "seed"});
  data::SyntheticSpec s;
  if (in.has("languages")) s.languages = in.req<std::vector<std::string>>("languages");
  s.docs_per_language = in.opt<std::size_t>("docs_per_language", s.docs_per_language);
  s.words_per_language = in.opt<std::size_t>("words_per_language", s.words_per_language);
  s.min_doc_words = in.opt<std::size_t>("min_doc_words", s.min_doc_words);
  s.max_doc_words = in.opt<std::size_t>("max_doc_words", s.max_doc_words);
  s.follow_p = in.opt<double>("follow_p", s.follow_p);
  s.process_seed = in.opt<std::uint64_t>("process_seed", s.process_seed);
  s.seed = in.opt<std::uint64_t>("seed", s.seed);
  train::config_field(in.path(), [&] { s.validate(); });
  return s;
}

/// Where pre-training text comes from: a corpus file, a packed dataset or a synthetic spec.
struct DataSource {
  std::optional<fs::path> corpus;
  std::optional<fs::path> packed;
  std::optional<data::SyntheticSpec> synthetic;
  std::optional<fs::path> vocab;  // reuse an existing vocabulary
  double alpha = 0.3;
  bool byte_fallback = false;
};

inline DataSource data_source_from_json(const ExperimentConfig& c, const JsonIn& in) {
  in.only({"corpus", "packed", "synthetic", "vocab", "alpha", "byte_fallback"});
  DataSource d;
  const int given = int(in.has("corpus")) + int(in.has("packed")) + int(in.has("synthetic"));
  if (given == 0) throw ConfigError(in.field_path("corpus") + ": required field is missing (or give packed / synthetic)");
  if (given > 1) throw ConfigError(in.path() + ": give exactly one of corpus, packed, synthetic");
  if (in.has("corpus")) d.corpus = existing_path(c, in, "corpus");
  if (in.has("packed")) d.packed = existing_path(c, in, "packed");
  if (in.has("synthetic")) d.synthetic = synthetic_from_json(in.child("synthetic"));
  if (in.has("vocab")) d.vocab = existing_path(c, in, "vocab");
  d.alpha = in.opt<double>("alpha", d.alpha);
  if (!(d.alpha > 0.0 && d.alpha <= 1.0)) throw ConfigError(in.field_path("alpha") + ": must lie in (0, 1]");
  d.byte_fallback = in.opt<bool>("byte_fallback", d.byte_fallback);
  return d;
}

inline std::string dtype_from_json(const JsonIn& in) {
  const auto d = in.opt<std::string>("dtype", "f32");
  if (d != "f32" && d != "f64") throw ConfigError(in.field_path("dtype") + ": expected f32 or f64");
  return d;
}

/// Task split files: one path, or an object mapping a language to a path.
inline std::vector<std::pair<std::string, fs::path>> split_paths(const ExperimentConfig& c, const JsonIn& in, const std::string& key) {
  std::vector<std::pair<std::string, fs::path>> out;
  const Json& v = in.raw()[key];
  if (v.is_string()) {
    out.emplace_back("", existing_path(c, in, key));
  } else if (v.is_object()) {
    const JsonIn sub(v, in.field_path(key));
    for (auto it = v.begin(); it != v.end(); ++it) out.emplace_back(it.key(), existing_path(c, sub, it.key()));
    if (out.empty()) throw ConfigError(in.field_path(key) + ": no splits given");
  } else {
    throw ConfigError(in.field_path(key) + ": expected a path or an object of paths");
  }
  return out;
}

inline void gen_from_json(const JsonIn& in, evalft::GenConfig& g) {
  g.beam_size = in.opt<std::size_t>("beam_size", g.beam_size);
  g.max_len = in.opt<std::size_t>("max_len", g.max_len);
  train::config_field(in.path(), [&] { g.validate(); });
}

/// Starts from a named fine-tuning preset (or the defaults) and applies overrides.
inline evalft::FinetuneConfig finetune_settings_from_json(const JsonIn& in, evalft::FinetuneConfig f) {
  using train::config_field;
  in.only({"peak_lr", "warmup", "warmup_steps", "warmup_floor", "decay_end", "batch_size", "epochs", "max_updates", "metric",
           "head_hidden", "freeze", "dropout", "beam_size", "max_len"});
  f.peak_lr = in.opt<double>("peak_lr", f.peak_lr);
  if (in.has("warmup")) {
    const auto w = in.req<std::string>("warmup");
    f.warmup_kind = config_field(in.field_path("warmup"), [&] { return train::warmup_kind_from_string(w); });
  }
  f.warmup_steps = in.opt<std::uint64_t>("warmup_steps", f.warmup_steps);
  f.warmup_floor = in.opt<double>("warmup_floor", f.warmup_floor);
  f.decay_end = in.opt<double>("decay_end", f.decay_end);
  f.batch_size = in.opt<std::size_t>("batch_size", f.batch_size);
  f.epochs = in.opt<std::size_t>("epochs", f.epochs);
  f.max_updates = in.opt<std::uint64_t>("max_updates", f.max_updates);
  if (in.has("metric")) {
    const auto m = in.req<std::string>("metric");
    f.metric = config_field(in.field_path("metric"), [&] { return evalft::validation_metric_from_string(m); });
  }
  if (in.has("head_hidden")) f.head_hidden = config_field(in.field_path("head_hidden"), [&] { return in.req<std::vector<std::size_t>>("head_hidden"); });
  if (in.has("freeze")) {
    f.freeze.clear();
    std::size_t k = 0;
    for (const auto& t : in.array("freeze")) {
      const std::string path = in.field_path("freeze") + "[" + std::to_string(k++) + "]";
      const auto tag = JsonIn::convert<std::string>(t, path);
      f.freeze.insert(config_field(path, [&] { return train::freeze_tag_from_string(tag); }));
    }
  }
  f.dropout = in.opt<double>("dropout", f.dropout);
  gen_from_json(in, f.gen);
  return f;
}

}  // namespace twostage::cli
