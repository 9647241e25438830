// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "twostage/data/vocab.hpp"
#include "twostage/tensor/rng.hpp"

namespace twostage::evalft {

enum class TaskKind { Classification, Labeling, Generation };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Classification: return "classification";
    case TaskKind::Labeling: return "labeling";
    case TaskKind::Generation: return "generation";
  }
  return "?";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::Classification;
  if (s == "labeling") return TaskKind::Labeling;
  if (s == "generation") return TaskKind::Generation;
  throw Error("unknown task kind '" + s + "' (expected classification|labeling|generation)");
}

/// One task record before tokenization. Classification keeps its single label in
/// labels[0]; generation keeps its reference text in target.
struct TaskRecord {
  std::vector<std::string> words;
  std::vector<std::string> labels;
  std::string target;

  friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

/// A tokenized encoder-task example. word_starts[i] is the index in ids of the first
/// subword of word i.
struct LabeledExample {
  std::vector<std::string> words;
  std::vector<data::TokenId> ids;
  std::vector<std::size_t> word_starts;
  std::vector<std::string> labels;

  void validate(TaskKind kind) const {
    if (word_starts.size() != words.size()) throw DimensionError("word-boundary map does not cover every word");
    for (std::size_t i = 0; i < word_starts.size(); ++i) {
      if (word_starts[i] >= ids.size() || (i > 0 && word_starts[i] <= word_starts[i - 1])) {
        throw Error("word-boundary indices must be strictly increasing and inside the sequence");
      }
    }
    if (kind == TaskKind::Classification && labels.size() != 1) throw Error("classification example needs exactly one label");
    if (kind == TaskKind::Labeling && labels.size() != words.size()) {
      throw DimensionError("labeling example has " + std::to_string(words.size()) + " words and " + std::to_string(labels.size()) + " labels");
    }
  }
};

struct GenExample {
  std::string source;
  std::string target;
  std::vector<data::TokenId> source_ids;
  std::vector<data::TokenId> target_ids;
};

struct Dataset {
  TaskKind kind = TaskKind::Classification;
  std::vector<LabeledExample> labeled;
  std::vector<GenExample> generation;

  std::size_t size() const { return kind == TaskKind::Generation ? generation.size() : labeled.size(); }
  bool empty() const { return size() == 0; }
};

/// Hook for mTOP-style word sentinels around source words; currently the identity.
inline std::vector<std::string> format_generation_source(const std::vector<std::string>& words) { return words; }

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

inline Dataset encode_task(const std::vector<TaskRecord>& records, TaskKind kind, const data::Vocab& vocab) {
  Dataset d;
  d.kind = kind;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (kind == TaskKind::Generation) {
      const auto words = format_generation_source(r.words);
      d.generation.push_back({join_words(words), r.target, vocab.encode_words(words).ids, vocab.encode(r.target).ids});
      continue;
    }
    auto enc = vocab.encode_words(r.words);
    LabeledExample ex{r.words, std::move(enc.ids), std::move(enc.word_starts), r.labels};
    try {
      ex.validate(kind);
    } catch (const Error& e) {
      throw Error("record " + std::to_string(i) + ": " + e.what());
    }
    d.labeled.push_back(std::move(ex));
  }
  return d;
}

/// Every text a vocabulary for the task should cover.
inline std::vector<std::string> task_texts(const std::vector<TaskRecord>& records) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    out.push_back(join_words(r.words));
    if (!r.target.empty()) out.push_back(r.target);
  }
  return out;
}

// ---------------------------------------------------------------- files

/// Line-delimited task records: classification {"text","label"}, labeling
/// {"tokens","labels"}, generation {"source","target"}. Blank lines are skipped.
inline std::vector<TaskRecord> read_task_file(const std::string& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open task file '" + path + "'");
  std::vector<TaskRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + "malformed record (" + e.what() + ")");
    }
    auto str = [&](const char* key) {
      if (!j.is_object() || !j.contains(key) || !j[key].is_string()) throw Error(where + "record needs a string \"" + key + "\"");
      return j[key].get<std::string>();
    };
    auto strings = [&](const char* key) {
      if (!j.is_object() || !j.contains(key) || !j[key].is_array()) throw Error(where + "record needs an array \"" + key + "\"");
      std::vector<std::string> v;
      for (const auto& e : j[key]) {
        if (!e.is_string()) throw Error(where + "\"" + key + "\" must hold strings");
        v.push_back(e.get<std::string>());
      }
      return v;
    };
    TaskRecord r;
    switch (kind) {
      case TaskKind::Classification:
        r.words = data::split_whitespace(str("text"));
        r.labels = {str("label")};
        break;
      case TaskKind::Labeling:
        r.words = strings("tokens");
        r.labels = strings("labels");
        if (r.words.size() != r.labels.size()) throw Error(where + "\"tokens\" and \"labels\" differ in length");
        break;
      case TaskKind::Generation:
        r.words = data::split_whitespace(str("source"));
        r.target = str("target");
        break;
    }
    if (r.words.empty()) throw Error(where + "record has no tokens");
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_task_file(const std::string& path, const std::vector<TaskRecord>& records, TaskKind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write task file '" + path + "'");
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    switch (kind) {
      case TaskKind::Classification:
        j["text"] = join_words(r.words);
        j["label"] = r.labels.at(0);
        break;
      case TaskKind::Labeling:
        j["tokens"] = r.words;
        j["labels"] = r.labels;
        break;
      case TaskKind::Generation:
        j["source"] = join_words(r.words);
        j["target"] = r.target;
        break;
    }
    out << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------- synthetic tasks

/// Filler words with one class cue word per example; the cue determines the label.
inline std::vector<TaskRecord> synthetic_classification(std::size_t n, std::uint64_t seed, std::size_t classes = 2,
                                                        std::size_t fillers = 20) {
  if (classes < 2 || fillers == 0) throw Error("synthetic_classification needs >= 2 classes and some filler words");
  Rng rng(seed);
  std::vector<TaskRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng);
    const std::size_t len = std::uniform_int_distribution<std::size_t>(3, 8)(rng);
    TaskRecord r;
    for (std::size_t k = 0; k < len; ++k) r.words.push_back("f" + std::to_string(std::uniform_int_distribution<std::size_t>(0, fillers - 1)(rng)));
    const std::size_t at = std::uniform_int_distribution<std::size_t>(0, len)(rng);
    r.words.insert(r.words.begin() + static_cast<std::ptrdiff_t>(at), "cue" + std::to_string(c));
    r.labels = {"class" + std::to_string(c)};
    out.push_back(std::move(r));
  }
  return out;
}

/// BIO tagging: person names span one or two words, locations one word, fillers are O.
inline std::vector<TaskRecord> synthetic_labeling(std::size_t n, std::uint64_t seed, std::size_t names = 8) {
  Rng rng(seed);
  auto pick = [&](std::size_t hi) { return std::uniform_int_distribution<std::size_t>(0, hi - 1)(rng); };
  std::vector<TaskRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    TaskRecord r;
    const std::size_t items = 2 + pick(5);
    for (std::size_t k = 0; k < items; ++k) {
      switch (pick(4)) {
        case 0:
          r.words.push_back("per" + std::to_string(pick(names)));
          r.labels.push_back("B-PER");
          if (pick(2)) {
            r.words.push_back("sur" + std::to_string(pick(names)));
            r.labels.push_back("I-PER");
          }
          break;
        case 1:
          r.words.push_back("loc" + std::to_string(pick(names)));
          r.labels.push_back("B-LOC");
          break;
        default:
          r.words.push_back("w" + std::to_string(pick(2 * names)));
          r.labels.push_back("O");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Source words a<i>; the target is the source reversed with every a<i> rewritten to b<i>.
inline std::vector<TaskRecord> synthetic_generation(std::size_t n, std::uint64_t seed, std::size_t words = 12,
                                                    std::size_t min_len = 2, std::size_t max_len = 6) {
  Rng rng(seed);
  std::vector<TaskRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    TaskRecord r;
    std::vector<std::string> target;
    const std::size_t len = std::uniform_int_distribution<std::size_t>(min_len, max_len)(rng);
    for (std::size_t k = 0; k < len; ++k) {
      const std::string idx = std::to_string(std::uniform_int_distribution<std::size_t>(0, words - 1)(rng));
      r.words.push_back("a" + idx);
      target.insert(target.begin(), "b" + idx);
    }
    r.target = join_words(target);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace twostage::evalft
