// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "twostage/data/packing.hpp"

namespace twostage::data {

struct CorpusRecord {
  std::string text;
  std::string lang;
};

/// Reads a line-delimited corpus of {"text": ..., "lang": ...} records. Blank lines are skipped.
inline std::vector<CorpusRecord> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus '" + path + "'");
  std::vector<CorpusRecord> out;
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
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) throw Error(where + "record needs a string \"text\"");
    if (!j.contains("lang") || !j["lang"].is_string()) throw Error(where + "record needs a string \"lang\"");
    out.push_back({j["text"].get<std::string>(), j["lang"].get<std::string>()});
  }
  return out;
}

inline void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus '" + path + "'");
  for (const auto& r : records) out << nlohmann::json{{"lang", r.lang}, {"text", r.text}}.dump() << '\n';
}

inline std::vector<std::string> texts_of(const std::vector<CorpusRecord>& records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.text);
  return out;
}

inline std::vector<Document> tokenize_corpus(const std::vector<CorpusRecord>& records, const Vocab& vocab) {
  std::vector<Document> docs;
  docs.reserve(records.size());
  for (const auto& r : records) docs.push_back({vocab.encode(r.text).ids, r.lang});
  return docs;
}

}  // namespace twostage::data
