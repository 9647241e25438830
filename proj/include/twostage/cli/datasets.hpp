// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "twostage/data/corpus.hpp"
#include "twostage/data/sampling.hpp"
#include "twostage/tensor/json_io.hpp"

namespace twostage::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- vocabulary

inline void save_vocab(const fs::path& path, const data::Vocab& v) {
  Json j;
  j["byte_fallback"] = v.byte_fallback();
  j["words"] = v.words();
  j["hash"] = hex64(v.hash());
  write_text_file(path.string(), j.dump(1) + "\n");
}

inline data::Vocab load_vocab(const fs::path& path) {
  const Json raw = load_json_file(path.string());
  const JsonIn in(raw, "");
  data::Vocab v(in.req<std::vector<std::string>>("words"), in.req<bool>("byte_fallback"));
  if (in.has("hash") && in.req<std::string>("hash") != hex64(v.hash())) throw Error(path.string() + ": vocabulary hash mismatch");
  return v;
}

// ---------------------------------------------------------------- packed datasets

inline constexpr const char* kPackedBin = "packed.bin";
inline constexpr const char* kPackedManifest = "manifest.json";
inline constexpr const char* kVocabFile = "vocab.json";

struct LanguageStats {
  std::string lang;
  std::size_t documents = 0;
  std::size_t input_tokens = 0;   // tokens of the tokenized documents
  std::size_t packed_tokens = 0;  // non-separator tokens in packed sequences
  std::size_t sequences = 0;
  double upsample_weight = 0.0;
};

struct PackStats {
  std::size_t target_len = 0;
  double alpha = 0.0;
  std::size_t sequences = 0;
  std::size_t input_tokens = 0;
  std::size_t packed_tokens = 0;
  std::size_t separators = 0;
  double padding_fraction = 0.0;  // unused slots / (sequences x target_len)
  std::vector<LanguageStats> languages;
};

inline PackStats pack_stats(const std::vector<data::Document>& docs, const std::vector<data::PackedSequence>& seqs, std::size_t target_len,
                            double alpha) {
  PackStats s;
  s.target_len = target_len;
  s.alpha = alpha;
  s.sequences = seqs.size();
  std::map<std::string, std::size_t> slot;
  auto lang = [&](const std::string& l) -> LanguageStats& {
    auto [it, fresh] = slot.emplace(l, s.languages.size());
    if (fresh) s.languages.push_back({l, 0, 0, 0, 0, 0.0});
    return s.languages[it->second];
  };
  for (const auto& d : docs) {
    if (d.ids.empty()) continue;
    auto& ls = lang(d.lang);
    ++ls.documents;
    ls.input_tokens += d.ids.size();
    s.input_tokens += d.ids.size();
  }
  std::size_t used = 0;
  for (const auto& q : seqs) {
    auto& ls = lang(q.lang);
    ++ls.sequences;
    used += q.ids.size();
    s.separators += q.doc_boundaries.size();
    ls.packed_tokens += q.ids.size() - q.doc_boundaries.size();
    s.packed_tokens += q.ids.size() - q.doc_boundaries.size();
  }
  const double slots = static_cast<double>(seqs.size() * target_len);
  s.padding_fraction = slots > 0.0 ? (slots - static_cast<double>(used)) / slots : 0.0;
  if (!seqs.empty()) {
    const data::SequencePool pool(seqs, alpha);
    for (std::size_t i = 0; i < pool.languages().size(); ++i) lang(pool.languages()[i]).upsample_weight = pool.weights()[i];
  }
  return s;
}

/// Writes vocab.json, packed.bin (little-endian int32 ids, sequences back to back) and
/// manifest.json with the sequence index and packing statistics.
inline void write_packed(const fs::path& dir, const data::Vocab& vocab, const std::vector<data::PackedSequence>& seqs, const PackStats& stats) {
  fs::create_directories(dir);
  save_vocab(dir / kVocabFile, vocab);
  std::ofstream bin(dir / kPackedBin, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write " + (dir / kPackedBin).string());
  Json index = Json::array();
  std::size_t offset = 0;
  for (const auto& q : seqs) {
    bin.write(reinterpret_cast<const char*>(q.ids.data()), static_cast<std::streamsize>(q.ids.size() * sizeof(data::TokenId)));
    index.push_back({{"offset", offset}, {"length", q.ids.size()}, {"lang", q.lang}, {"continues_document", q.continues_document},
                     {"doc_boundaries", q.doc_boundaries}});
    offset += q.ids.size();
  }
  if (!bin) throw Error("write failed for " + (dir / kPackedBin).string());

  Json langs = Json::array();
  for (const auto& l : stats.languages) {
    langs.push_back({{"lang", l.lang}, {"documents", l.documents}, {"input_tokens", l.input_tokens}, {"packed_tokens", l.packed_tokens},
                     {"sequences", l.sequences}, {"upsample_weight", l.upsample_weight}});
  }
  Json m;
  m["format"] = "twostage-packed";
  m["version"] = 1;
  m["vocab_hash"] = hex64(vocab.hash());
  m["vocab_size"] = vocab.size();
  m["target_len"] = stats.target_len;
  m["alpha"] = stats.alpha;
  m["sequences"] = stats.sequences;
  m["input_tokens"] = stats.input_tokens;
  m["packed_tokens"] = stats.packed_tokens;
  m["separators"] = stats.separators;
  m["padding_fraction"] = stats.padding_fraction;
  m["languages"] = std::move(langs);
  m["index"] = std::move(index);
  write_text_file((dir / kPackedManifest).string(), m.dump(1) + "\n");
}

struct PackedDataset {
  data::Vocab vocab;
  std::vector<data::PackedSequence> seqs;
  std::size_t target_len = 0;
  double alpha = 0.0;
};

inline PackedDataset read_packed(const fs::path& dir) {
  PackedDataset d;
  d.vocab = load_vocab(dir / kVocabFile);
  const Json raw = load_json_file((dir / kPackedManifest).string());
  const JsonIn in(raw, "");
  if (in.opt<std::string>("format", "") != "twostage-packed") throw Error((dir / kPackedManifest).string() + ": not a packed dataset");
  if (in.req<std::string>("vocab_hash") != hex64(d.vocab.hash())) throw Error(dir.string() + ": vocabulary does not match the packed data");
  d.target_len = in.req<std::size_t>("target_len");
  d.alpha = in.req<double>("alpha");

  std::ifstream bin(dir / kPackedBin, std::ios::binary);
  if (!bin) throw Error("cannot read " + (dir / kPackedBin).string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  for (const auto& ej : in.array("index")) {
    const JsonIn e(ej, "index");
    data::PackedSequence q;
    const auto offset = e.req<std::size_t>("offset"), length = e.req<std::size_t>("length");
    if ((offset + length) * sizeof(data::TokenId) > bytes.size()) throw Error(dir.string() + ": index points past the end of packed.bin");
    q.ids.resize(length);
    std::memcpy(q.ids.data(), bytes.data() + offset * sizeof(data::TokenId), length * sizeof(data::TokenId));
    for (auto id : q.ids)
      if (id < 0 || static_cast<std::size_t>(id) >= d.vocab.size()) throw Error(dir.string() + ": token id outside the vocabulary");
    q.lang = e.req<std::string>("lang");
    q.continues_document = e.req<bool>("continues_document");
    q.doc_boundaries = e.req<std::vector<std::size_t>>("doc_boundaries");
    d.seqs.push_back(std::move(q));
  }
  return d;
}

}  // namespace twostage::cli
