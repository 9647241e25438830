// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "twostage/data/vocab.hpp"

namespace twostage::data {

struct Document {
  std::vector<TokenId> ids;
  std::string lang;
};

/// One packed training sequence. `doc_boundaries` holds the positions of DOC separators;
/// `continues_document` is set when the first token continues a document split from
/// the previous sequence of the same language.
struct PackedSequence {
  std::vector<TokenId> ids;
  std::vector<std::size_t> doc_boundaries;
  std::string lang;
  bool continues_document = false;

  friend bool operator==(const PackedSequence&, const PackedSequence&) = default;
};

/// Greedy packing in corpus order. Documents of one language are packed only with each
/// other; consecutive documents inside a sequence are separated by DOC, and a document
/// that does not fit is split across sequences. Output is grouped by language in order
/// of first appearance.
inline std::vector<PackedSequence> pack_documents(const std::vector<Document>& docs, std::size_t target_len) {
  if (target_len < 2) throw Error("pack_documents: target_len must be > 1");
  std::vector<std::string> order;
  std::map<std::string, std::vector<PackedSequence>> per_lang;
  std::map<std::string, PackedSequence> open;

  auto flush = [&](const std::string& lang) {
    auto it = open.find(lang);
    if (it == open.end() || it->second.ids.empty()) return;
    per_lang[lang].push_back(std::move(it->second));
    open.erase(it);
  };

  for (const auto& doc : docs) {
    if (doc.ids.empty()) continue;
    for (TokenId id : doc.ids) {
      if (id == special::DOC || id == special::PAD) throw Error("pack_documents: documents may not contain DOC or PAD");
    }
    if (!per_lang.count(doc.lang)) {
      order.push_back(doc.lang);
      per_lang[doc.lang];
    }
    std::size_t pos = 0;
    while (pos < doc.ids.size()) {
      auto& seq = open[doc.lang];
      seq.lang = doc.lang;
      if (!seq.ids.empty()) {
        // A separator is only worth placing if at least one token follows it.
        if (seq.ids.size() + 2 > target_len) {
          flush(doc.lang);
          continue;
        }
        if (pos == 0) {
          seq.doc_boundaries.push_back(seq.ids.size());
          seq.ids.push_back(special::DOC);
        }
      } else if (pos > 0) {
        seq.continues_document = true;
      }
      const std::size_t take = std::min(target_len - seq.ids.size(), doc.ids.size() - pos);
      seq.ids.insert(seq.ids.end(), doc.ids.begin() + static_cast<std::ptrdiff_t>(pos),
                     doc.ids.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
      if (seq.ids.size() == target_len) flush(doc.lang);
    }
  }
  for (const auto& lang : order) flush(lang);

  std::vector<PackedSequence> out;
  for (const auto& lang : order) {
    for (auto& s : per_lang[lang]) out.push_back(std::move(s));
  }
  return out;
}

/// Inverse of pack_documents: the original documents per language, in order.
inline std::vector<Document> unpack_documents(const std::vector<PackedSequence>& seqs) {
  std::vector<Document> out;
  std::map<std::string, std::size_t> current;
  for (const auto& s : seqs) {
    bool first = true;
    for (TokenId id : s.ids) {
      if (id == special::DOC) {
        out.push_back({{}, s.lang});
        current[s.lang] = out.size() - 1;
        first = false;
        continue;
      }
      if (first) {
        first = false;
        if (!s.continues_document || !current.count(s.lang)) {
          out.push_back({{}, s.lang});
          current[s.lang] = out.size() - 1;
        }
      }
      out[current.at(s.lang)].ids.push_back(id);
    }
  }
  return out;
}

}  // namespace twostage::data
