// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "twostage/data/vocab.hpp"
#include "twostage/tensor/tensor.hpp"

namespace twostage::evalft {

// ---------------------------------------------------------------- BIO chunks

struct Chunk {
  std::string type;
  std::size_t start = 0;  // inclusive word index
  std::size_t end = 0;    // inclusive word index

  friend auto operator<=>(const Chunk&, const Chunk&) = default;
};

/// Maximal BIO chunks of one label sequence. An I-X that does not continue an
/// open X chunk starts a new one.
inline std::vector<Chunk> bio_chunks(const std::vector<std::string>& labels) {
  std::vector<Chunk> out;
  bool open = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string& l = labels[i];
    if (l == "O") {
      open = false;
      continue;
    }
    if (l.size() < 3 || l[1] != '-' || (l[0] != 'B' && l[0] != 'I')) {
      throw Error("malformed BIO label '" + l + "' at position " + std::to_string(i));
    }
    const std::string type = l.substr(2);
    if (l[0] == 'I' && open && out.back().type == type) {
      out.back().end = i;
    } else {
      out.push_back({type, i, i});
      open = true;
    }
  }
  return out;
}

struct EntityScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

/// Micro-averaged exact-match chunk scores. Precision is 0 when nothing is
/// predicted, recall is 0 when nothing is gold.
inline EntityScores entity_f1(const std::vector<std::vector<std::string>>& pred,
                              const std::vector<std::vector<std::string>>& gold) {
  if (pred.size() != gold.size()) {
    throw DimensionError("entity_f1: " + std::to_string(pred.size()) + " predicted sequences vs " + std::to_string(gold.size()) + " gold");
  }
  EntityScores s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != gold[i].size()) {
      throw DimensionError("entity_f1: sequence " + std::to_string(i) + " has " + std::to_string(pred[i].size()) +
                           " predicted labels and " + std::to_string(gold[i].size()) + " gold labels");
    }
    auto p = bio_chunks(pred[i]);
    auto g = bio_chunks(gold[i]);
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    std::vector<Chunk> both;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(both));
    s.correct += both.size();
    s.predicted += p.size();
    s.gold += g.size();
  }
  if (s.predicted) s.precision = static_cast<double>(s.correct) / static_cast<double>(s.predicted);
  if (s.gold) s.recall = static_cast<double>(s.correct) / static_cast<double>(s.gold);
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

// ---------------------------------------------------------------- exact match

inline std::string sciem_normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s)
    if (!std::isspace(c)) out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}

/// Space- and case-insensitive exact match.
inline bool sciem(std::string_view pred, std::string_view gold) { return sciem_normalize(pred) == sciem_normalize(gold); }

// ---------------------------------------------------------------- ROUGE

struct RougeScores {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
};

inline std::vector<std::string> rouge_tokens(std::string_view text) {
  std::string lower(text);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return data::split_whitespace(lower);
}

namespace detail {

inline double f_measure(std::size_t overlap, std::size_t pred_n, std::size_t gold_n) {
  if (overlap == 0 || pred_n == 0 || gold_n == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(pred_n);
  const double r = static_cast<double>(overlap) / static_cast<double>(gold_n);
  return 2.0 * p * r / (p + r);
}

inline double ngram_f(const std::vector<std::string>& pred, const std::vector<std::string>& gold, std::size_t n) {
  auto grams = [n](const std::vector<std::string>& toks) {
    std::map<std::vector<std::string>, std::size_t> m;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++m[{toks.begin() + static_cast<std::ptrdiff_t>(i), toks.begin() + static_cast<std::ptrdiff_t>(i + n)}];
    return m;
  };
  const auto p = grams(pred), g = grams(gold);
  std::size_t overlap = 0, pn = 0, gn = 0;
  for (const auto& [k, c] : p) {
    pn += c;
    if (auto it = g.find(k); it != g.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [_, c] : g) gn += c;
  return f_measure(overlap, pn, gn);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// ROUGE-1, ROUGE-2 and ROUGE-L F-measures on lowercased whitespace tokens, no stemming.
/// Empty texts score 0.
inline RougeScores rouge(std::string_view pred, std::string_view gold) {
  const auto p = rouge_tokens(pred), g = rouge_tokens(gold);
  return {detail::ngram_f(p, g, 1), detail::ngram_f(p, g, 2), detail::f_measure(detail::lcs_length(p, g), p.size(), g.size())};
}

/// Per-example ROUGE averaged over a corpus.
inline RougeScores corpus_rouge(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
  if (preds.size() != golds.size()) throw DimensionError("corpus_rouge: prediction and reference counts differ");
  RougeScores sum;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto r = rouge(preds[i], golds[i]);
    sum.rouge1 += r.rouge1;
    sum.rouge2 += r.rouge2;
    sum.rougeL += r.rougeL;
  }
  if (!preds.empty()) {
    const double n = static_cast<double>(preds.size());
    sum.rouge1 /= n;
    sum.rouge2 /= n;
    sum.rougeL /= n;
  }
  return sum;
}

// ---------------------------------------------------------------- aggregation

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population (ddof 0)
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  if (xs.empty()) throw Error("mean_std of an empty list");
  MeanStd m;
  m.n = xs.size();
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(var / static_cast<double>(xs.size()));
  return m;
}

using MetricMap = std::map<std::string, double>;

/// Mean and std of every metric across runs. All runs must report the same metrics.
inline std::map<std::string, MeanStd> aggregate(const std::vector<MetricMap>& runs) {
  if (runs.empty()) throw Error("aggregate: no runs");
  std::map<std::string, MeanStd> out;
  for (const auto& [name, _] : runs.front()) {
    std::vector<double> xs;
    for (const auto& r : runs) {
      auto it = r.find(name);
      if (it == r.end()) throw Error("aggregate: metric '" + name + "' missing from a run");
      xs.push_back(it->second);
    }
    out[name] = mean_std(xs);
  }
  for (const auto& r : runs)
    if (r.size() != runs.front().size()) throw Error("aggregate: runs report different metrics");
  return out;
}

}  // namespace twostage::evalft
