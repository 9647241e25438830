// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "twostage/tensor/json_io.hpp"
#include "twostage/train/presets.hpp"

namespace twostage::cost {

/// Exact non-negative-denominator fraction. Intermediates use 128 bits and results are
/// reduced, so the TU arithmetic of realistic plans never rounds.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t num, std::int64_t den = 1) { *this = make(num, den); }

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }
  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }
  std::string str() const { return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_); }

  friend Rational operator+(const Rational& a, const Rational& b) {
    return reduce(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_, static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational& a, const Rational& b) { return a + Rational(-b.num_, b.den_); }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return reduce(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw Error("rational division by zero");
    return reduce(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
  }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  friend bool operator==(const Rational&, const Rational&) = default;
  friend bool operator<(const Rational& a, const Rational& b) {
    return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
  }
  friend bool operator<=(const Rational& a, const Rational& b) { return !(b < a); }

  /// floor(x) for the exact value.
  std::int64_t floor() const {
    const std::int64_t q = num_ / den_;
    return (num_ % den_ != 0 && num_ < 0) ? q - 1 : q;
  }

 private:
  static Rational make(__int128 n, __int128 d) { return reduce(n, d); }

  static Rational reduce(__int128 n, __int128 d) {
    if (d == 0) throw Error("rational with zero denominator");
    if (d < 0) n = -n, d = -d;
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) n /= a, d /= a;
    constexpr __int128 lim = INT64_MAX;
    if (n > lim || -n > lim || d > lim) throw Error("rational overflow in cost arithmetic");
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

/// One decimal, halves rounded up: 5.4166 -> "5.4", 0.25 -> "0.3".
inline std::string render_tu(const Rational& x) {
  const std::int64_t tenths = (x * Rational(10) + Rational(1, 2)).floor();
  const std::int64_t mag = tenths < 0 ? -tenths : tenths;
  return (tenths < 0 ? "-" : "") + std::to_string(mag / 10) + "." + std::to_string(mag % 10);
}

/// Integer percent, halves rounded up.
inline std::string render_percent(const Rational& fraction) {
  return std::to_string((fraction * Rational(100) + Rational(1, 2)).floor()) + "%";
}

struct TUEntry {
  std::string name;
  bool inherited = false;
  Rational encoder;
  Rational decoder;
  Rational total;
};

struct TUCost {
  std::string plan;
  std::vector<TUEntry> entries;

  Rational total() const {
    Rational t;
    for (const auto& e : entries) t += e.total;
    return t;
  }
};

namespace detail {

inline Rational integral(double v, const std::string& what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 9.0e15) throw Error(what + " must be a non-negative integer for cost accounting");
  return Rational(static_cast<std::int64_t>(v));
}

// (layers, frozen?) of one component -> layer-equivalents.
inline Rational layer_units(std::size_t layers, bool frozen) {
  return frozen ? Rational(static_cast<std::int64_t>(layers), 2) : Rational(static_cast<std::int64_t>(layers));
}

}  // namespace detail

/// Cost of one stage: layer-equivalents / 12 x steps / 100k x hidden / 1024 x batch tokens / 1M.
/// A frozen component counts half; embeddings and heads cost nothing.
inline TUEntry stage_cost(const model::ModelConfig& m, const train::TrainStage& s) {
  const Rational scale = Rational(static_cast<std::int64_t>(s.steps), 100000) * Rational(static_cast<std::int64_t>(m.d_model), 1024) *
                         detail::integral(s.batch_tokens, "batch_tokens") / Rational(1000000) / Rational(12);
  TUEntry e;
  e.name = s.name;
  e.encoder = detail::layer_units(m.encoder_layers, s.freeze.count(train::FreezeTag::Encoder) != 0) * scale;
  e.decoder = detail::layer_units(m.decoder_layers, s.freeze.count(train::FreezeTag::Decoder) != 0) * scale;
  e.total = e.encoder + e.decoder;
  return e;
}

/// Per-stage costs of a plan. A plan built from another model's weights carries that
/// model's whole cost as one inherited entry first.
inline TUCost tu_cost(const train::TrainPlan& plan) {
  if (plan.model.encoder_layers + plan.model.decoder_layers == 0) throw Error("plan '" + plan.name + "' has zero layers");
  TUCost c;
  c.plan = plan.name;
  if (plan.donor) {
    const TUCost donor = tu_cost(*plan.donor);
    TUEntry e{plan.donor->name, true, {}, {}, {}};
    for (const auto& d : donor.entries) {
      e.encoder += d.encoder;
      e.decoder += d.decoder;
    }
    e.total = donor.total();
    c.entries.push_back(e);
  }
  for (const auto& s : plan.stages) c.entries.push_back(stage_cost(plan.model, s));
  return c;
}

struct SavingsRow {
  std::string name;
  Rational total;
  Rational savings;  // 1 - total / baseline
};

struct SavingsReport {
  std::string baseline_name;
  Rational baseline;
  std::vector<SavingsRow> rows;
};

/// Savings of each candidate against training an encoder and a seq2seq model separately.
inline SavingsReport compare_recipes(const std::vector<train::TrainPlan>& candidates, const train::TrainPlan& baseline_encoder,
                                     const train::TrainPlan& baseline_seq2seq) {
  SavingsReport r;
  r.baseline_name = baseline_encoder.name + " + " + baseline_seq2seq.name;
  r.baseline = tu_cost(baseline_encoder).total() + tu_cost(baseline_seq2seq).total();
  if (r.baseline == Rational(0)) throw Error("baseline has zero cost");
  for (const auto& p : candidates) {
    const Rational t = tu_cost(p).total();
    r.rows.push_back({p.name, t, Rational(1) - t / r.baseline});
  }
  return r;
}

// ---------------------------------------------------------------- output

inline std::string breakdown(const TUCost& c) {
  std::string out;
  for (const auto& e : c.entries) out += (out.empty() ? "" : " + ") + render_tu(e.total) + " (" + (e.inherited ? "from " : "") + e.name + ")";
  return out;
}

inline std::string pad_right(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

/// Plain-text table: model, per-entry breakdown, total TU.
inline std::string render_cost_table(const std::vector<TUCost>& costs) {
  std::size_t w_model = 5, w_break = 9;
  for (const auto& c : costs) {
    w_model = std::max(w_model, c.plan.size());
    w_break = std::max(w_break, breakdown(c).size());
  }
  std::string out = pad_right("Model", w_model) + "  " + pad_right("Breakdown", w_break) + "  Compute Cost (TU)\n";
  for (const auto& c : costs) out += pad_right(c.plan, w_model) + "  " + pad_right(breakdown(c), w_break) + "  " + render_tu(c.total()) + "\n";
  return out;
}

inline std::string render_savings(const SavingsReport& r) {
  std::string out = "Baseline " + r.baseline_name + ": " + render_tu(r.baseline) + " TU\n";
  for (const auto& row : r.rows) out += row.name + ": " + render_tu(row.total) + " TU, saves " + render_percent(row.savings) + "\n";
  return out;
}

/// One JSON record per entry, one per plan total, and one per savings row.
inline std::vector<OrderedJson> cost_records(const std::vector<TUCost>& costs, const SavingsReport* savings = nullptr) {
  std::vector<OrderedJson> out;
  for (const auto& c : costs) {
    for (const auto& e : c.entries) {
      OrderedJson j;
      j["record"] = "entry";
      j["plan"] = c.plan;
      j["entry"] = e.name;
      j["kind"] = e.inherited ? "inherited" : "stage";
      j["encoder_tu"] = e.encoder.str();
      j["decoder_tu"] = e.decoder.str();
      j["total_tu"] = e.total.str();
      out.push_back(std::move(j));
    }
    OrderedJson t;
    t["record"] = "plan";
    t["plan"] = c.plan;
    t["total_tu"] = c.total().str();
    t["rendered"] = render_tu(c.total());
    out.push_back(std::move(t));
  }
  if (savings) {
    for (const auto& row : savings->rows) {
      OrderedJson j;
      j["record"] = "savings";
      j["plan"] = row.name;
      j["baseline"] = savings->baseline_name;
      j["baseline_tu"] = savings->baseline.str();
      j["total_tu"] = row.total.str();
      j["savings"] = row.savings.str();
      j["rendered"] = render_percent(row.savings);
      out.push_back(std::move(j));
    }
  }
  return out;
}

/// Parses the exact "n" or "n/d" strings used in cost records.
inline Rational parse_rational(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return Rational(std::stoll(s));
    return Rational(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
  } catch (const std::logic_error&) {
    throw Error("malformed rational '" + s + "'");
  }
}

/// Full-size plans of the ten registered models in table order.
inline std::vector<train::TrainPlan> table1_plans() {
  std::vector<train::TrainPlan> out;
  for (const auto& n : train::preset_names()) out.push_back(train::preset_plan(n));
  return out;
}

/// Two-stage recipe savings against training roberta-12e and bart-12e12d separately.
inline SavingsReport table1_savings() {
  return compare_recipes({train::preset_plan("2stage-bart-12e12d"), train::preset_plan("2stage-bart-12e12d-unfrz")},
                         train::preset_plan("roberta-12e"), train::preset_plan("bart-12e12d"));
}

}  // namespace twostage::cost
