// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "twostage/tensor/tensor.hpp"

namespace twostage::train {

enum class WarmupKind { LinearFromZero, ExponentialFromFloor };

struct LrSchedule {
  double peak = 1.5e-4;
  std::uint64_t warmup_steps = 5000;
  WarmupKind warmup_kind = WarmupKind::LinearFromZero;
  double floor = 1e-7;  // start of an exponential warmup
  double end = 5e-6;    // 0 means decay to zero
  std::uint64_t total_steps = 500000;

  void validate() const {
    if (warmup_steps > total_steps) {
      throw Error("warmup_steps (" + std::to_string(warmup_steps) + ") exceeds total_steps (" + std::to_string(total_steps) + ")");
    }
    if (!(peak > end) || end < 0.0) throw Error("learning-rate schedule needs peak > end >= 0");
    if (warmup_kind == WarmupKind::ExponentialFromFloor && !(floor > 0.0 && floor < peak)) {
      throw Error("exponential warmup needs 0 < floor < peak");
    }
  }
  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

inline const char* to_string(WarmupKind k) { return k == WarmupKind::LinearFromZero ? "linear" : "exponential"; }

inline WarmupKind warmup_kind_from_string(const std::string& s) {
  if (s == "linear") return WarmupKind::LinearFromZero;
  if (s == "exponential") return WarmupKind::ExponentialFromFloor;
  throw Error("unknown warmup kind '" + s + "' (expected linear|exponential)");
}

/// Learning rate at `step` (0 .. total_steps). Warmup is linear from 0 or geometric
/// from `floor`; afterwards the rate falls linearly from peak to end at total_steps.
inline double lr_at(const LrSchedule& s, std::uint64_t step) {
  s.validate();
  if (step > s.total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " is beyond total_steps " + std::to_string(s.total_steps));
  }
  if (step < s.warmup_steps) {
    const double frac = static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (s.warmup_kind == WarmupKind::LinearFromZero) return s.peak * frac;
    return s.floor * std::pow(s.peak / s.floor, frac);
  }
  const std::uint64_t decay = s.total_steps - s.warmup_steps;
  if (decay == 0) return s.peak;
  const double frac = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay);
  return s.end * frac + s.peak * (1.0 - frac);
}

}  // namespace twostage::train
