#pragma once

// Per-epoch smoothing weight: constant, two-stage (fixed weight, then none),
// and linear decay clamped at zero. Epochs are 0-indexed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace r3 {

enum class ScheduleKind { constant, two_stage, linear_decay };

inline const char* to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::two_stage: return "two_stage";
    case ScheduleKind::linear_decay: return "linear_decay";
  }
  return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "two_stage") return ScheduleKind::two_stage;
  if (s == "linear_decay") return ScheduleKind::linear_decay;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::constant;
  double epsilon0 = 0.1;
  double tau = 0.01;              // linear_decay only
  std::size_t stage1_epochs = 4;  // two_stage only
  std::size_t n_epochs = 16;

  void validate() const {
    if (!(epsilon0 >= 0.0 && epsilon0 <= 1.0)) {
      throw std::invalid_argument("schedule: epsilon0 outside [0,1]");
    }
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("schedule: tau outside [0,1]");
    if (n_epochs < 1) throw std::invalid_argument("schedule: n_epochs must be >= 1");
    if (kind == ScheduleKind::two_stage && stage1_epochs > n_epochs) {
      throw std::invalid_argument("schedule: stage1_epochs exceeds n_epochs");
    }
  }
};

/// First epoch at which linear decay has hit zero, i.e. ceil(epsilon0 / tau).
/// The quotient is snapped to the nearest integer when within 1e-9 of it so
/// that decimal settings such as 0.1 / 0.01 land on 10, not 11.
inline std::size_t linear_decay_zero_epoch(double epsilon0, double tau) {
  if (epsilon0 <= 0.0) return 0;
  if (tau <= 0.0) throw std::domain_error("linear decay with tau = 0 never reaches zero");
  const double q = epsilon0 / tau;
  const double nearest = std::round(q);
  if (std::abs(q - nearest) <= 1e-9 * std::max(1.0, q)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(q));
}

inline double epsilon_at(const ScheduleConfig& config, std::size_t epoch) {
  config.validate();
  if (epoch >= config.n_epochs) {
    throw std::out_of_range("epsilon_at: epoch " + std::to_string(epoch) + " >= n_epochs " +
                            std::to_string(config.n_epochs));
  }
  switch (config.kind) {
    case ScheduleKind::constant:
      return config.epsilon0;
    case ScheduleKind::two_stage:
      return epoch < config.stage1_epochs ? config.epsilon0 : 0.0;
    case ScheduleKind::linear_decay: {
      if (config.tau == 0.0) return config.epsilon0;
      if (epoch >= linear_decay_zero_epoch(config.epsilon0, config.tau)) return 0.0;
      return std::max(0.0, config.epsilon0 - static_cast<double>(epoch) * config.tau);
    }
  }
  throw std::logic_error("epsilon_at: unreachable");
}

inline std::vector<double> epsilon_table(const ScheduleConfig& config) {
  std::vector<double> out;
  out.reserve(config.n_epochs);
  for (std::size_t i = 0; i < config.n_epochs; ++i) out.push_back(epsilon_at(config, i));
  return out;
}

}  // namespace r3
