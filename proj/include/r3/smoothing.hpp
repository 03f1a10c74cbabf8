#pragma once

// Soft span targets: uniform label smoothing, the word-overlap stand-in, and
// F1 smoothing. The F1 raw scores come in two forms: a literal double loop
// over every candidate span (kept permanently as the reference) and the
// closed-form case split that skips zero-overlap terms.

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "r3/core.hpp"

namespace r3 {

enum class SmoothingKind { one_hot, uniform, word_overlap, f1 };

inline const char* to_string(SmoothingKind kind) {
  switch (kind) {
    case SmoothingKind::one_hot: return "one_hot";
    case SmoothingKind::uniform: return "uniform";
    case SmoothingKind::word_overlap: return "word_overlap";
    case SmoothingKind::f1: return "f1";
  }
  return "?";
}

inline SmoothingKind smoothing_kind_from_string(const std::string& s) {
  if (s == "one_hot") return SmoothingKind::one_hot;
  if (s == "uniform") return SmoothingKind::uniform;
  if (s == "word_overlap") return SmoothingKind::word_overlap;
  if (s == "f1") return SmoothingKind::f1;
  throw std::invalid_argument("unknown smoothing method '" + s + "'");
}

struct SmoothingMethod {
  SmoothingKind kind = SmoothingKind::one_hot;
  double epsilon = 0.0;  // ignored for one_hot

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
      throw std::invalid_argument("SmoothingMethod: epsilon outside [0,1]");
    }
  }
};

struct SoftTarget {
  Distribution start;
  Distribution end;

  SoftTarget(Distribution s, Distribution e) : start(std::move(s)), end(std::move(e)) {
    if (start.size() != end.size()) {
      throw std::invalid_argument("SoftTarget: start/end length mismatch");
    }
  }

  std::size_t size() const noexcept { return start.size(); }
};

namespace detail {

inline void check_gold(std::size_t length, const Span& gold) {
  if (length == 0) throw std::invalid_argument("context length must be >= 1");
  if (gold.end() >= length) {
    throw std::out_of_range("gold span (" + std::to_string(gold.start()) + "," +
                            std::to_string(gold.end()) + ") outside context of length " +
                            std::to_string(length));
  }
}

inline void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("epsilon outside [0,1]");
  }
}

}  // namespace detail

/// q_s(t) = sum over xi in [t, L-1] of F1((t, xi), gold), by enumeration.
inline RawScoreVector qs_raw_brute(std::size_t length, const Span& gold) {
  detail::check_gold(length, gold);
  std::vector<double> out(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    double sum = 0.0;
    for (std::size_t xi = t; xi < length; ++xi) sum += span_f1(Span(t, xi), gold);
    out[t] = sum;
  }
  return RawScoreVector(std::move(out));
}

/// q_e(t) = sum over xi in [0, t] of F1((xi, t), gold), by enumeration.
inline RawScoreVector qe_raw_brute(std::size_t length, const Span& gold) {
  detail::check_gold(length, gold);
  std::vector<double> out(length, 0.0);
  for (std::size_t t = 0; t < length; ++t) {
    double sum = 0.0;
    for (std::size_t xi = 0; xi <= t; ++xi) sum += span_f1(Span(xi, t), gold);
    out[t] = sum;
  }
  return RawScoreVector(std::move(out));
}

/// Case-split q_s: only spans that reach the gold span contribute, and each
/// overlap is known in closed form. Positions after the gold end score 0.
inline RawScoreVector qs_raw_fast(std::size_t length, const Span& gold) {
  detail::check_gold(length, gold);
  const double gs = static_cast<double>(gold.start());
  const double ge = static_cast<double>(gold.end());
  const double la = static_cast<double>(gold.length());
  std::vector<double> out(length, 0.0);
  for (std::size_t t = 0; t <= gold.end(); ++t) {
    const double td = static_cast<double>(t);
    double sum = 0.0;
    if (t < gold.start()) {
      // Prediction covers [s*, xi]: overlap grows with xi, then saturates at L_a.
      for (std::size_t xi = gold.start(); xi <= gold.end(); ++xi) {
        const double lp = static_cast<double>(xi) - td + 1.0;
        sum += 2.0 * (static_cast<double>(xi) - gs + 1.0) / (lp + la);
      }
      for (std::size_t xi = gold.end() + 1; xi < length; ++xi) {
        const double lp = static_cast<double>(xi) - td + 1.0;
        sum += 2.0 * la / (lp + la);
      }
    } else {
      // Prediction starts inside gold: fully contained until xi passes e*.
      for (std::size_t xi = t; xi <= gold.end(); ++xi) {
        const double lp = static_cast<double>(xi) - td + 1.0;
        sum += 2.0 * lp / (lp + la);
      }
      for (std::size_t xi = gold.end() + 1; xi < length; ++xi) {
        const double lp = static_cast<double>(xi) - td + 1.0;
        sum += 2.0 * (ge - td + 1.0) / (lp + la);
      }
    }
    out[t] = sum;
  }
  return RawScoreVector(std::move(out));
}

/// Mirror of qs_raw_fast. Positions before the gold start score 0.
inline RawScoreVector qe_raw_fast(std::size_t length, const Span& gold) {
  detail::check_gold(length, gold);
  const double gs = static_cast<double>(gold.start());
  const double ge = static_cast<double>(gold.end());
  const double la = static_cast<double>(gold.length());
  std::vector<double> out(length, 0.0);
  for (std::size_t t = gold.start(); t < length; ++t) {
    const double td = static_cast<double>(t);
    double sum = 0.0;
    if (t > gold.end()) {
      for (std::size_t xi = gold.start(); xi <= gold.end(); ++xi) {
        const double lp = td - static_cast<double>(xi) + 1.0;
        sum += 2.0 * (ge - static_cast<double>(xi) + 1.0) / (lp + la);
      }
      for (std::size_t xi = 0; xi < gold.start(); ++xi) {
        const double lp = td - static_cast<double>(xi) + 1.0;
        sum += 2.0 * la / (lp + la);
      }
    } else {
      for (std::size_t xi = gold.start(); xi <= t; ++xi) {
        const double lp = td - static_cast<double>(xi) + 1.0;
        sum += 2.0 * lp / (lp + la);
      }
      for (std::size_t xi = 0; xi < gold.start(); ++xi) {
        const double lp = td - static_cast<double>(xi) + 1.0;
        sum += 2.0 * (td - gs + 1.0) / (lp + la);
      }
    }
    out[t] = sum;
  }
  return RawScoreVector(std::move(out));
}

/// Max-shifted softmax over arbitrary finite scores.
inline Distribution softmax(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("softmax: empty input");
  double hi = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("softmax: non-finite score");
    hi = std::max(hi, s);
  }
  std::vector<double> out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - hi);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return Distribution(std::move(out));
}

inline Distribution normalize_softmax(const RawScoreVector& raw) { return softmax(raw.values()); }

/// (1 - eps) * one_hot(gold_pos) + eps / L everywhere.
inline Distribution uniform_target(std::size_t length, std::size_t gold_pos, double epsilon) {
  detail::check_epsilon(epsilon);
  if (length == 0) throw std::invalid_argument("uniform_target: empty context");
  if (gold_pos >= length) throw std::out_of_range("uniform_target: gold position out of range");
  const double fill = epsilon / static_cast<double>(length);
  std::vector<double> out(length, fill);
  out[gold_pos] = (1.0 - epsilon) + fill;
  return Distribution(std::move(out));
}

/// Mass 1/L_a on every position of the gold span.
inline Distribution span_uniform(std::size_t length, const Span& gold) {
  detail::check_gold(length, gold);
  std::vector<double> out(length, 0.0);
  const double w = 1.0 / static_cast<double>(gold.length());
  for (std::size_t i = gold.start(); i <= gold.end(); ++i) out[i] = w;
  return Distribution(std::move(out));
}

inline SoftTarget f1_target(std::size_t length, const Span& gold, double epsilon) {
  detail::check_epsilon(epsilon);
  const auto q_start = normalize_softmax(qs_raw_fast(length, gold));
  const auto q_end = normalize_softmax(qe_raw_fast(length, gold));
  return SoftTarget(Distribution::one_hot(length, gold.start()).mix(q_start, epsilon),
                    Distribution::one_hot(length, gold.end()).mix(q_end, epsilon));
}

// Stand-in for the word-overlap baseline: smoothing mass stays on the gold span.
inline SoftTarget word_overlap_target(std::size_t length, const Span& gold, double epsilon) {
  detail::check_epsilon(epsilon);
  const auto inside = span_uniform(length, gold);
  return SoftTarget(Distribution::one_hot(length, gold.start()).mix(inside, epsilon),
                    Distribution::one_hot(length, gold.end()).mix(inside, epsilon));
}

/// The smoothing distribution u mixed in by each method, before and after
/// normalization. For one_hot the "smoothing" is the one-hot itself.
struct SmoothingComponents {
  RawScoreVector raw_start;
  RawScoreVector raw_end;
  Distribution norm_start;
  Distribution norm_end;
};

inline SmoothingComponents smoothing_components(SmoothingKind kind, std::size_t length,
                                                const Span& gold) {
  detail::check_gold(length, gold);
  switch (kind) {
    case SmoothingKind::one_hot: {
      std::vector<double> rs(length, 0.0), re(length, 0.0);
      rs[gold.start()] = 1.0;
      re[gold.end()] = 1.0;
      return {RawScoreVector(rs), RawScoreVector(re), Distribution(rs), Distribution(re)};
    }
    case SmoothingKind::uniform: {
      std::vector<double> ones(length, 1.0);
      auto u = softmax(ones);
      return {RawScoreVector(ones), RawScoreVector(ones), u, u};
    }
    case SmoothingKind::word_overlap: {
      std::vector<double> ind(length, 0.0);
      for (std::size_t i = gold.start(); i <= gold.end(); ++i) ind[i] = 1.0;
      auto u = span_uniform(length, gold);
      return {RawScoreVector(ind), RawScoreVector(ind), u, u};
    }
    case SmoothingKind::f1: {
      auto rs = qs_raw_fast(length, gold);
      auto re = qe_raw_fast(length, gold);
      auto ns = normalize_softmax(rs);
      auto ne = normalize_softmax(re);
      return {std::move(rs), std::move(re), std::move(ns), std::move(ne)};
    }
  }
  throw std::logic_error("smoothing_components: unreachable");
}

/// Training target for a span head under `kind` at smoothing weight `epsilon`.
inline SoftTarget make_span_target(SmoothingKind kind, std::size_t length, const Span& gold,
                                   double epsilon) {
  detail::check_gold(length, gold);
  detail::check_epsilon(epsilon);
  switch (kind) {
    case SmoothingKind::one_hot:
      return SoftTarget(Distribution::one_hot(length, gold.start()),
                        Distribution::one_hot(length, gold.end()));
    case SmoothingKind::uniform:
      return SoftTarget(uniform_target(length, gold.start(), epsilon),
                        uniform_target(length, gold.end(), epsilon));
    case SmoothingKind::word_overlap:
      return word_overlap_target(length, gold, epsilon);
    case SmoothingKind::f1:
      return f1_target(length, gold, epsilon);
  }
  throw std::logic_error("make_span_target: unreachable");
}

/// Fixed-point with nine decimals, the precision of every CSV this project emits.
inline std::string format_fixed9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", v);
  return buf;
}

/// CSV: position,raw_start,raw_end,norm_start,norm_end,target_start,target_end
inline void write_distribution_csv(std::ostream& os, const SmoothingComponents& parts,
                                   const SoftTarget& target) {
  const std::size_t n = target.size();
  if (parts.raw_start.size() != n || parts.norm_start.size() != n) {
    throw std::invalid_argument("write_distribution_csv: length mismatch");
  }
  os << "position,raw_start,raw_end,norm_start,norm_end,target_start,target_end\n";
  for (std::size_t i = 0; i < n; ++i) {
    os << i << ',' << format_fixed9(parts.raw_start[i]) << ',' << format_fixed9(parts.raw_end[i])
       << ',' << format_fixed9(parts.norm_start[i]) << ',' << format_fixed9(parts.norm_end[i])
       << ',' << format_fixed9(target.start[i]) << ',' << format_fixed9(target.end[i]) << '\n';
  }
}

}  // namespace r3
