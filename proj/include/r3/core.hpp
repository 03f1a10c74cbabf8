#pragma once

// Foundational types: spans, probability vectors, QA examples, and the
// positional span F1 that every smoothing construction is built on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace r3 {

/// Inclusive token interval [start, end] within one fixed context.
class Span {
 public:
  Span(std::size_t start, std::size_t end) : start_(start), end_(end) {
    if (start > end) {
      throw std::invalid_argument("Span: start " + std::to_string(start) +
                                  " exceeds end " + std::to_string(end));
    }
  }

  std::size_t start() const noexcept { return start_; }
  std::size_t end() const noexcept { return end_; }
  std::size_t length() const noexcept { return end_ - start_ + 1; }

  /// Mirror image of this span inside a context of `context_length` tokens.
  Span reversed(std::size_t context_length) const {
    if (end_ >= context_length) {
      throw std::out_of_range("Span::reversed: span exceeds context");
    }
    return Span(context_length - 1 - end_, context_length - 1 - start_);
  }

  friend bool operator==(const Span&, const Span&) = default;

 private:
  std::size_t start_;
  std::size_t end_;
};

inline std::size_t span_overlap(const Span& a, const Span& b) noexcept {
  const std::size_t lo = std::max(a.start(), b.start());
  const std::size_t hi = std::min(a.end(), b.end());
  return hi < lo ? 0 : hi - lo + 1;
}

/// 2 * overlap / (len(pred) + len(gold)); positional, not bag-of-words.
inline double span_f1(const Span& pred, const Span& gold) noexcept {
  const auto overlap = span_overlap(pred, gold);
  if (overlap == 0) return 0.0;
  return 2.0 * static_cast<double>(overlap) /
         static_cast<double>(pred.length() + gold.length());
}

/// Nonnegative vector summing to one (within 1e-9).
class Distribution {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw std::invalid_argument("Distribution: empty");
    double total = 0.0;
    for (double p : probs_) {
      if (!std::isfinite(p) || p < 0.0) {
        throw std::invalid_argument("Distribution: entries must be finite and >= 0");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > kSumTolerance) {
      throw std::invalid_argument("Distribution: entries sum to " + std::to_string(total));
    }
  }

  static Distribution one_hot(std::size_t length, std::size_t index) {
    if (index >= length) throw std::out_of_range("Distribution::one_hot: index out of range");
    std::vector<double> p(length, 0.0);
    p[index] = 1.0;
    return Distribution(std::move(p));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }
  const std::vector<double>& vector() const noexcept { return probs_; }

  /// (1 - weight) * this + weight * other.
  Distribution mix(const Distribution& other, double weight) const {
    if (other.size() != size()) throw std::invalid_argument("Distribution::mix: length mismatch");
    if (!(weight >= 0.0 && weight <= 1.0)) {
      throw std::invalid_argument("Distribution::mix: weight outside [0,1]");
    }
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) {
      out[i] = (1.0 - weight) * probs_[i] + weight * other.probs_[i];
    }
    return Distribution(std::move(out));
  }

 private:
  std::vector<double> probs_;
};

/// Unnormalized, nonnegative, finite per-position scores (F1 sums).
class RawScoreVector {
 public:
  explicit RawScoreVector(std::vector<double> scores) : scores_(std::move(scores)) {
    for (double s : scores_) {
      if (!std::isfinite(s) || s < 0.0) {
        throw std::invalid_argument("RawScoreVector: entries must be finite and >= 0");
      }
    }
  }

  std::size_t size() const noexcept { return scores_.size(); }
  double operator[](std::size_t i) const { return scores_[i]; }
  std::span<const double> values() const noexcept { return scores_; }
  const std::vector<double>& vector() const noexcept { return scores_; }

 private:
  std::vector<double> scores_;
};

// Label values follow the answer-type head: 0 = no, 1 = yes, 2 = span.
enum class AnswerKind : int { no = 0, yes = 1, span = 2 };

inline const char* to_string(AnswerKind kind) {
  switch (kind) {
    case AnswerKind::no: return "no";
    case AnswerKind::yes: return "yes";
    case AnswerKind::span: return "span";
  }
  return "?";
}

inline AnswerKind answer_kind_from_string(const std::string& s) {
  if (s == "no") return AnswerKind::no;
  if (s == "yes") return AnswerKind::yes;
  if (s == "span") return AnswerKind::span;
  throw std::invalid_argument("unknown answer kind '" + s + "'");
}

struct GoldAnswer {
  AnswerKind kind = AnswerKind::span;
  std::optional<Span> span;  // present iff kind == span

  static GoldAnswer yes() { return {AnswerKind::yes, std::nullopt}; }
  static GoldAnswer no() { return {AnswerKind::no, std::nullopt}; }
  static GoldAnswer of_span(Span s) { return {AnswerKind::span, s}; }

  int label() const noexcept { return static_cast<int>(kind); }

  friend bool operator==(const GoldAnswer&, const GoldAnswer&) = default;
};

using Tokens = std::vector<std::string>;

struct Document {
  std::string title;
  std::vector<Tokens> sentences;

  std::size_t token_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }

  Tokens flat_tokens() const {
    Tokens out;
    out.reserve(token_count());
    for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  friend bool operator==(const Document&, const Document&) = default;
};

/// One multi-hop QA instance.
///
/// `answer.span` indexes the concatenation of the gold documents' tokens,
/// taken in document order. `supporting_flags[d][s]` marks sentence s of
/// document d.
struct Example {
  std::string id;
  Tokens question;
  std::vector<Document> documents;
  std::vector<int> gold_doc_flags;
  std::vector<std::vector<int>> supporting_flags;
  GoldAnswer answer;
  std::string answer_text;

  std::vector<std::size_t> gold_doc_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < gold_doc_flags.size(); ++i) {
      if (gold_doc_flags[i] != 0) out.push_back(i);
    }
    return out;
  }

  /// Length of the gold-document context that `answer.span` refers to.
  std::size_t gold_context_length() const {
    std::size_t n = 0;
    for (auto i : gold_doc_indices()) n += documents[i].token_count();
    return n;
  }

  friend bool operator==(const Example&, const Example&) = default;
};

/// Throws std::invalid_argument when an Example breaks its structural
/// invariants. `expected_gold_docs` of 0 skips the gold-count check.
inline void validate(const Example& ex, std::size_t expected_gold_docs = 2) {
  const auto fail = [&](const std::string& what) {
    throw std::invalid_argument("example '" + ex.id + "': " + what);
  };
  if (ex.gold_doc_flags.size() != ex.documents.size()) fail("gold_doc_flags size mismatch");
  if (ex.supporting_flags.size() != ex.documents.size()) fail("supporting_flags size mismatch");
  const auto gold = ex.gold_doc_indices();
  if (expected_gold_docs != 0 && gold.size() != expected_gold_docs) {
    fail("expected " + std::to_string(expected_gold_docs) + " gold documents, found " +
         std::to_string(gold.size()));
  }
  for (std::size_t d = 0; d < ex.documents.size(); ++d) {
    if (ex.supporting_flags[d].size() != ex.documents[d].sentences.size()) {
      fail("supporting_flags row size mismatch for document " + std::to_string(d));
    }
    const bool any_support = std::any_of(ex.supporting_flags[d].begin(),
                                         ex.supporting_flags[d].end(),
                                         [](int f) { return f != 0; });
    if (any_support && ex.gold_doc_flags[d] == 0) {
      fail("supporting sentence in non-gold document " + std::to_string(d));
    }
  }
  if ((ex.answer.kind == AnswerKind::span) != ex.answer.span.has_value()) {
    fail("answer span presence does not match answer kind");
  }
  if (ex.answer.span && ex.answer.span->end() >= ex.gold_context_length()) {
    fail("answer span exceeds gold context");
  }
}

}  // namespace r3
