#pragma once

// Answer EM/F1 after answer normalization, set EM/F1 for documents and
// supporting facts, and the two-way error taxonomy (span vs. reasoning).

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace r3 {

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse spaces.
inline std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(c)));
  }
  std::istringstream in(lowered);
  std::string word, out;
  while (in >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

struct PrecisionRecallF1 {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Bag-of-tokens F1 over normalized answers. A yes/no on either side only
/// scores when both normalize to the same string.
inline PrecisionRecallF1 answer_f1(std::string_view prediction, std::string_view gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  const auto is_yes_no = [](const std::string& s) { return s == "yes" || s == "no"; };
  if ((is_yes_no(p) || is_yes_no(g)) && p != g) return {};

  std::map<std::string, int> counts;
  const auto pt = split_words(p);
  const auto gt = split_words(g);
  for (const auto& w : gt) ++counts[w];
  int common = 0;
  for (const auto& w : pt) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return {};
  const double precision = static_cast<double>(common) / static_cast<double>(pt.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gt.size());
  return {2.0 * precision * recall / (precision + recall), precision, recall};
}

inline bool answer_em(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold);
}

struct SetScore {
  double em = 0.0;
  double f1 = 0.0;
};

template <typename T>
SetScore set_em_f1(const std::set<T>& predicted, const std::set<T>& gold) {
  if (predicted == gold) return {1.0, 1.0};
  std::size_t common = 0;
  for (const auto& x : predicted) common += gold.count(x);
  if (common == 0) return {0.0, 0.0};
  const double p = static_cast<double>(common) / static_cast<double>(predicted.size());
  const double r = static_cast<double>(common) / static_cast<double>(gold.size());
  return {0.0, 2.0 * p * r / (p + r)};
}

// Thirty common English function words; fixed so the classifier is deterministic.
inline constexpr std::array<std::string_view, 30> kStopWords = {
    "a",    "an",   "the",  "of",  "in",   "on",   "at",  "to",   "for",  "with",
    "by",   "from", "and",  "or",  "but",  "is",   "are", "was",  "were", "be",
    "been", "it",   "its",  "as",  "that", "this", "his", "her",  "their", "which"};

inline bool is_stop_word(std::string_view w) {
  return std::find(kStopWords.begin(), kStopWords.end(), w) != kStopWords.end();
}

enum class ErrorCategory { correct, answer_span_error, multihop_error };

inline const char* to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::correct: return "correct";
    case ErrorCategory::answer_span_error: return "answer_span_error";
    case ErrorCategory::multihop_error: return "multihop_error";
  }
  return "?";
}

/// Wrong answers that still share a content word with gold are span errors;
/// wrong answers sharing nothing are reasoning errors.
inline ErrorCategory classify_error(std::string_view prediction, std::string_view gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  if (p == g) return ErrorCategory::correct;
  std::set<std::string> gold_words;
  for (auto& w : split_words(g)) {
    if (!is_stop_word(w)) gold_words.insert(std::move(w));
  }
  for (const auto& w : split_words(p)) {
    if (!is_stop_word(w) && gold_words.count(w)) return ErrorCategory::answer_span_error;
  }
  return ErrorCategory::multihop_error;
}

struct MetricsReport {
  double answer_em = 0.0;
  double answer_f1 = 0.0;
  double doc_em = 0.0;
  double doc_f1 = 0.0;
  double sup_em = 0.0;
  double sup_f1 = 0.0;
  std::size_t n_examples = 0;
  std::size_t answer_span_errors = 0;
  std::size_t multihop_errors = 0;
};

inline void to_json(nlohmann::ordered_json& j, const MetricsReport& r) {
  j = nlohmann::ordered_json{{"answer_em", r.answer_em},
                             {"answer_f1", r.answer_f1},
                             {"doc_em", r.doc_em},
                             {"doc_f1", r.doc_f1},
                             {"sup_em", r.sup_em},
                             {"sup_f1", r.sup_f1},
                             {"n_examples", r.n_examples},
                             {"answer_span_errors", r.answer_span_errors},
                             {"multihop_errors", r.multihop_errors}};
}

/// One scored prediction; identifiers are document titles and
/// "title#sentence" support keys.
struct PredictionRecord {
  std::string answer;
  std::set<std::string> docs;
  std::set<std::string> support;
};

struct GoldRecord {
  std::string answer;
  std::set<std::string> docs;
  std::set<std::string> support;
};

inline std::string support_key(const std::string& title, std::size_t sentence) {
  return title + "#" + std::to_string(sentence);
}

/// Sums then divides, so the result does not depend on accumulation order
/// beyond floating-point summation order (callers reduce in example order).
class MetricsAccumulator {
 public:
  void add(const PredictionRecord& pred, const GoldRecord& gold) {
    sum_answer_em_ += answer_em(pred.answer, gold.answer) ? 1.0 : 0.0;
    sum_answer_f1_ += answer_f1(pred.answer, gold.answer).f1;
    const auto d = set_em_f1(pred.docs, gold.docs);
    sum_doc_em_ += d.em;
    sum_doc_f1_ += d.f1;
    const auto s = set_em_f1(pred.support, gold.support);
    sum_sup_em_ += s.em;
    sum_sup_f1_ += s.f1;
    switch (classify_error(pred.answer, gold.answer)) {
      case ErrorCategory::correct: break;
      case ErrorCategory::answer_span_error: ++span_errors_; break;
      case ErrorCategory::multihop_error: ++multihop_errors_; break;
    }
    ++n_;
  }

  MetricsReport report() const {
    MetricsReport r;
    r.n_examples = n_;
    r.answer_span_errors = span_errors_;
    r.multihop_errors = multihop_errors_;
    if (n_ == 0) return r;
    const double n = static_cast<double>(n_);
    r.answer_em = sum_answer_em_ / n;
    r.answer_f1 = sum_answer_f1_ / n;
    r.doc_em = sum_doc_em_ / n;
    r.doc_f1 = sum_doc_f1_ / n;
    r.sup_em = sum_sup_em_ / n;
    r.sup_f1 = sum_sup_f1_ / n;
    return r;
  }

 private:
  double sum_answer_em_ = 0, sum_answer_f1_ = 0, sum_doc_em_ = 0, sum_doc_f1_ = 0;
  double sum_sup_em_ = 0, sum_sup_f1_ = 0;
  std::size_t n_ = 0, span_errors_ = 0, multihop_errors_ = 0;
};

}  // namespace r3
