#pragma once

// Toy retrieve -> refine -> read pipeline.
//
// The encoder is a bag of learned token embeddings; every head is linear on
// mean-pooled representations, so the full gradient is written out by hand.
// Each head also gets one scalar "question similarity" feature, the summed
// similarity of the input's tokens to the mean question vector, because a
// purely linear head on a mean-pooled vector cannot tell whether a document
// is about the question at all. Span heads see the previous and next token as well, the
// smallest context window that lets them find an answer boundary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "r3/core.hpp"
#include "r3/data.hpp"
#include "r3/losses.hpp"
#include "r3/metrics.hpp"
#include "r3/schedule.hpp"
#include "r3/smoothing.hpp"

namespace r3 {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- vocabulary and encoded examples ---------------------------------------

class Vocabulary {
 public:
  static constexpr int kUnknown = 0;

  Vocabulary() { add("<unk>"); }

  /// Ids are assigned in first-seen order over questions, then documents.
  static Vocabulary build(const std::vector<Example>& examples) {
    Vocabulary v;
    for (const auto& ex : examples) {
      for (const auto& w : ex.question) v.add(w);
      for (const auto& d : ex.documents) {
        for (const auto& s : d.sentences) {
          for (const auto& w : s) v.add(w);
        }
      }
    }
    return v;
  }

  int add(const std::string& word) {
    auto [it, inserted] = index_.try_emplace(word, static_cast<int>(words_.size()));
    if (inserted) words_.push_back(word);
    return it->second;
  }

  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknown : it->second;
  }

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct EncodedDocument {
  std::string title;
  std::vector<std::vector<int>> sentences;
  std::vector<int> tokens;  // all sentences, flattened
  Tokens words;             // original surface tokens, flattened
};

struct EncodedExample {
  std::string id;
  std::vector<int> question;
  std::vector<EncodedDocument> docs;
  std::vector<int> gold_doc_flags;
  std::vector<std::vector<int>> supporting_flags;
  GoldAnswer answer;
  std::string answer_text;

  std::pair<std::size_t, std::size_t> gold_pair() const {
    std::vector<std::size_t> g;
    for (std::size_t i = 0; i < gold_doc_flags.size(); ++i) {
      if (gold_doc_flags[i]) g.push_back(i);
    }
    if (g.size() != 2) throw std::invalid_argument("example '" + id + "' needs exactly two gold documents");
    return {g[0], g[1]};
  }
};

inline std::vector<int> encode_tokens(const Tokens& words, const Vocabulary& vocab) {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(vocab.id(w));
  return out;
}

inline EncodedExample encode_example(const Example& ex, const Vocabulary& vocab) {
  EncodedExample out;
  out.id = ex.id;
  out.question = encode_tokens(ex.question, vocab);
  for (const auto& d : ex.documents) {
    EncodedDocument ed;
    ed.title = d.title;
    for (const auto& s : d.sentences) {
      ed.sentences.push_back(encode_tokens(s, vocab));
      ed.tokens.insert(ed.tokens.end(), ed.sentences.back().begin(), ed.sentences.back().end());
      ed.words.insert(ed.words.end(), s.begin(), s.end());
    }
    out.docs.push_back(std::move(ed));
  }
  out.gold_doc_flags = ex.gold_doc_flags;
  out.supporting_flags = ex.supporting_flags;
  out.answer = ex.answer;
  out.answer_text = ex.answer_text;
  return out;
}

// ---- parameters -------------------------------------------------------------

enum class ParamGroup : std::size_t {
  embeddings,
  retrieval_head, retrieval_bias, retrieval_sim,
  pair_head, pair_bias, pair_sim,
  type_head, type_bias,
  start_token, start_prev, start_next, start_qsim,
  end_token, end_prev, end_next, end_qsim,
  support_head, support_bias, support_sim,
  count
};

inline constexpr std::size_t kParamGroups = static_cast<std::size_t>(ParamGroup::count);

inline const char* group_name(ParamGroup g) {
  static constexpr std::array<const char*, kParamGroups> names = {
      "embeddings",   "retrieval_head", "retrieval_bias", "retrieval_sim", "pair_head",
      "pair_bias",    "pair_sim",       "type_head",      "type_bias",     "start_token",
      "start_prev",   "start_next",     "start_qsim",     "end_token",     "end_prev",
      "end_next",     "end_qsim",       "support_head",   "support_bias",  "support_sim"};
  return names[static_cast<std::size_t>(g)];
}

/// All model weights in one flat buffer, addressed by group. Gradients use
/// the same type so optimizers and finite-difference checks can treat both
/// as plain vectors.
class ToyModelParams {
 public:
  ToyModelParams(std::size_t vocab_size, std::size_t dim) : vocab_(vocab_size), dim_(dim) {
    if (vocab_size == 0 || dim == 0) throw std::invalid_argument("ToyModelParams: empty shape");
    std::size_t at = 0;
    for (std::size_t g = 0; g < kParamGroups; ++g) {
      offsets_[g] = at;
      at += group_size(static_cast<ParamGroup>(g));
    }
    offsets_[kParamGroups] = at;
    values_.assign(at, 0.0);
  }

  std::size_t vocab_size() const noexcept { return vocab_; }
  std::size_t dim() const noexcept { return dim_; }

  std::size_t group_size(ParamGroup g) const noexcept {
    switch (g) {
      case ParamGroup::embeddings: return vocab_ * dim_;
      case ParamGroup::type_head: return 3 * dim_;
      case ParamGroup::type_bias: return 3;
      case ParamGroup::retrieval_bias:
      case ParamGroup::retrieval_sim:
      case ParamGroup::pair_bias:
      case ParamGroup::pair_sim:
      case ParamGroup::start_qsim:
      case ParamGroup::end_qsim:
      case ParamGroup::support_bias:
      case ParamGroup::support_sim: return 1;
      default: return dim_;
    }
  }

  std::span<double> group(ParamGroup g) {
    const auto i = static_cast<std::size_t>(g);
    return {values_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::span<const double> group(ParamGroup g) const {
    const auto i = static_cast<std::size_t>(g);
    return {values_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  double& scalar(ParamGroup g) { return group(g)[0]; }
  double scalar(ParamGroup g) const { return group(g)[0]; }

  std::span<double> embedding(int id) { return group(ParamGroup::embeddings).subspan(row(id), dim_); }
  std::span<const double> embedding(int id) const {
    return group(ParamGroup::embeddings).subspan(row(id), dim_);
  }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const ToyModelParams& a, const ToyModelParams& b) {
    return a.vocab_ == b.vocab_ && a.dim_ == b.dim_ && a.values_ == b.values_;
  }

 private:
  std::size_t row(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab_));
    }
    return static_cast<std::size_t>(id) * dim_;
  }

  std::size_t vocab_;
  std::size_t dim_;
  std::array<std::size_t, kParamGroups + 1> offsets_{};
  std::vector<double> values_;
};

/// Embeddings ~ N(0, 1/d); vector heads ~ N(0, head_scale^2 / d); biases
/// start at zero and similarity scalars at one.
inline ToyModelParams initialize_params(std::size_t vocab_size, std::size_t dim, std::uint64_t seed,
                                        double head_scale = 0.1) {
  ToyModelParams p(vocab_size, dim);
  std::mt19937_64 rng(seed);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  std::normal_distribution<double> emb(0.0, inv_sqrt_d);
  std::normal_distribution<double> head(0.0, head_scale * inv_sqrt_d);
  for (double& v : p.group(ParamGroup::embeddings)) v = emb(rng);
  for (auto g : {ParamGroup::retrieval_head, ParamGroup::pair_head, ParamGroup::type_head,
                 ParamGroup::start_token, ParamGroup::start_prev, ParamGroup::start_next,
                 ParamGroup::end_token, ParamGroup::end_prev, ParamGroup::end_next,
                 ParamGroup::support_head}) {
    for (double& v : p.group(g)) v = head(rng);
  }
  for (auto g : {ParamGroup::retrieval_sim, ParamGroup::pair_sim, ParamGroup::start_qsim,
                 ParamGroup::end_qsim, ParamGroup::support_sim}) {
    p.scalar(g) = 1.0;
  }
  return p;
}

namespace detail {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec embedding_sum(std::span<const int> ids, const ToyModelParams& p) {
  Vec s(p.dim(), 0.0);
  for (int id : ids) axpy(1.0, p.embedding(id), s);
  return s;
}

inline Vec scaled(const Vec& v, double a) {
  Vec out(v);
  for (double& x : out) x *= a;
  return out;
}

inline Vec added(const Vec& a, const Vec& b) {
  Vec out(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline double safe_inverse(std::size_t n) { return n == 0 ? 0.0 : 1.0 / static_cast<double>(n); }

}  // namespace detail

/// Mean of the token embeddings.
inline std::vector<double> encode(std::span<const int> ids, const ToyModelParams& params) {
  if (ids.empty()) throw std::invalid_argument("encode: empty token sequence");
  return detail::scaled(detail::embedding_sum(ids, params), 1.0 / static_cast<double>(ids.size()));
}

// ---- retrieval ----------------------------------------------------------------

struct RetrievalOutput {
  std::vector<double> logits;
  std::vector<double> probs;
};

/// sigmoid(w . mean(q + doc) + sim * (mean(q) . sum(doc)) + b), per document.
inline RetrievalOutput retrieve_scores(const EncodedExample& ex, const ToyModelParams& p) {
  if (ex.docs.empty()) throw std::invalid_argument("retrieve_scores: no documents");
  using namespace detail;
  const Vec qsum = embedding_sum(ex.question, p);
  const Vec qv = scaled(qsum, safe_inverse(ex.question.size()));
  const auto w = p.group(ParamGroup::retrieval_head);
  RetrievalOutput out;
  for (const auto& d : ex.docs) {
    const Vec dsum = embedding_sum(d.tokens, p);
    const std::size_t n = ex.question.size() + d.tokens.size();
    const Vec x = scaled(added(qsum, dsum), safe_inverse(n));
    const double z = dot(w, x) + p.scalar(ParamGroup::retrieval_sim) * dot(qv, dsum) +
                     p.scalar(ParamGroup::retrieval_bias);
    out.logits.push_back(z);
    out.probs.push_back(sigmoid(z));
  }
  return out;
}

/// The k highest-scoring indices (ties to the lower index), returned ascending.
inline std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(k, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

using DocPair = std::pair<std::size_t, std::size_t>;

/// All C(K,2) pairs of the candidates, in lexicographic order.
inline std::vector<DocPair> candidate_pairs(std::span<const std::size_t> docs) {
  std::vector<std::size_t> sorted(docs.begin(), docs.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<DocPair> out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) out.emplace_back(sorted[i], sorted[j]);
  }
  return out;
}

// ---- refinement ---------------------------------------------------------------

struct RefineOutput {
  std::vector<DocPair> pairs;
  std::vector<double> logits;
  std::vector<double> log_probs;

  std::size_t best() const {
    return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
};

inline RefineOutput refine_scores(const EncodedExample& ex, std::vector<DocPair> pairs,
                                  const ToyModelParams& p) {
  if (pairs.empty()) throw std::invalid_argument("refine_scores: need at least one pair (K >= 2)");
  using namespace detail;
  const Vec qsum = embedding_sum(ex.question, p);
  const Vec qv = scaled(qsum, safe_inverse(ex.question.size()));
  const auto w = p.group(ParamGroup::pair_head);
  RefineOutput out;
  for (const auto& [a, b] : pairs) {
    const Vec psum = added(embedding_sum(ex.docs.at(a).tokens, p), embedding_sum(ex.docs.at(b).tokens, p));
    const std::size_t np = ex.docs[a].tokens.size() + ex.docs[b].tokens.size();
    const Vec x = scaled(added(qsum, psum), safe_inverse(ex.question.size() + np));
    out.logits.push_back(dot(w, x) + p.scalar(ParamGroup::pair_sim) * dot(qv, psum) +
                         p.scalar(ParamGroup::pair_bias));
  }
  out.log_probs = log_softmax(out.logits);
  out.pairs = std::move(pairs);
  return out;
}

// ---- reading comprehension --------------------------------------------------

/// Concatenated context of a document pair (lower index first).
struct ReaderContext {
  struct Sentence {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t doc = 0;
    std::size_t index = 0;
  };
  std::vector<int> ids;
  Tokens words;
  std::vector<Sentence> sentences;

  std::size_t size() const noexcept { return ids.size(); }
};

inline ReaderContext make_context(const EncodedExample& ex, DocPair pair) {
  ReaderContext ctx;
  for (std::size_t d : {std::min(pair.first, pair.second), std::max(pair.first, pair.second)}) {
    const auto& doc = ex.docs.at(d);
    for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
      const std::size_t begin = ctx.ids.size();
      ctx.ids.insert(ctx.ids.end(), doc.sentences[s].begin(), doc.sentences[s].end());
      ctx.sentences.push_back({begin, ctx.ids.size(), d, s});
    }
    ctx.words.insert(ctx.words.end(), doc.words.begin(), doc.words.end());
  }
  return ctx;
}

struct ReaderOutput {
  std::vector<double> type_log_probs;  // [no, yes, span]
  std::vector<double> start_logits;
  std::vector<double> end_logits;
  std::vector<double> support_probs;
};

namespace detail {

struct SpanHeadGroups {
  ParamGroup token, prev, next, qsim;
};
inline constexpr SpanHeadGroups kStartHead{ParamGroup::start_token, ParamGroup::start_prev,
                                           ParamGroup::start_next, ParamGroup::start_qsim};
inline constexpr SpanHeadGroups kEndHead{ParamGroup::end_token, ParamGroup::end_prev,
                                         ParamGroup::end_next, ParamGroup::end_qsim};

// logit_t = token . e_t + prev . e_{t-1} + next . e_{t+1} + qsim * (q . e_{t-1})
inline Vec span_logits(const SpanHeadGroups& h, std::span<const int> ids, const Vec& qv,
                       const ToyModelParams& p) {
  const std::size_t L = ids.size();
  Vec out(L, 0.0);
  const double qsim = p.scalar(h.qsim);
  for (std::size_t t = 0; t < L; ++t) {
    double z = dot(p.group(h.token), p.embedding(ids[t]));
    if (t > 0) {
      const auto prev = p.embedding(ids[t - 1]);
      z += dot(p.group(h.prev), prev) + qsim * dot(qv, prev);
    }
    if (t + 1 < L) z += dot(p.group(h.next), p.embedding(ids[t + 1]));
    out[t] = z;
  }
  return out;
}

}  // namespace detail

inline ReaderOutput reader_forward(std::span<const int> question, const ReaderContext& ctx,
                                   const ToyModelParams& p) {
  if (ctx.size() == 0) throw std::invalid_argument("reader_forward: empty context");
  using namespace detail;
  const Vec qsum = embedding_sum(question, p);
  const Vec qv = scaled(qsum, safe_inverse(question.size()));
  ReaderOutput out;

  const Vec x = added(qv, scaled(embedding_sum(ctx.ids, p), safe_inverse(ctx.size())));
  const auto W = p.group(ParamGroup::type_head);
  const auto b = p.group(ParamGroup::type_bias);
  std::vector<double> type_logits(3);
  for (std::size_t k = 0; k < 3; ++k) type_logits[k] = dot(W.subspan(k * p.dim(), p.dim()), x) + b[k];
  out.type_log_probs = log_softmax(type_logits);

  out.start_logits = span_logits(kStartHead, ctx.ids, qv, p);
  out.end_logits = span_logits(kEndHead, ctx.ids, qv, p);

  for (const auto& s : ctx.sentences) {
    const std::span<const int> ids(ctx.ids.data() + s.begin, s.end - s.begin);
    const Vec msum = embedding_sum(ids, p);
    const Vec m = scaled(msum, safe_inverse(ids.size()));
    const double z = dot(p.group(ParamGroup::support_head), m) +
                     p.scalar(ParamGroup::support_sim) * dot(qv, msum) + p.scalar(ParamGroup::support_bias);
    out.support_probs.push_back(sigmoid(z));
  }
  return out;
}

/// Best (s, e) with s <= e < s + max_answer_len by start[s] + end[e]; ties go
/// to the smallest s, then the smallest e.
inline Span decode_span(std::span<const double> start_logits, std::span<const double> end_logits,
                        std::size_t max_answer_len) {
  if (start_logits.empty() || start_logits.size() != end_logits.size()) {
    throw std::invalid_argument("decode_span: logits must be nonempty and of equal length");
  }
  if (max_answer_len == 0) throw std::invalid_argument("decode_span: max_answer_len must be >= 1");
  const std::size_t L = start_logits.size();
  std::size_t best_s = 0, best_e = 0;
  double best = start_logits[0] + end_logits[0];
  for (std::size_t s = 0; s < L; ++s) {
    for (std::size_t e = s; e < L && e < s + max_answer_len; ++e) {
      const double score = start_logits[s] + end_logits[e];
      if (score > best) {
        best = score;
        best_s = s;
        best_e = e;
      }
    }
  }
  return Span(best_s, best_e);
}

// ---- objectives ---------------------------------------------------------------

enum class Objective { both, retrieval, reading };

struct StepSettings {
  SmoothingKind method = SmoothingKind::one_hot;
  double epsilon = 0.0;
  bool smooth_binary = false;  // apply epsilon to retrieval/support labels too
  LossWeights weights;
  std::size_t k = 3;
  Objective objective = Objective::both;
};

struct LossBreakdown {
  double retrieve = 0.0;
  double refine = 0.0;
  double type = 0.0;
  double start = 0.0;
  double end = 0.0;
  double sup = 0.0;
  bool refine_skipped = false;
  double retrieval_total = 0.0;  // lambda1 * retrieve + lambda2 * refine
  double reading_total = 0.0;    // lambda3 * type + lambda4 * (start + end) + lambda5 * sup

  double objective(Objective o) const {
    switch (o) {
      case Objective::retrieval: return retrieval_total;
      case Objective::reading: return reading_total;
      case Objective::both: break;
    }
    return retrieval_total + reading_total;
  }

  bool finite() const {
    for (double v : {retrieve, refine, type, start, end, sup}) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

namespace detail {

inline std::vector<double> binary_labels(std::span<const int> flags, const StepSettings& s) {
  std::vector<double> out;
  for (int f : flags) {
    const double y = f ? 1.0 : 0.0;
    out.push_back(s.smooth_binary ? smooth_binary_label(y, s.epsilon) : y);
  }
  return out;
}

inline std::vector<double> support_labels(const EncodedExample& ex, const ReaderContext& ctx,
                                          const StepSettings& s) {
  std::vector<int> flags;
  for (const auto& sent : ctx.sentences) flags.push_back(ex.supporting_flags.at(sent.doc).at(sent.index));
  return binary_labels(flags, s);
}

inline std::vector<int> pair_labels(const std::vector<DocPair>& pairs, DocPair gold) {
  std::vector<int> out;
  for (const auto& pr : pairs) out.push_back(pr == gold ? 1 : 0);
  return out;
}

}  // namespace detail

/// Candidate documents for refinement under the current parameters.
inline std::vector<std::size_t> retrieval_candidates(const EncodedExample& ex, const ToyModelParams& p,
                                                     std::size_t k) {
  return select_top_k(retrieve_scores(ex, p).probs, k);
}

/// Forward-only loss, composed from the public forward passes and the
/// loss functions. `candidates` pins the retrieved set (otherwise top-k).
inline LossBreakdown example_loss(const ToyModelParams& p, const EncodedExample& ex,
                                  const StepSettings& s,
                                  const std::vector<std::size_t>* candidates = nullptr) {
  LossBreakdown out;
  const auto retrieval = retrieve_scores(ex, p);
  out.retrieve = retrieval_bce(detail::binary_labels(ex.gold_doc_flags, s), retrieval.probs);

  const auto gold = ex.gold_pair();
  const auto cands = candidates ? *candidates : select_top_k(retrieval.probs, s.k);
  const auto pairs = candidate_pairs(cands);
  const auto labels = detail::pair_labels(pairs, gold);
  if (std::find(labels.begin(), labels.end(), 1) == labels.end()) {
    out.refine_skipped = true;
  } else {
    const auto refine = refine_scores(ex, pairs, p);
    out.refine = refine_ce(labels, refine.log_probs);
  }

  const auto ctx = make_context(ex, gold);
  const auto read = reader_forward(ex.question, ctx, p);
  out.type = type_ce(ex.answer.label(), read.type_log_probs);
  if (ex.answer.kind == AnswerKind::span) {
    const auto target = make_span_target(s.method, ctx.size(), *ex.answer.span, s.epsilon);
    out.start = soft_cross_entropy(target.start, log_softmax(read.start_logits));
    out.end = soft_cross_entropy(target.end, log_softmax(read.end_logits));
  }
  out.sup = binary_cross_entropy(detail::support_labels(ex, ctx, s), read.support_probs);

  out.retrieval_total = retrieval_total(out.retrieve, out.refine, s.weights);
  out.reading_total = reading_total(out.type, out.start, out.end, out.sup, s.weights);
  return out;
}

/// Loss plus `scale` times its gradient added into `grad` (same layout as
/// `p`). Only the terms selected by `s.objective` contribute gradient.
inline LossBreakdown forward_backward(const ToyModelParams& p, const EncodedExample& ex,
                                      const StepSettings& s, ToyModelParams& grad, double scale = 1.0,
                                      const std::vector<std::size_t>* candidates = nullptr) {
  using namespace detail;
  const std::size_t d = p.dim();
  const bool do_retrieval = s.objective != Objective::reading;
  const bool do_reading = s.objective != Objective::retrieval;
  const auto& w = s.weights;

  LossBreakdown out;
  const std::size_t nq = ex.question.size();
  const Vec qsum = embedding_sum(ex.question, p);
  const Vec qv = scaled(qsum, safe_inverse(nq));
  Vec g_question(d, 0.0);  // gradient w.r.t. each question token's embedding

  // Retrieval: binary cross-entropy over every document.
  const std::size_t M = ex.docs.size();
  std::vector<Vec> doc_sum(M);
  std::vector<Vec> g_doc(M, Vec(d, 0.0));  // gradient w.r.t. each token of document i
  std::vector<double> probs(M);
  {
    const auto labels = binary_labels(ex.gold_doc_flags, s);
    const auto head = p.group(ParamGroup::retrieval_head);
    const double sim = p.scalar(ParamGroup::retrieval_sim);
    auto g_head = grad.group(ParamGroup::retrieval_head);
    for (std::size_t i = 0; i < M; ++i) {
      doc_sum[i] = embedding_sum(ex.docs[i].tokens, p);
      const std::size_t nd = ex.docs[i].tokens.size();
      const double inv_n = safe_inverse(nq + nd);
      const Vec x = scaled(added(qsum, doc_sum[i]), inv_n);
      const double qd = dot(qv, doc_sum[i]);
      probs[i] = sigmoid(dot(head, x) + sim * qd + p.scalar(ParamGroup::retrieval_bias));
      if (!do_retrieval) continue;
      const double g = scale * w.lambda1 * (probs[i] - labels[i]) / static_cast<double>(M);
      axpy(g, x, g_head);
      grad.scalar(ParamGroup::retrieval_bias) += g;
      grad.scalar(ParamGroup::retrieval_sim) += g * qd;
      axpy(g * inv_n, head, g_doc[i]);
      axpy(g * sim, qv, g_doc[i]);
      axpy(g * inv_n, head, g_question);
      axpy(g * sim * safe_inverse(nq), doc_sum[i], g_question);
    }
    out.retrieve = binary_cross_entropy(labels, probs);
  }

  // Refinement: softmax over candidate pairs, one gold pair.
  {
    const auto gold = ex.gold_pair();
    const auto cands = candidates ? *candidates : select_top_k(probs, s.k);
    const auto pairs = candidate_pairs(cands);
    const auto labels = pair_labels(pairs, gold);
    if (std::find(labels.begin(), labels.end(), 1) == labels.end()) {
      out.refine_skipped = true;
    } else {
      const auto head = p.group(ParamGroup::pair_head);
      const double sim = p.scalar(ParamGroup::pair_sim);
      std::vector<Vec> xs, psums;
      std::vector<double> logits;
      for (const auto& [a, b] : pairs) {
        const Vec psum = added(doc_sum[a], doc_sum[b]);
        const std::size_t np = ex.docs[a].tokens.size() + ex.docs[b].tokens.size();
        xs.push_back(scaled(added(qsum, psum), safe_inverse(nq + np)));
        psums.push_back(psum);
        logits.push_back(dot(head, xs.back()) + sim * dot(qv, psum) + p.scalar(ParamGroup::pair_bias));
      }
      const auto lp = log_softmax(logits);
      out.refine = refine_ce(labels, lp);
      if (do_retrieval) {
        auto g_head = grad.group(ParamGroup::pair_head);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          const auto [a, b] = pairs[k];
          const double g = scale * w.lambda2 * (std::exp(lp[k]) - labels[k]);
          const std::size_t np = ex.docs[a].tokens.size() + ex.docs[b].tokens.size();
          const double inv_n = safe_inverse(nq + np);
          axpy(g, xs[k], g_head);
          grad.scalar(ParamGroup::pair_bias) += g;
          grad.scalar(ParamGroup::pair_sim) += g * dot(qv, psums[k]);
          for (std::size_t doc : {a, b}) {
            axpy(g * inv_n, head, g_doc[doc]);
            axpy(g * sim, qv, g_doc[doc]);
          }
          axpy(g * inv_n, head, g_question);
          axpy(g * sim * safe_inverse(nq), psums[k], g_question);
        }
      }
    }
  }
  for (std::size_t i = 0; i < M; ++i) {
    for (int id : ex.docs[i].tokens) axpy(1.0, g_doc[i], grad.embedding(id));
  }

  // Reading comprehension on the gold pair.
  const auto ctx = make_context(ex, ex.gold_pair());
  const std::size_t L = ctx.size();
  if (L == 0) throw std::invalid_argument("forward_backward: empty gold context");
  std::vector<Vec> g_pos(L, Vec(d, 0.0));  // gradient w.r.t. the embedding at context position t
  Vec g_all_ctx(d, 0.0);                   // shared by every context position

  {  // answer type
    const double inv_l = safe_inverse(L);
    const Vec x = added(qv, scaled(embedding_sum(ctx.ids, p), inv_l));
    const auto W = p.group(ParamGroup::type_head);
    const auto b = p.group(ParamGroup::type_bias);
    std::vector<double> logits(3);
    for (std::size_t k = 0; k < 3; ++k) logits[k] = dot(W.subspan(k * d, d), x) + b[k];
    const auto lp = log_softmax(logits);
    const int label = ex.answer.label();
    out.type = type_ce(label, lp);
    if (do_reading) {
      auto gW = grad.group(ParamGroup::type_head);
      auto gb = grad.group(ParamGroup::type_bias);
      Vec g_x(d, 0.0);
      for (std::size_t k = 0; k < 3; ++k) {
        const double g = scale * w.lambda3 * (std::exp(lp[k]) - (static_cast<int>(k) == label ? 1.0 : 0.0));
        axpy(g, x, gW.subspan(k * d, d));
        gb[k] += g;
        axpy(g, W.subspan(k * d, d), g_x);
      }
      axpy(inv_l, g_x, g_all_ctx);
      axpy(safe_inverse(nq), g_x, g_question);
    }
  }

  if (ex.answer.kind == AnswerKind::span) {
    const auto target = make_span_target(s.method, L, *ex.answer.span, s.epsilon);
    for (int which = 0; which < 2; ++which) {
      const auto& h = which == 0 ? kStartHead : kEndHead;
      const auto& tgt = which == 0 ? target.start : target.end;
      const auto lp = log_softmax(span_logits(h, ctx.ids, qv, p));
      const double loss = soft_cross_entropy(tgt, lp);
      (which == 0 ? out.start : out.end) = loss;
      if (!do_reading) continue;
      const auto tok = p.group(h.token);
      const auto prev = p.group(h.prev);
      const auto next = p.group(h.next);
      const double qsim = p.scalar(h.qsim);
      Vec dz(L);
      for (std::size_t t = 0; t < L; ++t) dz[t] = scale * w.lambda4 * (std::exp(lp[t]) - tgt[t]);
      for (std::size_t t = 0; t < L; ++t) {
        const auto e_t = p.embedding(ctx.ids[t]);
        axpy(dz[t], e_t, grad.group(h.token));
        axpy(dz[t], tok, g_pos[t]);
        if (t > 0) {
          const auto e_prev = p.embedding(ctx.ids[t - 1]);
          axpy(dz[t], e_prev, grad.group(h.prev));
          grad.scalar(h.qsim) += dz[t] * dot(qv, e_prev);
          axpy(dz[t], prev, g_pos[t - 1]);
          axpy(dz[t] * qsim, qv, g_pos[t - 1]);
          axpy(dz[t] * qsim * safe_inverse(nq), e_prev, g_question);
        }
        if (t + 1 < L) {
          axpy(dz[t], p.embedding(ctx.ids[t + 1]), grad.group(h.next));
          axpy(dz[t], next, g_pos[t + 1]);
        }
      }
    }
  }

  {  // supporting sentences
    const auto labels = support_labels(ex, ctx, s);
    const auto head = p.group(ParamGroup::support_head);
    const double sim = p.scalar(ParamGroup::support_sim);
    const double J = static_cast<double>(ctx.sentences.size());
    std::vector<double> sup_probs;
    for (std::size_t j = 0; j < ctx.sentences.size(); ++j) {
      const auto& sent = ctx.sentences[j];
      const std::span<const int> ids(ctx.ids.data() + sent.begin, sent.end - sent.begin);
      const double inv_n = safe_inverse(ids.size());
      const Vec msum = embedding_sum(ids, p);
      const Vec m = scaled(msum, inv_n);
      const double qm = dot(qv, msum);
      const double prob = sigmoid(dot(head, m) + sim * qm + p.scalar(ParamGroup::support_bias));
      sup_probs.push_back(prob);
      if (!do_reading) continue;
      const double g = scale * w.lambda5 * (prob - labels[j]) / J;
      axpy(g, m, grad.group(ParamGroup::support_head));
      grad.scalar(ParamGroup::support_bias) += g;
      grad.scalar(ParamGroup::support_sim) += g * qm;
      Vec g_tok(d, 0.0);
      axpy(g * inv_n, head, g_tok);
      axpy(g * sim, qv, g_tok);
      for (std::size_t t = sent.begin; t < sent.end; ++t) axpy(1.0, g_tok, g_pos[t]);
      axpy(g * sim * safe_inverse(nq), msum, g_question);
    }
    out.sup = binary_cross_entropy(labels, sup_probs);
  }

  for (std::size_t t = 0; t < L; ++t) {
    auto row = grad.embedding(ctx.ids[t]);
    axpy(1.0, g_pos[t], row);
    axpy(1.0, g_all_ctx, row);
  }
  for (int id : ex.question) axpy(1.0, g_question, grad.embedding(id));

  out.retrieval_total = retrieval_total(out.retrieve, out.refine, w);
  out.reading_total = reading_total(out.type, out.start, out.end, out.sup, w);
  return out;
}

// ---- inference ----------------------------------------------------------------

struct PipelinePrediction {
  std::string answer;
  AnswerKind type = AnswerKind::span;
  std::optional<Span> span;  // within the selected pair's context
  std::vector<std::size_t> retrieved;
  DocPair pair{0, 0};
  std::set<std::string> docs;     // titles of the selected pair
  std::set<std::string> support;  // support_key(title, sentence)
};

struct InferenceSettings {
  std::size_t k = 3;
  std::size_t max_answer_len = 4;
  double support_threshold = 0.5;
};

/// retrieve -> refine -> read.
inline PipelinePrediction run_pipeline(const EncodedExample& ex, const ToyModelParams& p,
                                       const InferenceSettings& cfg) {
  if (cfg.k < 2) throw std::invalid_argument("run_pipeline: K must be >= 2");
  PipelinePrediction out;
  out.retrieved = select_top_k(retrieve_scores(ex, p).probs, cfg.k);
  if (out.retrieved.size() < 2) throw std::invalid_argument("run_pipeline: fewer than two documents");
  const auto refine = refine_scores(ex, candidate_pairs(out.retrieved), p);
  out.pair = refine.pairs[refine.best()];
  out.docs = {ex.docs[out.pair.first].title, ex.docs[out.pair.second].title};

  const auto ctx = make_context(ex, out.pair);
  const auto read = reader_forward(ex.question, ctx, p);
  const auto type_it = std::max_element(read.type_log_probs.begin(), read.type_log_probs.end());
  out.type = static_cast<AnswerKind>(type_it - read.type_log_probs.begin());
  if (out.type == AnswerKind::span) {
    out.span = decode_span(read.start_logits, read.end_logits, cfg.max_answer_len);
    out.answer = join_tokens(ctx.words, out.span->start(), out.span->end() + 1);
  } else {
    out.answer = to_string(out.type);
  }
  for (std::size_t j = 0; j < ctx.sentences.size(); ++j) {
    if (read.support_probs[j] > cfg.support_threshold) {
      const auto& sent = ctx.sentences[j];
      out.support.insert(support_key(ex.docs[sent.doc].title, sent.index));
    }
  }
  return out;
}

inline GoldRecord gold_record(const EncodedExample& ex) {
  GoldRecord g;
  g.answer = ex.answer_text;
  for (std::size_t i = 0; i < ex.docs.size(); ++i) {
    if (ex.gold_doc_flags[i]) g.docs.insert(ex.docs[i].title);
    for (std::size_t s = 0; s < ex.supporting_flags[i].size(); ++s) {
      if (ex.supporting_flags[i][s]) g.support.insert(support_key(ex.docs[i].title, s));
    }
  }
  return g;
}

inline MetricsReport evaluate(const std::vector<EncodedExample>& data, const ToyModelParams& p,
                              const InferenceSettings& cfg) {
  MetricsAccumulator acc;
  for (const auto& ex : data) {
    const auto pred = run_pipeline(ex, p, cfg);
    acc.add({pred.answer, pred.docs, pred.support}, gold_record(ex));
  }
  return acc.report();
}

// ---- training -----------------------------------------------------------------

struct TrainConfig {
  std::uint64_t seed = 41;
  std::size_t epochs = 16;
  std::size_t batch_size = 16;
  double learning_rate = 0.5;
  double weight_decay = 1e-2;
  std::size_t k = 3;
  SmoothingKind method = SmoothingKind::f1;
  ScheduleConfig schedule{ScheduleKind::linear_decay, 0.1, 0.01, 4, 16};
  bool smooth_binary = false;
  LossWeights loss_weights;
  std::size_t max_answer_len = 4;
  std::size_t dim = 32;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (k < 2) throw std::invalid_argument("train: K must be >= 2");
    if (max_answer_len < 1) throw std::invalid_argument("train: max_answer_len must be >= 1");
    if (dim < 1) throw std::invalid_argument("train: dim must be >= 1");
    if (!(learning_rate > 0.0) || !(weight_decay >= 0.0)) {
      throw std::invalid_argument("train: learning_rate must be > 0 and weight_decay >= 0");
    }
    loss_weights.validate();
    schedule_for_run().validate();
  }

  /// The schedule with its horizon tied to the run length.
  ScheduleConfig schedule_for_run() const {
    ScheduleConfig s = schedule;
    s.n_epochs = epochs;
    return s;
  }

  InferenceSettings inference() const { return {k, max_answer_len, 0.5}; }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double epsilon = 0.0;
  double loss_retrieve = 0.0;
  double loss_refine = 0.0;
  double loss_type = 0.0;
  double loss_span = 0.0;  // start + end, averaged over span-typed examples
  double loss_sup = 0.0;
  MetricsReport dev;
  std::size_t refine_skipped = 0;
};

inline nlohmann::ordered_json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"epsilon", r.epsilon},
          {"loss_retrieve", r.loss_retrieve},
          {"loss_refine", r.loss_refine},
          {"loss_type", r.loss_type},
          {"loss_span", r.loss_span},
          {"loss_sup", r.loss_sup},
          {"dev_answer_em", r.dev.answer_em},
          {"dev_answer_f1", r.dev.answer_f1},
          {"dev_sup_em", r.dev.sup_em},
          {"dev_sup_f1", r.dev.sup_f1},
          {"dev_doc_em", r.dev.doc_em},
          {"dev_doc_f1", r.dev.doc_f1}};
}

struct TrainResult {
  Vocabulary vocab;
  ToyModelParams params;
  std::vector<EpochRecord> log;
};

inline std::vector<EncodedExample> encode_all(const std::vector<Example>& data, const Vocabulary& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(encode_example(ex, vocab));
  return out;
}

/// One update: p <- p - lr * (grad + weight_decay * p).
inline void sgd_step(ToyModelParams& p, const ToyModelParams& grad, double lr, double weight_decay) {
  auto& v = p.values();
  const auto& g = grad.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * (g[i] + weight_decay * v[i]);
}

/// Minibatch gradient descent with decoupled weight decay. The smoothing
/// weight for epoch i comes from the schedule; `on_epoch` sees each record as
/// soon as it is complete. Throws DivergenceError on a non-finite loss or
/// logit.
inline TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& dev_set,
                         const TrainConfig& config,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& ex : train_set) validate(ex);
  for (const auto& ex : dev_set) validate(ex);
  auto vocab = Vocabulary::build(train_set);
  const auto train_enc = encode_all(train_set, vocab);
  const auto dev_enc = encode_all(dev_set, vocab);
  for (const auto& ex : train_enc) (void)ex.gold_pair();

  TrainResult result{vocab, initialize_params(vocab.size(), config.dim, config.seed), {}};
  ToyModelParams grad(vocab.size(), config.dim);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto schedule = config.schedule_for_run();

  std::vector<std::size_t> order(train_enc.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.epsilon = epsilon_at(schedule, epoch);
    StepSettings step{config.method, rec.epsilon, config.smooth_binary, config.loss_weights, config.k,
                      Objective::both};

    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::size_t n_refine = 0, n_span = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t e = std::min(order.size(), b + config.batch_size);
      grad.set_zero();
      const double scale = 1.0 / static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto& ex = train_enc[order[i]];
        LossBreakdown loss;
        try {
          loss = forward_backward(result.params, ex, step, grad, scale);
        } catch (const std::invalid_argument& e) {
          // inputs were validated above, so this is overflow in the model
          throw DivergenceError("non-finite logits at epoch " + std::to_string(epoch) + " on example " + ex.id +
                                " (" + e.what() + ")");
        }
        if (!loss.finite()) {
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " on example " + ex.id);
        }
        rec.loss_retrieve += loss.retrieve;
        rec.loss_type += loss.type;
        rec.loss_sup += loss.sup;
        if (loss.refine_skipped) {
          ++rec.refine_skipped;
        } else {
          rec.loss_refine += loss.refine;
          ++n_refine;
        }
        if (ex.answer.kind == AnswerKind::span) {
          rec.loss_span += loss.start + loss.end;
          ++n_span;
        }
      }
      sgd_step(result.params, grad, config.learning_rate, config.weight_decay);
    }
    if (!result.params.all_finite()) {
      throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch));
    }
    const double n = static_cast<double>(train_enc.size());
    rec.loss_retrieve /= n;
    rec.loss_type /= n;
    rec.loss_sup /= n;
    rec.loss_refine = n_refine ? rec.loss_refine / static_cast<double>(n_refine) : 0.0;
    rec.loss_span = n_span ? rec.loss_span / static_cast<double>(n_span) : 0.0;
    if (!dev_enc.empty()) rec.dev = evaluate(dev_enc, result.params, config.inference());
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace r3
