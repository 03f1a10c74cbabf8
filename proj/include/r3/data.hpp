#pragma once

// Dataset ingestion and generation.
//
// Real data comes in the public distractor-setting JSON schema and is mapped
// onto Example; span answers are aligned to the first occurrence inside the
// gold documents, and examples that cannot be aligned are skipped, never
// guessed. The synthetic generator plants a two-hop chain and exposes two
// noise knobs: train-only annotation drift (one extra trailing quantifier
// token) and an answer copy planted in a non-gold document.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "r3/core.hpp"

namespace r3 {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercase, split on whitespace, trim punctuation at both ends of each token.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t a = i, b = j;
    while (a < b && std::ispunct(static_cast<unsigned char>(text[a]))) ++a;
    while (b > a && std::ispunct(static_cast<unsigned char>(text[b - 1]))) --b;
    if (a < b) {
      std::string tok(text.substr(a, b - a));
      for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

inline std::string join_tokens(const Tokens& tokens, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline std::string join_tokens(const Tokens& tokens) { return join_tokens(tokens, 0, tokens.size()); }

/// Earliest contiguous occurrence of `answer` in `context`.
inline std::optional<Span> align_answer(const Tokens& answer, const Tokens& context) {
  if (answer.empty() || answer.size() > context.size()) return std::nullopt;
  auto it = std::search(context.begin(), context.end(), answer.begin(), answer.end());
  if (it == context.end()) return std::nullopt;
  const auto start = static_cast<std::size_t>(it - context.begin());
  return Span(start, start + answer.size() - 1);
}

/// Tokens of the gold documents in document order; the frame of answer spans.
inline Tokens gold_context(const Example& ex) {
  Tokens out;
  for (auto d : ex.gold_doc_indices()) {
    auto flat = ex.documents[d].flat_tokens();
    out.insert(out.end(), flat.begin(), flat.end());
  }
  return out;
}

struct SkippedRecord {
  std::string id;
  std::string reason;
};

struct ParseResult {
  std::vector<Example> examples;
  std::vector<SkippedRecord> skipped;
};

namespace detail {

template <typename Json>
const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParseError(where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

inline std::string trim_lower(std::string_view s) {
  std::string out;
  for (unsigned char c : s) out.push_back(static_cast<char>(std::tolower(c)));
  const auto b = out.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = out.find_last_not_of(" \t\r\n");
  return out.substr(b, e - b + 1);
}

}  // namespace detail

/// Parses a HotpotQA distractor-setting JSON array.
///
/// Throws ParseError on malformed JSON, missing fields, or a supporting fact
/// whose title is not in the record's context. Records with an out-of-range
/// supporting sentence index, a gold-document count other than two, or a
/// span answer that does not occur in the gold documents are skipped and
/// reported.
inline ParseResult parse_hotpot_json(std::string_view contents) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(contents);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!root.is_array()) throw ParseError("expected a JSON array of records");

  ParseResult result;
  for (std::size_t r = 0; r < root.size(); ++r) {
    const auto& rec = root[r];
    const std::string where = "record " + std::to_string(r);
    Example ex;
    try {
      ex.id = detail::require(rec, "_id", where).get<std::string>();
      const auto& context = detail::require(rec, "context", where);
      const auto& facts = detail::require(rec, "supporting_facts", where);
      ex.question = tokenize(detail::require(rec, "question", where).get<std::string>());
      const auto answer = detail::require(rec, "answer", where).get<std::string>();

      for (const auto& entry : context) {
        if (!entry.is_array() || entry.size() != 2) throw ParseError(where + ": bad context entry");
        Document doc;
        doc.title = entry[0].get<std::string>();
        for (const auto& sentence : entry[1]) doc.sentences.push_back(tokenize(sentence.get<std::string>()));
        ex.documents.push_back(std::move(doc));
      }
      ex.gold_doc_flags.assign(ex.documents.size(), 0);
      ex.supporting_flags.resize(ex.documents.size());
      for (std::size_t d = 0; d < ex.documents.size(); ++d) {
        ex.supporting_flags[d].assign(ex.documents[d].sentences.size(), 0);
      }

      bool bad_index = false;
      for (const auto& fact : facts) {
        if (!fact.is_array() || fact.size() != 2) throw ParseError(where + ": bad supporting fact");
        const auto title = fact[0].get<std::string>();
        const auto sent = fact[1].get<long long>();
        auto it = std::find_if(ex.documents.begin(), ex.documents.end(),
                               [&](const Document& d) { return d.title == title; });
        if (it == ex.documents.end()) {
          throw ParseError(where + " (" + ex.id + "): supporting-fact title '" + title +
                           "' not in context");
        }
        const auto d = static_cast<std::size_t>(it - ex.documents.begin());
        ex.gold_doc_flags[d] = 1;
        if (sent < 0 || static_cast<std::size_t>(sent) >= it->sentences.size()) {
          bad_index = true;
          continue;
        }
        ex.supporting_flags[d][static_cast<std::size_t>(sent)] = 1;
      }
      if (bad_index) {
        result.skipped.push_back({ex.id, "bad_support_index"});
        continue;
      }
      if (ex.gold_doc_indices().size() != 2) {
        result.skipped.push_back({ex.id, "gold_doc_count"});
        continue;
      }

      const auto kind = detail::trim_lower(answer);
      if (kind == "yes") {
        ex.answer = GoldAnswer::yes();
        ex.answer_text = "yes";
      } else if (kind == "no") {
        ex.answer = GoldAnswer::no();
        ex.answer_text = "no";
      } else {
        const auto span = align_answer(tokenize(answer), gold_context(ex));
        if (!span) {
          result.skipped.push_back({ex.id, "unalignable"});
          continue;
        }
        ex.answer = GoldAnswer::of_span(*span);
        ex.answer_text = answer;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
    result.examples.push_back(std::move(ex));
  }
  return result;
}

inline ParseResult load_hotpot_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_hotpot_json(buf.str());
}

// ---- internal JSON-lines serialization --------------------------------------

inline nlohmann::ordered_json to_json(const Example& ex) {
  nlohmann::ordered_json docs = nlohmann::ordered_json::array();
  for (const auto& d : ex.documents) {
    docs.push_back({{"title", d.title}, {"sentences", d.sentences}});
  }
  nlohmann::ordered_json answer = {{"kind", to_string(ex.answer.kind)}};
  if (ex.answer.span) {
    answer["span"] = {{"start", ex.answer.span->start()}, {"end", ex.answer.span->end()}};
  } else {
    answer["span"] = nullptr;
  }
  return {{"id", ex.id},
          {"question", ex.question},
          {"documents", std::move(docs)},
          {"gold_doc_flags", ex.gold_doc_flags},
          {"supporting_flags", ex.supporting_flags},
          {"answer", std::move(answer)},
          {"answer_text", ex.answer_text}};
}

inline Example example_from_json(const nlohmann::json& j) {
  try {
    Example ex;
    ex.id = j.at("id").get<std::string>();
    ex.question = j.at("question").get<Tokens>();
    for (const auto& d : j.at("documents")) {
      ex.documents.push_back({d.at("title").get<std::string>(),
                              d.at("sentences").get<std::vector<Tokens>>()});
    }
    ex.gold_doc_flags = j.at("gold_doc_flags").get<std::vector<int>>();
    ex.supporting_flags = j.at("supporting_flags").get<std::vector<std::vector<int>>>();
    const auto& a = j.at("answer");
    ex.answer.kind = answer_kind_from_string(a.at("kind").get<std::string>());
    if (a.contains("span") && !a.at("span").is_null()) {
      ex.answer.span = Span(a.at("span").at("start").get<std::size_t>(),
                            a.at("span").at("end").get<std::size_t>());
    }
    ex.answer_text = j.at("answer_text").get<std::string>();
    validate(ex, 0);
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad example record: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("bad example record: ") + e.what());
  }
}

inline void write_jsonl(std::ostream& os, const std::vector<Example>& examples) {
  for (const auto& ex : examples) os << to_json(ex).dump() << '\n';
}

inline std::vector<Example> read_jsonl(std::istream& is) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

/// Reads either the HotpotQA array format or internal JSON-lines, by sniffing
/// the first non-space character.
inline std::vector<Example> load_examples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') return parse_hotpot_json(text).examples;
  std::istringstream lines(text);
  return read_jsonl(lines);
}

// ---- synthetic generator ---------------------------------------------------

struct SyntheticConfig {
  std::size_t n_examples = 2000;  // train
  std::size_t n_dev = 500;
  std::size_t vocab_size = 1200;
  std::size_t docs_per_example = 10;
  std::size_t sentences_per_doc = 3;
  std::size_t tokens_per_sentence = 8;
  std::size_t max_answer_tokens = 3;
  double quantifier_noise_p = 0.0;
  double alt_path_p = 0.0;
  double yes_no_p = 0.1;
  std::uint64_t seed = 7;
};

struct SyntheticLexicon {
  static constexpr std::array<std::string_view, 3> kWh = {"what", "which", "who"};
  static constexpr std::array<std::string_view, 3> kYesNoWords = {"is", "was", "did"};
  static constexpr std::array<std::string_view, 8> kQuantifiers = {
      "times", "years", "miles", "acres", "votes", "goals", "points", "meters"};
  static constexpr std::string_view kYesCue = "indeed";
  static constexpr std::string_view kNoCue = "never";
  static constexpr std::size_t kRelations = 12;
  // wh + yes/no words + quantifiers + cues + "of" + "the" + relations
  static constexpr std::size_t kReserved = 3 + 3 + 8 + 2 + 2 + kRelations;

  std::vector<std::string> relations;
  std::vector<std::string> entities;
  std::vector<std::string> fillers;

  explicit SyntheticLexicon(std::size_t vocab_size) {
    if (vocab_size < kReserved + 64) {
      throw std::invalid_argument("synthetic: vocab_size must be at least " +
                                  std::to_string(kReserved + 64));
    }
    for (std::size_t i = 0; i < kRelations; ++i) relations.push_back("rel" + std::to_string(i));
    const std::size_t open = vocab_size - kReserved;
    const std::size_t n_entities = open * 3 / 5;
    for (std::size_t i = 0; i < n_entities; ++i) entities.push_back("ent" + std::to_string(i));
    for (std::size_t i = 0; i < open - n_entities; ++i) fillers.push_back("w" + std::to_string(i));
  }
};

inline bool is_quantifier_token(std::string_view tok) {
  const auto& q = SyntheticLexicon::kQuantifiers;
  return std::find(q.begin(), q.end(), tok) != q.end();
}

namespace detail {

struct PlantedDocument {
  Document doc;
  int gold = 0;
  std::vector<int> support;
  std::size_t pattern_sentence = 0;
  std::size_t pattern_offset = 0;  // token offset of the pattern inside its sentence
};

class SyntheticBuilder {
 public:
  SyntheticBuilder(const SyntheticConfig& config, const SyntheticLexicon& lex)
      : cfg_(config), lex_(lex), rng_(config.seed) {}

  Example make(const std::string& id, bool is_train) {
    const std::size_t S = cfg_.sentences_per_doc;
    const std::size_t M = cfg_.docs_per_example;

    std::vector<std::string> used;
    const auto topic = fresh_entity(used);
    const auto bridge = fresh_entity(used);
    const std::string rel = pick(lex_.relations);
    const bool yes_no = bernoulli(cfg_.yes_no_p);
    const bool answer_yes = bernoulli(0.5);

    Tokens answer;
    const std::size_t n_answer = uniform(1, cfg_.max_answer_tokens);
    for (std::size_t i = 0; i < n_answer; ++i) answer.push_back(fresh_entity(used));
    const std::string quant = pick(SyntheticLexicon::kQuantifiers);

    Example ex;
    ex.id = id;
    ex.question = {yes_no ? pick(SyntheticLexicon::kYesNoWords) : pick(SyntheticLexicon::kWh),
                   "the", rel, "of", topic};

    // Hop 1: topic --rel'--> bridge. Hop 2: bridge --rel--> answer.
    const Tokens hop1 = {topic, other_relation(rel), bridge};
    Tokens hop2 = {bridge, rel};
    if (yes_no) {
      hop2.emplace_back(answer_yes ? SyntheticLexicon::kYesCue : SyntheticLexicon::kNoCue);
    } else {
      hop2.insert(hop2.end(), answer.begin(), answer.end());
      hop2.push_back(quant);
    }

    std::vector<PlantedDocument> docs;
    docs.push_back(gold_doc(topic, hop1, rel, used));
    docs.push_back(gold_doc(bridge, hop2, rel, used));

    for (std::size_t k = 2; k < M; ++k) {
      PlantedDocument p;
      p.doc.title = fresh_entity(used);
      p.support.assign(S, 0);
      for (std::size_t s = 0; s < S; ++s) {
        if (bernoulli(0.5)) {
          const auto subject = bernoulli(0.3) ? topic : fresh_entity(used);
          p.doc.sentences.push_back(decoy_sentence(subject, rel, used));
        } else {
          p.doc.sentences.push_back(filler_sentence());
        }
      }
      docs.push_back(std::move(p));
    }
    if (!yes_no && bernoulli(cfg_.alt_path_p)) {
      // An unannotated path: a distractor states the final hop from the topic.
      auto& target = docs[2 + uniform(0, M - 3)];
      Tokens alt = {topic, rel};
      alt.insert(alt.end(), answer.begin(), answer.end());
      alt.push_back(quant);
      target.doc.sentences[uniform(0, S - 1)] = place(alt, nullptr);
    }

    std::vector<std::size_t> order(M);
    for (std::size_t i = 0; i < M; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng_);
    for (auto k : order) {
      ex.documents.push_back(docs[k].doc);
      ex.gold_doc_flags.push_back(docs[k].gold);
      ex.supporting_flags.push_back(docs[k].support);
    }

    if (yes_no) {
      ex.answer = answer_yes ? GoldAnswer::yes() : GoldAnswer::no();
      ex.answer_text = answer_yes ? "yes" : "no";
      return ex;
    }

    // Answer offset inside the gold context (gold documents in document order).
    std::size_t offset = 0;
    for (auto k : order) {
      if (k == 1) break;
      if (docs[k].gold) offset += docs[k].doc.token_count();
    }
    const auto& hop2_doc = docs[1];
    for (std::size_t s = 0; s < hop2_doc.pattern_sentence; ++s) {
      offset += hop2_doc.doc.sentences[s].size();
    }
    offset += hop2_doc.pattern_offset + 2;  // skip "bridge rel"

    std::size_t end = offset + n_answer - 1;
    Tokens annotated = answer;
    if (is_train && bernoulli(cfg_.quantifier_noise_p)) {
      ++end;
      annotated.push_back(quant);
    }
    ex.answer = GoldAnswer::of_span(Span(offset, end));
    ex.answer_text = join_tokens(annotated);
    return ex;
  }

 private:
  PlantedDocument gold_doc(const std::string& title, const Tokens& pattern,
                           const std::string& question_rel, std::vector<std::string>& used) {
    const std::size_t S = cfg_.sentences_per_doc;
    PlantedDocument p;
    p.doc.title = title;
    p.gold = 1;
    p.support.assign(S, 0);
    p.pattern_sentence = uniform(0, S - 1);
    for (std::size_t s = 0; s < S; ++s) {
      if (s == p.pattern_sentence) {
        p.doc.sentences.push_back(place(pattern, &p.pattern_offset));
        p.support[s] = 1;
      } else if (bernoulli(0.6)) {
        p.doc.sentences.push_back(decoy_sentence(fresh_entity(used), question_rel, used));
      } else {
        p.doc.sentences.push_back(filler_sentence());
      }
    }
    return p;
  }

  Tokens filler_sentence() {
    Tokens s;
    for (std::size_t i = 0; i < cfg_.tokens_per_sentence; ++i) s.push_back(pick(lex_.fillers));
    return s;
  }

  Tokens place(const Tokens& pattern, std::size_t* offset_out) {
    const std::size_t off = uniform(0, cfg_.tokens_per_sentence - pattern.size());
    Tokens s = filler_sentence();
    std::copy(pattern.begin(), pattern.end(), s.begin() + static_cast<std::ptrdiff_t>(off));
    if (offset_out) *offset_out = off;
    return s;
  }

  // "subject rel' objects... quantifier", rel' differing from the question's relation.
  Tokens decoy_sentence(const std::string& subject, const std::string& question_rel,
                        std::vector<std::string>& used) {
    Tokens pattern = {subject, other_relation(question_rel)};
    const std::size_t n = uniform(1, cfg_.max_answer_tokens);
    for (std::size_t i = 0; i < n; ++i) pattern.push_back(fresh_entity(used));
    pattern.push_back(pick(SyntheticLexicon::kQuantifiers));
    return place(pattern, nullptr);
  }

  std::string other_relation(const std::string& rel) {
    for (;;) {
      auto r = pick(lex_.relations);
      if (r != rel) return r;
    }
  }

  std::string fresh_entity(std::vector<std::string>& used) {
    for (;;) {
      auto e = pick(lex_.entities);
      if (std::find(used.begin(), used.end(), e) == used.end()) {
        used.push_back(e);
        return e;
      }
    }
  }

  template <typename Container>
  std::string pick(const Container& c) {
    return std::string(c[uniform(0, c.size() - 1)]);
  }

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  bool bernoulli(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }

  const SyntheticConfig& cfg_;
  const SyntheticLexicon& lex_;
  std::mt19937_64 rng_;
};

}  // namespace detail

struct SyntheticDataset {
  std::vector<Example> train;
  std::vector<Example> dev;
};

inline void validate(const SyntheticConfig& c) {
  for (double p : {c.quantifier_noise_p, c.alt_path_p, c.yes_no_p}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("synthetic: probabilities must lie in [0,1]");
  }
  if (c.docs_per_example < 3) {
    throw std::invalid_argument("synthetic: docs_per_example must be >= 3 (two gold plus a distractor)");
  }
  if (c.sentences_per_doc < 1) throw std::invalid_argument("synthetic: sentences_per_doc must be >= 1");
  if (c.max_answer_tokens < 1) throw std::invalid_argument("synthetic: max_answer_tokens must be >= 1");
  // Longest planted pattern: subject, relation, answer tokens, quantifier.
  if (c.max_answer_tokens + 3 > c.tokens_per_sentence) {
    throw std::invalid_argument("synthetic: answer longer than a sentence can hold");
  }
}

inline SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  validate(config);
  const SyntheticLexicon lex(config.vocab_size);
  // Each example draws at most 2 + max_answer + 3 * docs * (1 + max_answer) entities.
  const std::size_t per_example =
      3 + config.max_answer_tokens +
      config.docs_per_example * (1 + config.sentences_per_doc * (1 + config.max_answer_tokens));
  if (lex.entities.size() < 2 * per_example) {
    throw std::invalid_argument("synthetic: vocab_size too small for the requested document shape");
  }
  detail::SyntheticBuilder builder(config, lex);
  SyntheticDataset out;
  out.train.reserve(config.n_examples);
  out.dev.reserve(config.n_dev);
  for (std::size_t i = 0; i < config.n_examples + config.n_dev; ++i) {
    const bool train = i < config.n_examples;
    const auto id = (train ? "train-" : "dev-") + std::to_string(train ? i : i - config.n_examples);
    (train ? out.train : out.dev).push_back(builder.make(id, train));
  }
  return out;
}

}  // namespace r3
