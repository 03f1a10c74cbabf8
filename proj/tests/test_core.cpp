#include <gtest/gtest.h>

#include "r3/core.hpp"

using namespace r3;

TEST(Span, RejectsInvertedBounds) {
  EXPECT_THROW(Span(3, 2), std::invalid_argument);
  EXPECT_NO_THROW(Span(2, 2));
}

TEST(Span, LengthAndReversal) {
  const Span s(1, 3);
  EXPECT_EQ(s.length(), 3u);
  EXPECT_EQ(s.reversed(6), Span(2, 4));
  EXPECT_EQ(s.reversed(6).reversed(6), s);
  EXPECT_THROW(Span(2, 6).reversed(6), std::out_of_range);
}

TEST(SpanF1, OverlapCases) {
  EXPECT_DOUBLE_EQ(span_f1(Span(1, 2), Span(1, 2)), 1.0);
  EXPECT_DOUBLE_EQ(span_f1(Span(0, 0), Span(1, 2)), 0.0);
  // one shared token, lengths 2 and 2
  EXPECT_DOUBLE_EQ(span_f1(Span(0, 1), Span(1, 2)), 0.5);
  // contained: overlap 2, lengths 4 and 2
  EXPECT_DOUBLE_EQ(span_f1(Span(0, 3), Span(1, 2)), 2.0 * 2 / 6);
  EXPECT_DOUBLE_EQ(span_f1(Span(0, 3), Span(1, 2)), span_f1(Span(1, 2), Span(0, 3)));
}

TEST(Distribution, Validation) {
  EXPECT_THROW(Distribution({}), std::invalid_argument);
  EXPECT_THROW(Distribution({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(Distribution({1.5, -0.5}), std::invalid_argument);
  EXPECT_NO_THROW(Distribution({0.25, 0.75}));
  EXPECT_NO_THROW(Distribution({0.5, 0.5 + 5e-10}));
}

TEST(Distribution, OneHotAndMix) {
  const auto a = Distribution::one_hot(4, 2);
  EXPECT_EQ(a.vector(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_THROW(Distribution::one_hot(4, 4), std::out_of_range);
  const auto u = Distribution({0.25, 0.25, 0.25, 0.25});
  const auto m = a.mix(u, 0.2);
  EXPECT_DOUBLE_EQ(m[2], 0.8 + 0.05);
  EXPECT_DOUBLE_EQ(m[0], 0.05);
  EXPECT_THROW(a.mix(u, 1.5), std::invalid_argument);
  EXPECT_THROW(a.mix(Distribution::one_hot(3, 0), 0.1), std::invalid_argument);
}

TEST(RawScoreVector, RejectsNegativeAndNonFinite) {
  EXPECT_THROW(RawScoreVector({1.0, -0.1}), std::invalid_argument);
  EXPECT_THROW(RawScoreVector({std::nan("")}), std::invalid_argument);
  EXPECT_NO_THROW(RawScoreVector({0.0, 3.0}));
}

TEST(AnswerKind, LabelsAndNames) {
  EXPECT_EQ(GoldAnswer::no().label(), 0);
  EXPECT_EQ(GoldAnswer::yes().label(), 1);
  EXPECT_EQ(GoldAnswer::of_span(Span(0, 1)).label(), 2);
  for (auto k : {AnswerKind::no, AnswerKind::yes, AnswerKind::span}) {
    EXPECT_EQ(answer_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(answer_kind_from_string("maybe"), std::invalid_argument);
}

namespace {

Example two_doc_example() {
  Example ex;
  ex.id = "x";
  ex.question = {"who", "is", "it"};
  ex.documents = {{"A", {{"a", "b"}, {"c"}}}, {"B", {{"d"}}}, {"C", {{"e", "f", "g"}}}};
  ex.gold_doc_flags = {1, 0, 1};
  ex.supporting_flags = {{1, 0}, {0}, {0}};
  ex.answer = GoldAnswer::of_span(Span(3, 4));  // "e f" in A + C
  ex.answer_text = "e f";
  return ex;
}

}  // namespace

TEST(Example, GoldContextIndexing) {
  const auto ex = two_doc_example();
  EXPECT_EQ(ex.gold_doc_indices(), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(ex.gold_context_length(), 6u);
  EXPECT_NO_THROW(validate(ex));
}

TEST(Example, ValidateCatchesShapeErrors) {
  auto ex = two_doc_example();
  ex.answer = GoldAnswer::of_span(Span(5, 6));
  EXPECT_THROW(validate(ex), std::invalid_argument);

  ex = two_doc_example();
  ex.gold_doc_flags = {1, 0, 0};
  EXPECT_THROW(validate(ex), std::invalid_argument);

  ex = two_doc_example();
  ex.supporting_flags = {{1}, {0}, {0}};
  EXPECT_THROW(validate(ex), std::invalid_argument);
}
