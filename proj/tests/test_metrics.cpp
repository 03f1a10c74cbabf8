#include <gtest/gtest.h>

#include "r3/metrics.hpp"

using namespace r3;

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize_answer("The Fairfax County"), "fairfax county");
  EXPECT_EQ(normalize_answer("four times."), "four times");
  EXPECT_EQ(normalize_answer("a  b"), "b");
  EXPECT_EQ(normalize_answer("  An   apple, the pie! "), "apple pie");
}

TEST(AnswerF1, Examples) {
  const auto same = answer_f1("Fairfax County", "Fairfax County");
  EXPECT_EQ(same.f1, 1.0);
  EXPECT_EQ(same.precision, 1.0);
  const auto q = answer_f1("four times", "four");
  EXPECT_EQ(q.f1, 2.0 / 3.0);
  EXPECT_EQ(q.precision, 0.5);
  EXPECT_EQ(q.recall, 1.0);
  EXPECT_EQ(answer_f1("", "four").f1, 0.0);
  EXPECT_EQ(answer_f1("yes", "yes").f1, 1.0);
  EXPECT_EQ(answer_f1("yes no", "yes").f1, 0.0);
}

TEST(AnswerF1, SymmetricAndBounded) {
  const char* words[] = {"four", "times", "the", "county", "of", "fairfax", "four"};
  for (int a = 0; a < 64; ++a) {
    for (int b = 1; b < 64; b += 3) {
      std::string x, y;
      for (int i = 0; i < 7; ++i) {
        if (a >> (i % 6) & 1) x += std::string(words[i]) + " ";
        if (b >> (i % 6) & 1) y += std::string(words[i]) + " ";
      }
      const double f = answer_f1(x, y).f1;
      ASSERT_GE(f, 0.0);
      ASSERT_LE(f, 1.0);
      ASSERT_DOUBLE_EQ(f, answer_f1(y, x).f1);
      // two empty answers are an exact match with F1 0, as in the reference scorer
      if (answer_em(x, y) && !normalize_answer(x).empty()) {
        ASSERT_EQ(f, 1.0);
      }
    }
  }
}

TEST(SetScores, Examples) {
  EXPECT_EQ(set_em_f1<std::string>({"A", "B"}, {"A", "B"}).em, 1.0);
  const auto s = set_em_f1<std::string>({"A", "B", "C"}, {"A", "B"});
  EXPECT_EQ(s.em, 0.0);
  EXPECT_NEAR(s.f1, 0.8, 1e-15);
  EXPECT_EQ(set_em_f1<std::string>({"A"}, {"B"}).f1, 0.0);
  EXPECT_EQ(set_em_f1<std::string>({}, {"B"}).f1, 0.0);
}

TEST(ErrorTaxonomy, Examples) {
  EXPECT_EQ(classify_error("four times", "four"), ErrorCategory::answer_span_error);
  EXPECT_EQ(classify_error("fairfax county", "fairfax county"), ErrorCategory::correct);
  EXPECT_EQ(classify_error("arlington", "fairfax county"), ErrorCategory::multihop_error);
  // shared stop words alone do not make a span error
  EXPECT_EQ(classify_error("city of arlington", "county of fairfax"), ErrorCategory::multihop_error);
  EXPECT_EQ(classify_error("no", "yes"), ErrorCategory::multihop_error);
}

TEST(Accumulator, PerfectAndMixed) {
  MetricsAccumulator acc;
  acc.add({"four", {"A", "B"}, {"A#0", "B#1"}}, {"four", {"A", "B"}, {"A#0", "B#1"}});
  acc.add({"four times", {"A", "C"}, {"A#0"}}, {"four", {"A", "B"}, {"A#0", "B#1"}});
  acc.add({"arlington", {"A", "B"}, {}}, {"fairfax", {"A", "B"}, {"A#0"}});
  const auto r = acc.report();
  EXPECT_EQ(r.n_examples, 3u);
  EXPECT_NEAR(r.answer_em, 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.answer_f1, (1.0 + 2.0 / 3 + 0.0) / 3, 1e-15);
  EXPECT_NEAR(r.doc_em, 2.0 / 3, 1e-15);
  EXPECT_NEAR(r.doc_f1, (1.0 + 0.5 + 1.0) / 3, 1e-15);
  EXPECT_NEAR(r.sup_f1, (1.0 + 2.0 / 3) / 3, 1e-15);
  EXPECT_EQ(r.answer_span_errors, 1u);
  EXPECT_EQ(r.multihop_errors, 1u);
  EXPECT_EQ(MetricsAccumulator{}.report().answer_f1, 0.0);
}

TEST(Report, JsonFieldNames) {
  nlohmann::ordered_json j;
  to_json(j, MetricsReport{});
  std::vector<std::string> keys;
  for (const auto& item : j.items()) keys.push_back(item.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"answer_em", "answer_f1", "doc_em", "doc_f1", "sup_em", "sup_f1",
                                            "n_examples", "answer_span_errors", "multihop_errors"}));
  EXPECT_EQ(support_key("Title", 3), "Title#3");
}
