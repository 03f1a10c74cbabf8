#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "r3/cli.hpp"

namespace fs = std::filesystem;
using r3::cli::run_cli;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "r3smooth");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path kGolden = fs::path(R3_SOURCE_DIR) / "tests" / "golden";
const fs::path kSample = fs::path(R3_SOURCE_DIR) / "data" / "hotpot_sample.json";

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(R3_TEST_TMP) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(CliSmooth, GoldenFiles) {
  auto r = run({"smooth", "--length", "4", "--gold-start", "1", "--gold-end", "2", "--method", "f1", "--epsilon", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, slurp(kGolden / "smooth_f1_L4_1_2_eps1.csv"));
  r = run({"smooth", "--length", "6", "--gold-start", "2", "--gold-end", "3", "--method", "word_overlap",
           "--epsilon", "0.1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, slurp(kGolden / "smooth_word_overlap_L6_2_3.csv"));
}

TEST(CliSmooth, ZeroEpsilonTargetsAreOneHot) {
  for (std::string method : {"uniform", "word_overlap", "f1"}) {
    const auto r = run({"smooth", "--length", "5", "--gold-start", "1", "--gold-end", "3", "--method", method,
                        "--epsilon", "0"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = lines(r.out);
    ASSERT_EQ(rows.size(), 7u);
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<std::string> cells;
      std::istringstream row(rows[i + 2]);
      for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
      ASSERT_EQ(cells.size(), 7u);
      EXPECT_EQ(cells[5], i == 1 ? "1.000000000" : "0.000000000") << method << " row " << i;
      EXPECT_EQ(cells[6], i == 3 ? "1.000000000" : "0.000000000") << method << " row " << i;
    }
  }
}

TEST(CliSmooth, WritesFileWithConfigLine) {
  const auto dir = scratch("smooth");
  const auto r = run({"smooth", "--length", "3", "--gold-start", "0", "--gold-end", "0", "--out",
                      (dir / "d.csv").string()});
  ASSERT_EQ(r.code, 0);
  const auto text = slurp(dir / "d.csv");
  EXPECT_EQ(text.rfind("# config: {", 0), 0u);
  EXPECT_NE(text.find("\"method\":\"f1\""), std::string::npos);
}

TEST(CliSmooth, ValidationExitCodes) {
  EXPECT_EQ(run({"smooth", "--length", "4", "--gold-start", "1", "--gold-end", "4"}).code, 2);
  EXPECT_EQ(run({"smooth", "--length", "4", "--gold-start", "3", "--gold-end", "2"}).code, 2);
  EXPECT_EQ(run({"smooth", "--length", "0", "--gold-start", "0", "--gold-end", "0"}).code, 2);
  EXPECT_EQ(run({"smooth", "--length", "4", "--gold-start", "1", "--gold-end", "2", "--epsilon", "2"}).code, 2);
  EXPECT_EQ(run({"smooth", "--length", "4", "--gold-start", "1", "--gold-end", "2", "--method", "cosine"}).code, 2);
  EXPECT_EQ(run({"smooth", "--length", "4", "--gold-start", "1", "--gold-end", "2", "--bogus", "1"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(CliSchedule, GoldenFiles) {
  auto r = run({"schedule", "--kind", "linear_decay", "--epsilon0", "0.1", "--tau", "0.01", "--epochs", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, slurp(kGolden / "schedule_linear_decay.csv"));
  r = run({"schedule", "--kind", "two_stage", "--stage1", "4", "--epochs", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, slurp(kGolden / "schedule_two_stage.csv"));
}

TEST(CliSchedule, ConstantAndInvalid) {
  const auto r = run({"schedule", "--kind", "constant", "--epsilon0", "0.2", "--epochs", "3"});
  ASSERT_EQ(r.code, 0);
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1], "epoch,epsilon");
  for (int i = 0; i < 3; ++i) EXPECT_EQ(rows[2 + i], std::to_string(i) + ",0.200000000");
  EXPECT_EQ(run({"schedule", "--kind", "two_stage", "--stage1", "9", "--epochs", "4"}).code, 2);
  EXPECT_EQ(run({"schedule", "--epsilon0", "-0.1"}).code, 2);
  EXPECT_EQ(run({"schedule", "--epochs", "0"}).code, 2);
  EXPECT_EQ(run({"schedule", "--kind", "cosine"}).code, 2);
}

namespace {

std::vector<std::string> small_train(const fs::path& out) {
  return {"train", "--n-train", "60", "--n-dev", "20", "--epochs", "3", "--dim", "8",
          "--quantifier-noise", "0.3", "--alt-path", "0.2", "--out", out.string()};
}

}  // namespace

TEST(CliTrain, DefaultSeedsWriteFourLogsAndSummary) {
  const auto dir = scratch("train_default");
  const auto r = run(small_train(dir));
  ASSERT_EQ(r.code, 0) << r.err;
  for (int seed : {41, 42, 43, 44}) {
    const auto log = lines(slurp(dir / ("train_seed" + std::to_string(seed) + ".jsonl")));
    ASSERT_EQ(log.size(), 4u) << seed;  // config header + 3 epochs
    EXPECT_TRUE(nlohmann::json::parse(log[0]).contains("config"));
    EXPECT_EQ(nlohmann::json::parse(log[3])["epoch"], 2);
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["runs"].size(), 4u);
  EXPECT_TRUE(summary.contains("config"));
  EXPECT_TRUE(summary["mean_dev"].contains("answer_f1"));
  EXPECT_TRUE(summary["runs"][0].contains("refine_skipped"));
}

TEST(CliTrain, EpsilonColumnMatchesSchedule) {
  const auto dir = scratch("train_eps");
  const auto r = run({"train", "--n-train", "20", "--n-dev", "5", "--epochs", "12", "--dim", "8", "--seeds", "41",
                      "--method", "f1", "--schedule", "linear_decay", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sched = lines(run({"schedule", "--kind", "linear_decay", "--epochs", "12"}).out);
  const auto log = lines(slurp(dir / "train_seed41.jsonl"));
  ASSERT_EQ(log.size(), 13u);
  for (std::size_t i = 0; i < 12; ++i) {
    const double eps = nlohmann::json::parse(log[i + 1])["epsilon"].get<double>();
    EXPECT_EQ(r3::format_fixed9(eps), sched[i + 2].substr(sched[i + 2].find(',') + 1)) << i;
  }
}

TEST(CliTrain, RepeatedRunsGiveIdenticalSummaries) {
  const auto a = scratch("train_a"), b = scratch("train_b");
  auto args_a = small_train(a), args_b = small_train(b);
  ASSERT_EQ(run(args_a).code, 0);
  ASSERT_EQ(run(args_b).code, 0);
  auto sa = nlohmann::ordered_json::parse(slurp(a / "summary.json"));
  auto sb = nlohmann::ordered_json::parse(slurp(b / "summary.json"));
  EXPECT_EQ(sa["runs"].dump(), sb["runs"].dump());
  EXPECT_EQ(sa["mean_dev"].dump(), sb["mean_dev"].dump());
  // byte identity when the output directory is the same
  const auto first = slurp(a / "summary.json");
  ASSERT_EQ(run(args_a).code, 0);
  EXPECT_EQ(slurp(a / "summary.json"), first);
}

TEST(CliTrain, DivergenceExitsThreeAndKeepsLogs) {
  const auto dir = scratch("train_diverge");
  auto args = small_train(dir);
  for (std::string a : {"--lr", "1e30", "--seeds", "41"}) args.push_back(a);
  const auto r = run(args);
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("non-finite"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "train_seed41.jsonl"));
  EXPECT_FALSE(fs::exists(dir / "summary.json"));
}

TEST(CliTrain, FileDataAndValidation) {
  const auto dir = scratch("train_file");
  auto r = run({"train", "--data", kSample.string(), "--dev", kSample.string(), "--epochs", "2", "--dim", "4",
                "--seeds", "41", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(run({"train", "--data", kSample.string(), "--out", dir.string()}).code, 2);
  EXPECT_EQ(run({"train", "--data", "/nonexistent.json", "--dev", kSample.string(), "--out", dir.string()}).code, 2);
  EXPECT_EQ(run({"train", "--seeds", "41,41", "--out", dir.string()}).code, 2);
  EXPECT_EQ(run({"train", "--k", "1", "--out", dir.string()}).code, 2);
  EXPECT_EQ(run({"train", "--quantifier-noise", "2", "--out", dir.string()}).code, 2);
}

TEST(CliEval, GoldenMetrics) {
  const auto dir = scratch("eval");
  const auto r = run({"eval", "--predictions", (kGolden / "sample_predictions.json").string(), "--gold",
                      kSample.string(), "--out", (dir / "m.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto report = nlohmann::ordered_json::parse(slurp(dir / "m.json"));
  ASSERT_TRUE(report.contains("config"));
  EXPECT_EQ(report.begin().key(), "config");
  report.erase("config");
  EXPECT_EQ(report, nlohmann::ordered_json::parse(slurp(kGolden / "eval_sample_metrics.json")));
}

TEST(CliEval, IdenticalPredictionsScorePerfectly) {
  const auto dir = scratch("eval_perfect");
  auto preds = nlohmann::json::parse(slurp(kGolden / "sample_predictions.json"));
  preds["5ae2070a5542994d89d5b313"]["answer"] = "four";
  std::ofstream(dir / "p.json") << preds.dump();
  const auto r = run({"eval", "--predictions", (dir / "p.json").string(), "--gold", kSample.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(r.out);
  for (const char* k : {"answer_em", "answer_f1", "doc_em", "doc_f1", "sup_em", "sup_f1"}) EXPECT_EQ(m[k], 1.0) << k;
  EXPECT_EQ(m["answer_span_errors"], 0);
  EXPECT_EQ(m["multihop_errors"], 0);
}

TEST(CliEval, IdMismatchExitsTwo) {
  const auto dir = scratch("eval_mismatch");
  auto preds = nlohmann::json::parse(slurp(kGolden / "sample_predictions.json"));
  auto missing = preds;
  missing.erase("5ae2070a5542994d89d5b313");
  std::ofstream(dir / "missing.json") << missing.dump();
  auto extra = preds;
  extra["unknown-id"] = {{"answer", "x"}};
  std::ofstream(dir / "extra.json") << extra.dump();
  std::ofstream(dir / "broken.json") << "{";
  for (const char* f : {"missing.json", "extra.json", "broken.json", "absent.json"}) {
    EXPECT_EQ(run({"eval", "--predictions", (dir / f).string(), "--gold", kSample.string()}).code, 2) << f;
  }
}

TEST(CliBench, CsvShapeAndValidation) {
  const auto r = run({"bench", "--lengths", "8,32", "--reps", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].rfind("# config: ", 0), 0u);
  EXPECT_EQ(rows[1], "L,brute_ns,fast_ns,speedup");
  EXPECT_EQ(rows[2].rfind("8,", 0), 0u);
  EXPECT_EQ(rows[3].rfind("32,", 0), 0u);
  EXPECT_EQ(run({"bench", "--lengths", ""}).code, 2);
  EXPECT_EQ(run({"bench", "--lengths", "0"}).code, 2);
  EXPECT_EQ(run({"bench", "--reps", "0"}).code, 2);
}
