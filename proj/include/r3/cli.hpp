#pragma once

// Command-line front end: smooth, schedule, train, eval, bench.
//
// run_cli() is the whole tool; main() only forwards to it, so the tests can
// drive every subcommand in-process. Exit codes: 0 ok, 2 usage or invalid
// input, 3 runtime failure.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "r3/core.hpp"
#include "r3/data.hpp"
#include "r3/metrics.hpp"
#include "r3/pipeline.hpp"
#include "r3/schedule.hpp"
#include "r3/smoothing.hpp"

namespace r3::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

/// Bad flags or bad input files; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ojson = nlohmann::ordered_json;

struct SmoothOptions {
  std::size_t length = 0;
  std::size_t gold_start = 0;
  std::size_t gold_end = 0;
  std::string method = "f1";
  double epsilon = 0.1;
  std::string out = "-";
};

struct ScheduleOptions {
  std::string kind = "linear_decay";
  double epsilon0 = 0.1;
  double tau = 0.01;
  std::size_t stage1 = 4;
  std::size_t epochs = 16;
  std::string out = "-";
};

struct TrainOptions {
  std::string data = "synthetic";
  std::string dev;  // required when --data is a file
  SyntheticConfig synthetic;
  TrainConfig train;
  std::string schedule = "linear_decay";
  std::string method = "f1";
  std::vector<std::uint64_t> seeds{41, 42, 43, 44};
  std::size_t threads = 0;  // 0: one per seed
  std::string out = "runs";
};

struct EvalOptions {
  std::string predictions;
  std::string gold;
  std::string out = "-";
};

struct BenchOptions {
  std::vector<std::size_t> lengths{64, 128, 256, 512};
  std::size_t reps = 9;
  std::string out = "-";
};

// ---- output helpers -----------------------------------------------------------

/// Runs `body` against stdout for "-" and against a fresh file otherwise.
template <typename Fn>
void with_output(const std::string& path, std::ostream& stdout_stream, Fn&& body) {
  if (path == "-") {
    body(stdout_stream);
    return;
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  body(f);
  if (!f) throw std::runtime_error("write failed for " + path);
}

inline void write_csv_config(std::ostream& os, const ojson& config) {
  os << "# config: " << config.dump() << '\n';
}

// ---- smooth --------------------------------------------------------------------

inline ojson to_json(const SmoothOptions& o) {
  return {{"command", "smooth"}, {"length", o.length},   {"gold_start", o.gold_start},
          {"gold_end", o.gold_end}, {"method", o.method}, {"epsilon", o.epsilon}};
}

inline int cmd_smooth(const SmoothOptions& o, std::ostream& out) {
  if (o.length == 0) throw UsageError("--length must be >= 1");
  if (o.gold_start > o.gold_end) throw UsageError("--gold-start exceeds --gold-end");
  if (o.gold_end >= o.length) throw UsageError("--gold-end must be < --length");
  if (!(o.epsilon >= 0.0 && o.epsilon <= 1.0)) throw UsageError("--epsilon must lie in [0,1]");
  const auto kind = smoothing_kind_from_string(o.method);
  const Span gold(o.gold_start, o.gold_end);
  const auto parts = smoothing_components(kind, o.length, gold);
  const auto target = make_span_target(kind, o.length, gold, o.epsilon);
  with_output(o.out, out, [&](std::ostream& os) {
    write_csv_config(os, to_json(o));
    write_distribution_csv(os, parts, target);
  });
  return kExitOk;
}

// ---- schedule ------------------------------------------------------------------

inline ScheduleConfig schedule_config(const ScheduleOptions& o) {
  ScheduleConfig c;
  c.kind = schedule_kind_from_string(o.kind);
  c.epsilon0 = o.epsilon0;
  c.tau = o.tau;
  c.stage1_epochs = o.stage1;
  c.n_epochs = o.epochs;
  return c;
}

inline ojson to_json(const ScheduleConfig& c) {
  return {{"kind", to_string(c.kind)},           {"epsilon0", c.epsilon0}, {"tau", c.tau},
          {"stage1_epochs", c.stage1_epochs}, {"n_epochs", c.n_epochs}};
}

inline void write_schedule_csv(std::ostream& os, const ScheduleConfig& c) {
  os << "epoch,epsilon\n";
  const auto table = epsilon_table(c);
  for (std::size_t i = 0; i < table.size(); ++i) os << i << ',' << format_fixed9(table[i]) << '\n';
}

inline int cmd_schedule(const ScheduleOptions& o, std::ostream& out) {
  const auto c = schedule_config(o);
  c.validate();
  ojson config = to_json(c);
  config["command"] = "schedule";
  with_output(o.out, out, [&](std::ostream& os) {
    write_csv_config(os, config);
    write_schedule_csv(os, c);
  });
  return kExitOk;
}

// ---- train ---------------------------------------------------------------------

inline ojson to_json(const SyntheticConfig& c) {
  return {{"n_examples", c.n_examples},
          {"n_dev", c.n_dev},
          {"vocab_size", c.vocab_size},
          {"docs_per_example", c.docs_per_example},
          {"sentences_per_doc", c.sentences_per_doc},
          {"tokens_per_sentence", c.tokens_per_sentence},
          {"max_answer_tokens", c.max_answer_tokens},
          {"quantifier_noise_p", c.quantifier_noise_p},
          {"alt_path_p", c.alt_path_p},
          {"yes_no_p", c.yes_no_p},
          {"seed", c.seed}};
}

inline ojson to_json(const TrainConfig& c) {
  const auto& w = c.loss_weights;
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"k", c.k},
          {"method", to_string(c.method)},
          {"schedule", to_json(c.schedule_for_run())},
          {"smooth_binary", c.smooth_binary},
          {"loss_weights",
           {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"lambda3", w.lambda3},
            {"lambda4", w.lambda4}, {"lambda5", w.lambda5}}},
          {"max_answer_len", c.max_answer_len},
          {"dim", c.dim}};
}

inline ojson to_json(const TrainOptions& o) {
  ojson data = {{"source", o.data}};
  if (o.data == "synthetic") {
    data["synthetic"] = to_json(o.synthetic);
  } else {
    data["dev"] = o.dev;
  }
  return {{"command", "train"}, {"data", data}, {"train", to_json(o.train)}, {"seeds", o.seeds}};
}

inline ojson metrics_json(const MetricsReport& r) {
  ojson j;
  r3::to_json(j, r);
  return j;
}

/// Mean of each numeric field across runs; counts are averaged too.
inline ojson mean_metrics(const std::vector<MetricsReport>& reports) {
  ojson mean = ojson::object();
  if (reports.empty()) return mean;
  const auto n = static_cast<double>(reports.size());
  std::vector<ojson> rows;
  for (const auto& r : reports) rows.push_back(metrics_json(r));
  for (const auto& item : rows.front().items()) {
    double sum = 0.0;
    for (const auto& row : rows) sum += row.at(item.key()).get<double>();
    mean[item.key()] = sum / n;
  }
  return mean;
}

inline std::string log_path(const std::string& dir, std::uint64_t seed) {
  return (std::filesystem::path(dir) / ("train_seed" + std::to_string(seed) + ".jsonl")).string();
}

struct SeedOutcome {
  std::vector<EpochRecord> log;
  std::string error;  // non-empty on failure
  bool diverged = false;
};

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  if (o.seeds.empty()) throw UsageError("--seeds must list at least one seed");
  {
    std::set<std::uint64_t> unique(o.seeds.begin(), o.seeds.end());
    if (unique.size() != o.seeds.size()) throw UsageError("--seeds contains duplicates");
  }
  TrainConfig base = o.train;
  base.method = smoothing_kind_from_string(o.method);
  base.schedule.kind = schedule_kind_from_string(o.schedule);
  base.validate();

  std::vector<Example> train_set, dev_set;
  if (o.data == "synthetic") {
    validate(o.synthetic);
    auto ds = generate_synthetic(o.synthetic);
    train_set = std::move(ds.train);
    dev_set = std::move(ds.dev);
  } else {
    if (o.dev.empty()) throw UsageError("--dev is required when --data is a file");
    try {
      train_set = load_examples(o.data);
      dev_set = load_examples(o.dev);
    } catch (const ParseError& e) {
      throw UsageError(e.what());
    }
    if (train_set.empty()) throw UsageError("no usable training examples in " + o.data);
  }

  TrainOptions resolved = o;
  resolved.train = base;
  const ojson config = to_json(resolved);
  std::filesystem::create_directories(o.out);

  std::vector<SeedOutcome> outcomes(o.seeds.size());
  auto run_one = [&](std::size_t i) {
    TrainConfig tc = base;
    tc.seed = o.seeds[i];
    const auto path = log_path(o.out, tc.seed);
    std::ofstream log(path, std::ios::binary);
    if (!log) {
      outcomes[i].error = "cannot write " + path;
      return;
    }
    log << ojson{{"config", config}, {"seed", tc.seed}}.dump() << '\n' << std::flush;
    try {
      auto result = train(train_set, dev_set, tc, [&](const EpochRecord& rec) {
        log << to_json(rec).dump() << '\n' << std::flush;
      });
      outcomes[i].log = std::move(result.log);
    } catch (const DivergenceError& e) {
      outcomes[i].error = e.what();
      outcomes[i].diverged = true;
    } catch (const std::exception& e) {
      outcomes[i].error = e.what();
    }
  };

  const std::size_t workers =
      std::max<std::size_t>(1, std::min(o.threads == 0 ? o.seeds.size() : o.threads, o.seeds.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < o.seeds.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < o.seeds.size(); i = next++) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  bool failed = false;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!outcomes[i].error.empty()) {
      err << "seed " << o.seeds[i] << ": " << outcomes[i].error << '\n';
      failed = true;
    }
  }
  if (failed) return kExitRuntime;

  ojson runs = ojson::array();
  std::vector<MetricsReport> finals;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& last = outcomes[i].log.back();
    std::size_t skipped = 0;
    for (const auto& r : outcomes[i].log) skipped += r.refine_skipped;
    finals.push_back(last.dev);
    runs.push_back({{"seed", o.seeds[i]},
                    {"log", std::filesystem::path(log_path(o.out, o.seeds[i])).filename().string()},
                    {"dev", metrics_json(last.dev)},
                    {"refine_skipped", skipped}});
  }
  const ojson summary = {{"config", config}, {"runs", runs}, {"mean_dev", mean_metrics(finals)}};
  with_output((std::filesystem::path(o.out) / "summary.json").string(), out,
              [&](std::ostream& os) { os << summary.dump(2) << '\n'; });
  out << "mean dev answer_f1 " << summary["mean_dev"]["answer_f1"].get<double>() << " over "
      << o.seeds.size() << " seed(s); logs in " << o.out << '\n';
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------------

inline GoldRecord gold_record(const Example& ex) {
  GoldRecord g;
  g.answer = ex.answer_text;
  for (std::size_t i = 0; i < ex.documents.size(); ++i) {
    if (ex.gold_doc_flags[i]) g.docs.insert(ex.documents[i].title);
    for (std::size_t s = 0; s < ex.supporting_flags[i].size(); ++s) {
      if (ex.supporting_flags[i][s]) g.support.insert(support_key(ex.documents[i].title, s));
    }
  }
  return g;
}

/// {"id": {"answer": str, "sp": [[title, idx], ...], "docs": [title, ...]}, ...}
inline std::map<std::string, PredictionRecord> parse_predictions(const std::string& text) {
  std::map<std::string, PredictionRecord> out;
  try {
    const auto root = nlohmann::json::parse(text);
    if (!root.is_object()) throw UsageError("predictions: expected a JSON object keyed by id");
    for (const auto& [id, v] : root.items()) {
      PredictionRecord p;
      p.answer = v.at("answer").get<std::string>();
      if (v.contains("sp")) {
        for (const auto& f : v.at("sp")) p.support.insert(support_key(f.at(0).get<std::string>(), f.at(1).get<std::size_t>()));
      }
      if (v.contains("docs")) {
        for (const auto& d : v.at("docs")) p.docs.insert(d.get<std::string>());
      }
      out.emplace(id, std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("predictions: ") + e.what());
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const auto preds = parse_predictions(read_file(o.predictions));
  std::vector<Example> gold;
  try {
    gold = load_examples(o.gold);
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  std::set<std::string> gold_ids;
  for (const auto& ex : gold) gold_ids.insert(ex.id);
  for (const auto& ex : gold) {
    if (!preds.count(ex.id)) throw UsageError("no prediction for id '" + ex.id + "'");
  }
  for (const auto& [id, _] : preds) {
    if (!gold_ids.count(id)) throw UsageError("prediction for unknown id '" + id + "'");
  }
  MetricsAccumulator acc;
  for (const auto& ex : gold) acc.add(preds.at(ex.id), gold_record(ex));
  ojson report = {{"config", {{"command", "eval"}, {"predictions", o.predictions}, {"gold", o.gold}}}};
  report.update(metrics_json(acc.report()));
  with_output(o.out, out, [&](std::ostream& os) { os << report.dump(2) << '\n'; });
  return kExitOk;
}

// ---- bench ---------------------------------------------------------------------

struct BenchRow {
  std::size_t length = 0;
  double brute_ns = 0.0;
  double fast_ns = 0.0;
  double speedup() const { return fast_ns > 0.0 ? brute_ns / fast_ns : 0.0; }
};

/// Gold span used for timing at length L: three tokens centred in the context.
inline Span bench_span(std::size_t length) {
  const std::size_t s = length / 2 > 0 ? length / 2 - 1 : 0;
  return {std::min(s, length - 1), std::min(s + 2, length - 1)};
}

inline bool raw_equal(const RawScoreVector& a, const RawScoreVector& b, double tol = 1e-9) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

template <typename Fn>
double median_ns(std::size_t reps, Fn&& fn) {
  std::vector<double> samples;
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

/// Checks fast against brute force on the timed span and both edge spans,
/// then times each path (start plus end scores) `reps` times.
inline BenchRow bench_length(std::size_t length, std::size_t reps) {
  const Span spans[] = {bench_span(length), Span(0, 0), Span(length - 1, length - 1)};
  for (const auto& g : spans) {
    if (!raw_equal(qs_raw_brute(length, g), qs_raw_fast(length, g)) ||
        !raw_equal(qe_raw_brute(length, g), qe_raw_fast(length, g))) {
      throw std::runtime_error("fast and brute-force scores disagree at L=" + std::to_string(length));
    }
  }
  const Span gold = spans[0];
  double sink = 0.0;
  BenchRow row;
  row.length = length;
  row.brute_ns = median_ns(reps, [&] { sink += qs_raw_brute(length, gold)[0] + qe_raw_brute(length, gold)[0]; });
  row.fast_ns = median_ns(reps, [&] { sink += qs_raw_fast(length, gold)[0] + qe_raw_fast(length, gold)[0]; });
  if (!std::isfinite(sink)) throw std::runtime_error("bench: non-finite scores");
  return row;
}

inline int cmd_bench(const BenchOptions& o, std::ostream& out) {
  if (o.lengths.empty()) throw UsageError("--lengths must list at least one length");
  if (o.reps == 0) throw UsageError("--reps must be >= 1");
  for (auto L : o.lengths) {
    if (L == 0) throw UsageError("--lengths must be positive");
  }
  std::vector<BenchRow> rows;
  for (auto L : o.lengths) rows.push_back(bench_length(L, o.reps));
  const ojson config = {{"command", "bench"}, {"lengths", o.lengths}, {"reps", o.reps}};
  with_output(o.out, out, [&](std::ostream& os) {
    write_csv_config(os, config);
    os << "L,brute_ns,fast_ns,speedup\n";
    for (const auto& r : rows) {
      os << r.length << ',' << format_fixed9(r.brute_ns) << ',' << format_fixed9(r.fast_ns) << ','
         << format_fixed9(r.speedup()) << '\n';
    }
  });
  return kExitOk;
}

// ---- dispatch ------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Label-smoothing targets, schedules and a toy multi-hop QA pipeline"};
  app.require_subcommand(1);

  SmoothOptions smooth;
  auto* s = app.add_subcommand("smooth", "Write start/end smoothing distributions as CSV");
  s->add_option("--length", smooth.length, "Context length L")->required();
  s->add_option("--gold-start", smooth.gold_start, "Gold start position")->required();
  s->add_option("--gold-end", smooth.gold_end, "Gold end position (inclusive)")->required();
  s->add_option("--method", smooth.method)->check(CLI::IsMember({"one_hot", "uniform", "word_overlap", "f1"}));
  s->add_option("--epsilon", smooth.epsilon, "Smoothing weight");
  s->add_option("--out", smooth.out, "Output CSV, '-' for stdout");

  ScheduleOptions sched;
  auto* sc = app.add_subcommand("schedule", "Write the per-epoch smoothing weight as CSV");
  sc->add_option("--kind", sched.kind)->check(CLI::IsMember({"constant", "two_stage", "linear_decay"}));
  sc->add_option("--epsilon0", sched.epsilon0);
  sc->add_option("--tau", sched.tau);
  sc->add_option("--stage1", sched.stage1);
  sc->add_option("--epochs", sched.epochs);
  sc->add_option("--out", sched.out);

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train the toy pipeline for each seed");
  t->add_option("--data", tr.data, "'synthetic' or a HotpotQA/JSONL training file");
  t->add_option("--dev", tr.dev, "Dev file when --data is a file");
  t->add_option("--n-train", tr.synthetic.n_examples);
  t->add_option("--n-dev", tr.synthetic.n_dev);
  t->add_option("--data-seed", tr.synthetic.seed);
  t->add_option("--vocab-size", tr.synthetic.vocab_size);
  t->add_option("--quantifier-noise", tr.synthetic.quantifier_noise_p);
  t->add_option("--alt-path", tr.synthetic.alt_path_p);
  t->add_option("--yes-no", tr.synthetic.yes_no_p);
  t->add_option("--method", tr.method)->check(CLI::IsMember({"one_hot", "uniform", "word_overlap", "f1"}));
  t->add_option("--schedule", tr.schedule)->check(CLI::IsMember({"constant", "two_stage", "linear_decay"}));
  t->add_option("--epsilon0", tr.train.schedule.epsilon0);
  t->add_option("--tau", tr.train.schedule.tau);
  t->add_option("--stage1", tr.train.schedule.stage1_epochs);
  t->add_option("--epochs", tr.train.epochs);
  t->add_option("--batch-size", tr.train.batch_size);
  t->add_option("--lr", tr.train.learning_rate);
  t->add_option("--weight-decay", tr.train.weight_decay);
  t->add_option("--k", tr.train.k, "Documents kept after retrieval");
  t->add_option("--dim", tr.train.dim);
  t->add_option("--max-answer-len", tr.train.max_answer_len);
  t->add_flag("--smooth-binary", tr.train.smooth_binary, "Smooth retrieval and support labels too");
  t->add_option("--lambda1", tr.train.loss_weights.lambda1);
  t->add_option("--lambda2", tr.train.loss_weights.lambda2);
  t->add_option("--lambda3", tr.train.loss_weights.lambda3);
  t->add_option("--lambda4", tr.train.loss_weights.lambda4);
  t->add_option("--lambda5", tr.train.loss_weights.lambda5);
  t->add_option("--seeds", tr.seeds)->delimiter(',');
  t->add_option("--threads", tr.threads, "Concurrent seeds, 0 for one per seed");
  t->add_option("--out", tr.out, "Output directory");

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "Score a prediction file against gold");
  e->add_option("--predictions", ev.predictions)->required();
  e->add_option("--gold", ev.gold)->required();
  e->add_option("--out", ev.out);

  BenchOptions bench;
  auto* b = app.add_subcommand("bench", "Time brute-force vs fast F1 smoothing scores");
  b->add_option("--lengths", bench.lengths)->delimiter(',');
  b->add_option("--reps", bench.reps);
  b->add_option("--out", bench.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_smooth(smooth, out);
    if (sc->parsed()) return cmd_schedule(sched, out);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
    if (b->parsed()) return cmd_bench(bench, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::out_of_range& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace r3::cli
