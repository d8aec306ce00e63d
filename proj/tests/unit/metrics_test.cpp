#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "astred/eval/frontier.hpp"
#include "astred/eval/metrics.hpp"

using namespace astred;

namespace {

struct Fixture {
  Vocab vocab = oracle::letters(5);
  LexiconScorer scorer{{"d"}, 2};
  std::vector<SeedPrompt> prompts = [this] {
    std::vector<SeedPrompt> p;
    for (int i = 0; i < 12; ++i) p.push_back({"q" + std::to_string(i), oracle::to_seq({i % 3, (i + 1) % 3}, Role::context)});
    return p;
  }();
  RolloutSettings settings = [] {
    SamplingConfig s;
    s.temperature = 1.0;
    s.top_p = 1.0;
    s.max_new_tokens = 5;
    return RolloutSettings{s, s};
  }();
};

AttackTrace fake_trace(std::vector<std::pair<double, double>> ppl_and_score) {
  AttackTrace t;
  for (auto [ppl, sc] : ppl_and_score) {
    TurnRecord r;
    r.log_perplexity = ppl;
    r.defense_score = sc;
    r.combined_score = sc;
    t.turns.push_back(r);
  }
  t.horizon = static_cast<int>(t.turns.size());
  return t;
}

}  // namespace

TEST(Metrics, FractionAboveHalf) {
  const std::vector<double> xs = {0.2, 0.6, 0.9, 0.4};
  const auto r = summarize_rate(xs);
  EXPECT_DOUBLE_EQ(r.frac_unsafe, 0.5);
  EXPECT_DOUBLE_EQ(r.mean, 0.525);
  // Exactly 0.5 is not above the cut.
  EXPECT_DOUBLE_EQ(summarize_rate(std::vector<double>{0.5, 0.5}).frac_unsafe, 0.0);
}

TEST(Metrics, UniformPoliciesGiveLnV) {
  Fixture f;
  ToyPolicy uniform(f.vocab, 2);
  const auto res = evaluate(uniform, uniform, f.scorer, f.prompts, 3, f.settings, 1);
  EXPECT_EQ(res.report.prompts, 12u);
  EXPECT_EQ(res.report.per_turn.size(), 3u);
  EXPECT_EQ(res.report.aggregate.samples, 36u);
  EXPECT_NEAR(res.report.aggregate.log_ppl.mean, std::log(5.0), 1e-12);
  EXPECT_NEAR(res.report.log_ppl_by_prompt.mean, std::log(5.0), 1e-12);
  EXPECT_THROW(evaluate(uniform, uniform, f.scorer, std::vector<SeedPrompt>{}, 3, f.settings, 1), InvalidArgument);
}

TEST(Metrics, ReaggregatingSavedTracesReproducesReport) {
  Fixture f;
  Rng rng(2);
  const auto adv = oracle::random_policy(f.vocab, 2, rng), def = oracle::random_policy(f.vocab, 2, rng);
  const auto res = evaluate(adv, def, f.scorer, f.prompts, 3, f.settings, 9);
  std::vector<AttackTrace> back;
  for (const auto& t : res.traces) back.push_back(trace_from_json(nlohmann::json::parse(to_json(f.vocab, t).dump())));
  EXPECT_EQ(to_json(aggregate(back)).dump(), to_json(res.report).dump());

  // Independent pooled means.
  double ppl = 0, def_sum = 0;
  std::size_t n = 0;
  for (const auto& t : res.traces)
    for (const auto& r : t.turns) {
      ppl += r.log_perplexity;
      def_sum += r.defense_score;
      ++n;
    }
  EXPECT_NEAR(res.report.aggregate.log_ppl.mean, ppl / n, 1e-12);
  EXPECT_NEAR(res.report.aggregate.defense.mean, def_sum / n, 1e-12);
}

TEST(Metrics, PromptOrderDoesNotMatter) {
  Fixture f;
  Rng rng(3);
  const auto adv = oracle::random_policy(f.vocab, 2, rng), def = oracle::random_policy(f.vocab, 2, rng);
  auto reversed = f.prompts;
  std::reverse(reversed.begin(), reversed.end());
  const auto a = evaluate(adv, def, f.scorer, f.prompts, 2, f.settings, 4);
  const auto b = evaluate(adv, def, f.scorer, reversed, 2, f.settings, 4);
  EXPECT_NEAR(a.report.aggregate.defense.mean, b.report.aggregate.defense.mean, 1e-12);
  EXPECT_NEAR(a.report.aggregate.log_ppl.mean, b.report.aggregate.log_ppl.mean, 1e-12);
}

TEST(Histogram, EveryTurnInExactlyOneBin) {
  const std::vector<AttackTrace> traces = {fake_trace({{0.5, 0.1}, {1.0, 0.3}, {2.0, 1.0}}),
                                           fake_trace({{1.5, 0.0}, {3.0, 0.6}, {-1.0, 0.2}})};
  const std::vector<double> edges = {0.0, 1.0, 2.0, 3.0};
  const auto bins = perplexity_histogram(traces, edges);
  ASSERT_EQ(bins.size(), 3u);
  // [0,1): 0.5 and the clamped -1.0; [1,2): 1.0, 1.5; [2,3]: 2.0, 3.0.
  EXPECT_EQ(bins[0].count, 2u);
  EXPECT_EQ(bins[1].count, 2u);
  EXPECT_EQ(bins[2].count, 2u);
  EXPECT_DOUBLE_EQ(*bins[0].mean_unsafeness, (0.1 + 0.2) / 2);
  EXPECT_DOUBLE_EQ(*bins[1].mean_unsafeness, 0.15);
  EXPECT_DOUBLE_EQ(*bins[2].mean_unsafeness, 0.8);

  const auto wide = perplexity_histogram(traces, std::vector<double>{0.0, 10.0, 20.0});
  EXPECT_FALSE(wide[1].mean_unsafeness.has_value());
  EXPECT_THROW(perplexity_histogram(traces, std::vector<double>{0.0, 2.0, 1.0}), InvalidArgument);
  EXPECT_THROW(perplexity_histogram(traces, std::vector<double>{0.0, 0.0}), InvalidArgument);
}

TEST(Histogram, SingleBinEqualsOverallMean) {
  Fixture f;
  Rng rng(5);
  const auto adv = oracle::random_policy(f.vocab, 2, rng), def = oracle::random_policy(f.vocab, 2, rng);
  const auto res = evaluate(adv, def, f.scorer, std::span(f.prompts).first(1), 3, f.settings, 5);
  const auto edges = default_bin_edges(res.traces, 1);
  const auto bins = perplexity_histogram(res.traces, edges);
  ASSERT_EQ(bins.size(), 1u);
  EXPECT_EQ(bins[0].count, 3u);
  EXPECT_NEAR(*bins[0].mean_unsafeness, res.report.aggregate.defense.mean, 1e-15);

  const auto many = perplexity_histogram(res.traces, default_bin_edges(res.traces, 8));
  std::size_t total = 0;
  for (const auto& b : many) total += b.count;
  EXPECT_EQ(total, 3u);
}

TEST(Sweep, RowsAndAveraging) {
  const std::vector<double> gammas = {0, 0.25, 0.5, 1.0};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  auto pipeline = [](double g, std::uint64_t s) {
    MetricsReport r;
    r.aggregate.log_ppl.mean = 10 - g * 4 + static_cast<double>(s);
    r.aggregate.defense.mean = 0.1 * static_cast<double>(s) + g;
    return r;
  };
  const auto serial = gamma_sweep(gammas, seeds, pipeline);
  const auto parallel = gamma_sweep(gammas, seeds, pipeline, true);
  ASSERT_EQ(serial.raw.size(), 12u);
  ASSERT_EQ(serial.frontier.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(serial.frontier[i].mean_log_ppl, 10 - gammas[i] * 4 + 2, 1e-12);
    EXPECT_NEAR(serial.frontier[i].mean_unsafeness, 0.2 + gammas[i], 1e-12);
    EXPECT_EQ(serial.frontier[i].seeds, 3u);
    EXPECT_EQ(parallel.frontier[i].mean_log_ppl, serial.frontier[i].mean_log_ppl);
  }
  EXPECT_EQ(serial.raw[5].gamma, 0.25);
  EXPECT_EQ(serial.raw[5].seed, 3u);

  std::ostringstream csv;
  write_frontier_csv(csv, serial);
  std::size_t frontier_rows = 0;
  std::istringstream lines(csv.str());
  for (std::string line; std::getline(lines, line);) frontier_rows += line.rfind("frontier,", 0) == 0;
  EXPECT_EQ(frontier_rows, 4u);

  const std::vector<std::uint64_t> one = {1};
  EXPECT_THROW(gamma_sweep(gammas, one, pipeline), InvalidArgument);
  EXPECT_THROW(gamma_sweep(std::vector<double>{}, seeds, pipeline), InvalidArgument);
  EXPECT_THROW(gamma_sweep(std::vector<double>{-1.0}, seeds, pipeline), InvalidArgument);
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x = {0, 0.25, 0.5, 1.0};
  EXPECT_NEAR(*spearman(x, std::vector<double>{4, 3, 2, 1}), -1.0, 1e-12);
  EXPECT_NEAR(*spearman(x, std::vector<double>{1, 5, 7, 100}), 1.0, 1e-12);
  // d = (1, -1, 1, -1): 1 - 6*4/(4*15) = 0.6.
  EXPECT_NEAR(*spearman(x, std::vector<double>{2, 1, 4, 3}), 0.6, 1e-12);
  EXPECT_FALSE(spearman(x, std::vector<double>{1, 1, 1, 1}).has_value());
  EXPECT_EQ(average_ranks(std::vector<double>{3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
}

TEST(Metrics, CsvHasOneRowPerTurnPlusPooledRows) {
  const std::vector<AttackTrace> traces = {fake_trace({{1, 0.1}, {2, 0.9}}), fake_trace({{3, 0.2}, {4, 0.7}})};
  const auto rep = aggregate(traces);
  std::ostringstream os;
  write_metrics_csv(os, rep);
  std::istringstream in(os.str());
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], kMetricsCsvHeader);
  EXPECT_EQ(lines[1].rfind("turn,1,2,2,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("all,0,4,2.5,1,4,", 0), 0u);
  EXPECT_DOUBLE_EQ(rep.per_turn[1].defense.frac_unsafe, 1.0);
}
