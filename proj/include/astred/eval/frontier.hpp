#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "astred/core/error.hpp"
#include "astred/eval/metrics.hpp"

namespace astred {

struct FrontierPoint {
  double gamma = 0.0;
  double mean_log_ppl = 0.0;
  double mean_unsafeness = 0.0;  // defense unsafeness
  double mean_combined = 0.0;
  std::size_t seeds = 0;
};

struct SweepRow {
  double gamma = 0.0;
  std::uint64_t seed = 0;
  MetricsReport report;
};

struct SweepResult {
  std::vector<SweepRow> raw;
  std::vector<FrontierPoint> frontier;
};

// Runs `pipeline(gamma, seed) -> MetricsReport` for every pair and averages
// over seeds per gamma. Runs are independent, so they may execute
// concurrently; results are collected in (gamma, seed) order either way.
template <typename Pipeline>
SweepResult gamma_sweep(std::span<const double> gammas, std::span<const std::uint64_t> seeds, Pipeline&& pipeline,
                        bool parallel = false) {
  if (gammas.empty()) throw InvalidArgument("gamma_sweep: no gamma values");
  if (seeds.size() < 2) throw InvalidArgument("gamma_sweep: need at least 2 seeds per gamma");
  for (double g : gammas)
    if (!(g >= 0.0) || !std::isfinite(g)) throw InvalidArgument("gamma_sweep: gamma must be finite and >= 0");

  SweepResult out;
  if (parallel) {
    std::vector<std::future<MetricsReport>> jobs;
    for (double g : gammas)
      for (auto s : seeds) jobs.push_back(std::async(std::launch::async, [&pipeline, g, s] { return pipeline(g, s); }));
    std::size_t k = 0;
    for (double g : gammas)
      for (auto s : seeds) out.raw.push_back(SweepRow{g, s, jobs[k++].get()});
  } else {
    for (double g : gammas)
      for (auto s : seeds) out.raw.push_back(SweepRow{g, s, pipeline(g, s)});
  }

  for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
    FrontierPoint p;
    p.gamma = gammas[gi];
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const auto& rep = out.raw[gi * seeds.size() + si].report;
      p.mean_log_ppl += rep.aggregate.log_ppl.mean;
      p.mean_unsafeness += rep.aggregate.defense.mean;
      p.mean_combined += rep.aggregate.combined.mean;
    }
    const double n = static_cast<double>(seeds.size());
    p.mean_log_ppl /= n;
    p.mean_unsafeness /= n;
    p.mean_combined /= n;
    p.seeds = seeds.size();
    out.frontier.push_back(p);
  }
  return out;
}

// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Spearman rank correlation: Pearson correlation of the average ranks.
// Undefined (nullopt) when either side is constant.
inline std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal-length samples");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// CSV columns: kind,gamma,seed,log_ppl_mean,defense_mean,combined_mean,seeds
// kind "raw" rows come first (one per gamma x seed), then one "frontier" row
// per gamma with seed left empty.
inline constexpr const char* kFrontierCsvHeader = "kind,gamma,seed,log_ppl_mean,defense_mean,combined_mean,seeds";

inline void write_frontier_csv(std::ostream& os, const SweepResult& r) {
  os << kFrontierCsvHeader << '\n';
  for (const auto& row : r.raw) {
    os << "raw," << fmt_num(row.gamma) << ',' << row.seed << ',' << fmt_num(row.report.aggregate.log_ppl.mean) << ','
       << fmt_num(row.report.aggregate.defense.mean) << ',' << fmt_num(row.report.aggregate.combined.mean) << ",1\n";
  }
  for (const auto& p : r.frontier) {
    os << "frontier," << fmt_num(p.gamma) << ",," << fmt_num(p.mean_log_ppl) << ',' << fmt_num(p.mean_unsafeness)
       << ',' << fmt_num(p.mean_combined) << ',' << p.seeds << '\n';
  }
}

// ---------------------------------------------------------------------------
// Unsafeness by perplexity bucket.

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_unsafeness;  // empty bins have no mean
};

// `bins` equal-width bins over the observed range of turn log-perplexities.
inline std::vector<double> default_bin_edges(std::span<const AttackTrace> traces, std::size_t bins = 8) {
  if (bins == 0) throw InvalidArgument("histogram: need at least one bin");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& t : traces)
    for (const auto& r : t.turns) {
      lo = std::min(lo, r.log_perplexity);
      hi = std::max(hi, r.log_perplexity);
    }
  if (!std::isfinite(lo)) throw InvalidArgument("histogram: traces contain no turns");
  if (hi == lo) hi = lo + 1.0;
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  edges.back() = hi;
  return edges;
}

// Each adversary turn lands in exactly one bin: [e_i, e_{i+1}), the last bin
// closed. Turns below the first edge or above the last are clamped into the
// outermost bins. Bin value is the mean defense unsafeness of its turns.
inline std::vector<HistogramBin> perplexity_histogram(std::span<const AttackTrace> traces,
                                                      std::span<const double> edges) {
  if (traces.empty()) throw InvalidArgument("histogram: no traces");
  if (edges.size() < 2) throw InvalidArgument("histogram: need at least two bin edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw InvalidArgument("histogram: bin edges must be strictly increasing");

  const std::size_t nb = edges.size() - 1;
  std::vector<HistogramBin> bins(nb);
  std::vector<double> sums(nb, 0.0);
  for (std::size_t i = 0; i < nb; ++i) {
    bins[i].lo = edges[i];
    bins[i].hi = edges[i + 1];
  }
  for (const auto& t : traces) {
    for (const auto& r : t.turns) {
      const auto it = std::upper_bound(edges.begin(), edges.end(), r.log_perplexity);
      std::size_t b = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
      b = std::min(b, nb - 1);
      ++bins[b].count;
      sums[b] += r.defense_score;
    }
  }
  for (std::size_t i = 0; i < nb; ++i)
    if (bins[i].count > 0) bins[i].mean_unsafeness = sums[i] / static_cast<double>(bins[i].count);
  return bins;
}

// CSV columns: bin,lo,hi,count,mean_defense_unsafeness (empty when count = 0)
inline constexpr const char* kHistogramCsvHeader = "bin,lo,hi,count,mean_defense_unsafeness";

inline void write_histogram_csv(std::ostream& os, std::span<const HistogramBin> bins) {
  os << kHistogramCsvHeader << '\n';
  for (std::size_t i = 0; i < bins.size(); ++i) {
    os << i << ',' << fmt_num(bins[i].lo) << ',' << fmt_num(bins[i].hi) << ',' << bins[i].count << ',';
    if (bins[i].mean_unsafeness) os << fmt_num(*bins[i].mean_unsafeness);
    os << '\n';
  }
}

}  // namespace astred
