#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"
#include "astred/safety/scorer.hpp"

namespace astred {

enum class Split { unassigned, train, dev, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

struct PromptRecord {
  std::string id;
  std::string text;
  SafetyScore score;
  Split split = Split::unassigned;
};

struct IngestResult {
  std::vector<PromptRecord> records;
  std::size_t dropped = 0;
};

// Prompts at or above this unsafeness are dropped at ingest.
inline constexpr double kIngestThreshold = 0.5;

// Stable id: 1-based line number plus a hash of the text.
inline std::string prompt_id(std::size_t line_no, std::string_view text) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "L%zu-%08llx", line_no,
                static_cast<unsigned long long>(fnv1a64(text) & 0xffffffffULL));
  return buf;
}

// One prompt per non-blank line, each scored in isolation. Records scoring
// >= 0.5 are dropped.
inline IngestResult load_corpus(std::istream& is, const Scorer& scorer) {
  IngestResult out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const SafetyScore s = scorer.score(RoleTexts{"", "", line});
    if (!(s.value() < kIngestThreshold)) {
      ++out.dropped;
      continue;
    }
    out.records.push_back(PromptRecord{prompt_id(line_no, line), line, s, Split::unassigned});
  }
  if (out.records.empty()) throw InvalidArgument("corpus is empty after filtering");
  return out;
}

inline IngestResult load_corpus(const std::filesystem::path& path, const Scorer& scorer) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read corpus " + path.string());
  return load_corpus(is, scorer);
}

struct SplitRatios {
  double train = 0.6;
  double dev = 0.1;
  double test = 0.3;
};

struct SplitSizes {
  std::size_t train, dev, test;
};

// floor(train * N), floor(dev * N), remainder.
inline SplitSizes split_sizes(std::size_t n, const SplitRatios& r) {
  if (std::abs(r.train + r.dev + r.test - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
  if (r.train < 0 || r.dev < 0 || r.test < 0) throw InvalidArgument("split ratios must be non-negative");
  const double nd = static_cast<double>(n);
  // Tolerance keeps exact products such as 0.6 * 10 from flooring to 5.
  const auto train = static_cast<std::size_t>(std::floor(r.train * nd + 1e-9));
  const auto dev = static_cast<std::size_t>(std::floor(r.dev * nd + 1e-9));
  return {train, dev, n - train - dev};
}

// Seeded shuffle, then contiguous train/dev/test blocks. Record order is kept;
// only the split labels change.
inline void assign_splits(std::vector<PromptRecord>& records, const SplitRatios& ratios, std::uint64_t seed) {
  if (records.size() < 3) throw InvalidArgument("split: need at least 3 records");
  const auto sizes = split_sizes(records.size(), ratios);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t k = 0; k < order.size(); ++k) {
    records[order[k]].split = k < sizes.train ? Split::train
                              : k < sizes.train + sizes.dev ? Split::dev
                                                            : Split::test;
  }
}

inline std::vector<PromptRecord> select_split(const std::vector<PromptRecord>& records, Split s) {
  std::vector<PromptRecord> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(r);
  return out;
}

inline nlohmann::json to_json(const PromptRecord& r) {
  return {{"id", r.id}, {"text", r.text}, {"score", r.score.value()}, {"split", std::string(to_string(r.split))}};
}

inline PromptRecord prompt_from_json(const nlohmann::json& j) {
  return PromptRecord{j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                      SafetyScore(j.at("score").get<double>()),
                      split_from_string(j.value("split", std::string("unassigned")))};
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<PromptRecord>& records) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

inline std::vector<PromptRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  std::vector<PromptRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(prompt_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace astred
