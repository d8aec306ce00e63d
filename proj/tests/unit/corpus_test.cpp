#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "astred/data/corpus.hpp"

using namespace astred;

namespace {

// Looks the whole text up in a table; unknown texts are clean.
class TableScorer final : public Scorer {
 public:
  explicit TableScorer(std::map<std::string, double> t) : t_(std::move(t)) {}
  SafetyScore score(const RoleTexts& x) const override {
    auto it = t_.find(x.assistant);
    return SafetyScore(it == t_.end() ? 0.0 : it->second);
  }

 private:
  std::map<std::string, double> t_;
};

std::vector<PromptRecord> numbered(std::size_t n) {
  std::vector<PromptRecord> r;
  for (std::size_t i = 0; i < n; ++i) r.push_back({"p" + std::to_string(i), "text", SafetyScore(0.0), Split::unassigned});
  return r;
}

}  // namespace

TEST(LoadCorpus, StrictThreshold) {
  const TableScorer s({{"low", 0.4}, {"mid", 0.5}, {"high", 0.6}});
  std::istringstream in("low\nmid\nhigh\n");
  const auto r = load_corpus(in, s);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].text, "low");
  EXPECT_DOUBLE_EQ(r.records[0].score.value(), 0.4);
  EXPECT_EQ(r.dropped, 2u);
}

TEST(LoadCorpus, CleanCorpusKeepsEverythingAndSkipsBlanks) {
  const TableScorer s({});
  std::istringstream in("one\r\n\n   \ntwo\nthree");
  const auto r = load_corpus(in, s);
  EXPECT_EQ(r.dropped, 0u);
  ASSERT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.records[0].text, "one");
  EXPECT_EQ(r.records[1].id, prompt_id(4, "two"));
  EXPECT_NE(r.records[0].id, r.records[1].id);
}

TEST(LoadCorpus, Errors) {
  const TableScorer s({{"bad", 0.9}});
  std::istringstream in("bad\n\n");
  EXPECT_THROW(load_corpus(in, s), InvalidArgument);
  EXPECT_THROW(load_corpus(std::filesystem::path("/nonexistent/prompts.txt"), s), IoError);
}

TEST(SplitSizes, FloorFloorRemainder) {
  const auto a = split_sizes(10, {});
  EXPECT_EQ(a.train, 6u);
  EXPECT_EQ(a.dev, 1u);
  EXPECT_EQ(a.test, 3u);
  const auto b = split_sizes(3103, {});
  EXPECT_EQ(b.train, 1861u);
  EXPECT_EQ(b.dev, 310u);
  EXPECT_EQ(b.test, 932u);
  // Integer-arithmetic oracle over a range of sizes.
  for (std::size_t n = 3; n < 5000; ++n) {
    const auto s = split_sizes(n, {});
    ASSERT_EQ(s.train, n * 6 / 10) << n;
    ASSERT_EQ(s.dev, n / 10) << n;
    ASSERT_EQ(s.test, n - n * 6 / 10 - n / 10) << n;
  }
  EXPECT_THROW(split_sizes(10, SplitRatios{0.5, 0.1, 0.1}), InvalidArgument);
}

TEST(AssignSplits, DeterministicPerSeed) {
  auto a = numbered(50), b = numbered(50), c = numbered(50);
  assign_splits(a, {}, 1);
  assign_splits(b, {}, 1);
  assign_splits(c, {}, 2);
  bool differs = false;
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a[i].split, b[i].split);
    EXPECT_EQ(a[i].id, "p" + std::to_string(i));
    differs = differs || a[i].split != c[i].split;
  }
  EXPECT_TRUE(differs);
  for (const auto* r : {&a, &c}) {
    EXPECT_EQ(select_split(*r, Split::train).size(), 30u);
    EXPECT_EQ(select_split(*r, Split::dev).size(), 5u);
    EXPECT_EQ(select_split(*r, Split::test).size(), 15u);
  }
}

TEST(AssignSplits, TooFewRecords) {
  auto r = numbered(2);
  EXPECT_THROW(assign_splits(r, {}, 1), InvalidArgument);
  auto three = numbered(3);
  assign_splits(three, {}, 1);
  EXPECT_EQ(select_split(three, Split::test).size(), 2u);
}

TEST(Manifest, RoundTrip) {
  auto r = numbered(5);
  r[2].text = "he said \"hi\"";
  r[3].score = SafetyScore(0.25);
  assign_splits(r, {}, 4);
  const auto path = std::filesystem::temp_directory_path() / "astred_manifest_rt.jsonl";
  write_manifest(path, r);
  const auto back = read_manifest(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(back[i].id, r[i].id);
    EXPECT_EQ(back[i].text, r[i].text);
    EXPECT_EQ(back[i].score, r[i].score);
    EXPECT_EQ(back[i].split, r[i].split);
  }
  EXPECT_THROW(read_manifest("/nonexistent/m.jsonl"), IoError);
}
