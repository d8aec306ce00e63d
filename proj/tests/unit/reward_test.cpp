#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "astred/reward.hpp"

using namespace astred;

namespace {

// Fixed scores: `defense` when judging the defender turn alone (the
// adversary text is passed as the user field), `combined` otherwise.
class FixedScorer final : public Scorer {
 public:
  FixedScorer(double defense, double combined) : d_(defense), c_(combined) {}
  SafetyScore score(const RoleTexts& t) const override { return SafetyScore(t.user.empty() ? c_ : d_); }

 private:
  double d_, c_;
};

// Bigram where every token has probability 0.5 after the begin marker and
// after "a"; rows are a, b, c, <eot>, begin.
ToyPolicy halves() {
  const auto v = oracle::letters(4);
  std::vector<double> logits;
  for (int r = 0; r < 5; ++r) {
    const std::vector<double> p = {0.5, 0.5 / 3, 0.5 / 3, 0.5 / 3};
    for (double x : p) logits.push_back(std::log(x));
  }
  return ToyPolicy(v, 2, logits);
}

}  // namespace

TEST(Reward, PerplexityTermOnly) {
  const auto p = halves();
  const FixedScorer s(0.0, 0.0);
  const auto r = compute_reward(p, s, TokenSeq(), oracle::to_seq({0, 0}), oracle::to_seq({1}, Role::defender), {});
  EXPECT_NEAR(r.mean_logprob, std::log(0.5), 1e-12);
  EXPECT_NEAR(r.total, -0.17329, 1e-5);
  EXPECT_NEAR(r.total, 0.25 * std::log(0.5), 1e-12);
}

TEST(Reward, AllTermsSum) {
  const auto p = halves();
  const FixedScorer s(0.8, 0.6);
  const auto r = compute_reward(p, s, TokenSeq(), oracle::to_seq({0, 0}), oracle::to_seq({1}, Role::defender), {});
  EXPECT_NEAR(r.total, 1.22671, 1e-5);
  EXPECT_DOUBLE_EQ(r.defense_term, 0.8);
  EXPECT_DOUBLE_EQ(r.combined_term, 0.6);
}

TEST(Reward, GammaZeroDropsPerplexity) {
  const auto p = halves();
  const FixedScorer s(0.8, 0.6);
  const auto r = compute_reward(p, s, TokenSeq(), oracle::to_seq({0, 0}), oracle::to_seq({1}, Role::defender),
                                RewardWeights{1, 1, 0});
  EXPECT_DOUBLE_EQ(r.total, 1.4);
  EXPECT_DOUBLE_EQ(r.perplexity_term, 0.0);
}

TEST(Reward, EmptyTurnsAndBadWeightsRejected) {
  const auto p = halves();
  const FixedScorer s(0, 0);
  EXPECT_THROW(compute_reward(p, s, TokenSeq(), TokenSeq(), oracle::to_seq({1}), {}), InvalidArgument);
  EXPECT_THROW(compute_reward(p, s, TokenSeq(), oracle::to_seq({1}), TokenSeq(), {}), InvalidArgument);
  EXPECT_THROW(compute_reward(p, s, TokenSeq(), oracle::to_seq({1}), oracle::to_seq({1}), RewardWeights{1, -1, 0}),
               InvalidArgument);
}

TEST(Reward, MatchesEnumeratedTablesAndIsBounded) {
  Rng rng(101);
  const std::vector<std::string> lex = {"c", "d"};
  for (int i = 0; i < 100; ++i) {
    const auto v = oracle::letters(5 + rng.index(2));
    const auto p = oracle::random_policy(v, 1 + static_cast<int>(rng.index(3)), rng, 3.0);
    const int cmax = 1 + static_cast<int>(rng.index(3));
    const LexiconScorer scorer({"c", "d"}, cmax);
    const RewardWeights w{rng.uniform() * 2, rng.uniform() * 2, rng.uniform()};
    const auto s = oracle::random_seq(v, rng.index(4), rng, Role::context);
    const auto a = oracle::random_seq(v, 1 + rng.index(4), rng);
    const auto sp = oracle::random_seq(v, 1 + rng.index(4), rng, Role::defender);
    const auto r = compute_reward(p, scorer, s, a, sp, w);

    std::vector<std::string> dw, all;
    for (Token t : a.tokens()) all.push_back(v.symbols()[t.id]);
    for (Token t : sp.tokens()) {
      dw.push_back(v.symbols()[t.id]);
      all.push_back(v.symbols()[t.id]);
    }
    const double expect = w.alpha * oracle::lexicon_score(dw, lex, cmax) +
                          w.zeta * oracle::lexicon_score(all, lex, cmax) +
                          w.gamma * std::log(oracle::seq_prob(p, s, a)) / static_cast<double>(a.size());
    EXPECT_NEAR(r.total, expect, 1e-9) << "instance " << i;
    EXPECT_LE(r.total, w.alpha + w.zeta);
  }
}

TEST(RankPair, HigherTotalWinsTiesGoToFirst) {
  RewardBreakdown a, b;
  a.total = 0.9;
  b.total = 0.3;
  EXPECT_EQ(rank_pair(a, b).winner, 1);
  EXPECT_EQ(rank_pair(b, a).winner, 2);
  EXPECT_EQ(rank_pair(b, a).loser, 1);
  b.total = 0.9;
  EXPECT_EQ(rank_pair(a, b).winner, 1);
}

TEST(Reward, JsonRoundTrip) {
  const auto p = halves();
  const FixedScorer s(0.8, 0.6);
  const auto r = compute_reward(p, s, TokenSeq(), oracle::to_seq({0, 2}), oracle::to_seq({1}), {});
  const auto q = reward_from_json(to_json(r));
  EXPECT_EQ(q.total, r.total);
  EXPECT_EQ(q.mean_logprob, r.mean_logprob);
}
