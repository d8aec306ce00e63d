#pragma once

#include <cmath>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"
#include "astred/lm/policy.hpp"
#include "astred/safety/scorer.hpp"

namespace astred {

// Weights of the three reward terms: defender unsafeness, combined
// adversary+defender unsafeness, and the defender's mean log-likelihood of the
// adversary turn.
struct RewardWeights {
  double alpha = 1.0;
  double zeta = 1.0;
  double gamma = 0.25;

  void validate() const {
    for (double w : {alpha, zeta, gamma}) {
      if (!std::isfinite(w) || w < 0.0) throw InvalidArgument("reward weights must be finite and non-negative");
    }
  }
};

struct RewardBreakdown {
  double defense_term = 0.0;
  double combined_term = 0.0;
  double perplexity_term = 0.0;
  double total = 0.0;

  // Unweighted inputs, kept for reporting.
  double defense_score = 0.0;
  double combined_score = 0.0;
  double mean_logprob = 0.0;

  double log_perplexity() const { return -mean_logprob; }
};

// R(s, a, s') = alpha * R(s') + zeta * R(a, s') + gamma * log p_def(a | s) / len(a)
//
// `s` is everything before the adversary turn, `a` the adversary turn and
// `s_prime` the defender's reply. len(a) counts the adversary's tokens only.
inline RewardBreakdown compute_reward(const Policy& defender, const Scorer& scorer, const TokenSeq& s,
                                      const TokenSeq& a, const TokenSeq& s_prime,
                                      const RewardWeights& w) {
  if (a.empty()) throw InvalidArgument("compute_reward: empty adversary continuation");
  if (s_prime.empty()) throw InvalidArgument("compute_reward: empty defender response");
  w.validate();
  const Vocab& vocab = defender.vocab();
  const std::string ctx = vocab.detokenize(s);
  const std::string adv = vocab.detokenize(a);
  const std::string def = vocab.detokenize(s_prime);

  RewardBreakdown r;
  r.defense_score = score_defense(scorer, ctx, adv, def).value();
  r.combined_score = score_combined(scorer, ctx, adv, def).value();
  r.mean_logprob = defender.logprob(s, a).mean();
  r.defense_term = w.alpha * r.defense_score;
  r.combined_term = w.zeta * r.combined_score;
  r.perplexity_term = w.gamma * r.mean_logprob;
  r.total = r.defense_term + r.combined_term + r.perplexity_term;
  return r;
}

struct PairRanking {
  int winner;  // 1 or 2
  int loser;
};

// Higher total wins; an exact tie goes to the first sample.
inline PairRanking rank_pair(const RewardBreakdown& r1, const RewardBreakdown& r2) {
  if (r2.total > r1.total) return {2, 1};
  return {1, 2};
}

inline nlohmann::json to_json(const RewardBreakdown& r) {
  return {{"defense_term", r.defense_term},     {"combined_term", r.combined_term},
          {"perplexity_term", r.perplexity_term}, {"total", r.total},
          {"defense_score", r.defense_score},   {"combined_score", r.combined_score},
          {"mean_logprob", r.mean_logprob}};
}

inline RewardBreakdown reward_from_json(const nlohmann::json& j) {
  RewardBreakdown r;
  r.defense_term = j.at("defense_term").get<double>();
  r.combined_term = j.at("combined_term").get<double>();
  r.perplexity_term = j.at("perplexity_term").get<double>();
  r.total = j.at("total").get<double>();
  r.defense_score = j.at("defense_score").get<double>();
  r.combined_score = j.at("combined_score").get<double>();
  r.mean_logprob = j.at("mean_logprob").get<double>();
  return r;
}

}  // namespace astred
