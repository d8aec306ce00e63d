#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"
#include "astred/lm/vocab.hpp"

namespace astred {

struct SamplingConfig {
  double temperature = 0.7;
  double top_p = 0.7;
  int max_new_tokens = 32;
  // End-of-turn is masked until this many tokens exist, so turns are never empty.
  int min_new_tokens = 1;
  std::uint64_t rng_seed = 0;
  // Temperature-zero decoding: always take the most probable token.
  bool greedy = false;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      throw InvalidArgument("sampling: temperature must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("sampling: top_p must lie in (0, 1]");
    if (max_new_tokens < 1) throw InvalidArgument("sampling: max_new_tokens must be positive");
    if (min_new_tokens < 0 || min_new_tokens > max_new_tokens)
      throw InvalidArgument("sampling: min_new_tokens must lie in [0, max_new_tokens]");
  }
};

struct LogProbResult {
  std::vector<double> per_token;
  double sum = 0.0;

  double mean() const { return sum / static_cast<double>(per_token.size()); }
};

// A generative policy over a word vocabulary. Implementations are immutable
// from the caller's point of view: sampling only advances the caller's Rng.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual const Vocab& vocab() const = 0;

  // Per-token log-probabilities of `continuation` following `context`.
  virtual LogProbResult logprob(const TokenSeq& context, const TokenSeq& continuation) const = 0;

  virtual TokenSeq sample(const TokenSeq& context, const SamplingConfig& config, Rng& rng,
                          Role role = Role::adversary) const = 0;

  TokenSeq sample(const TokenSeq& context, const SamplingConfig& config,
                  Role role = Role::adversary) const {
    Rng rng(config.rng_seed);
    return sample(context, config, rng, role);
  }
};

inline void require_continuation(const TokenSeq& continuation) {
  if (continuation.empty()) throw InvalidArgument("empty continuation");
}

// Natural-log perplexity: minus the mean per-token log-probability.
inline double log_perplexity(const LogProbResult& lp) {
  if (lp.per_token.empty()) throw InvalidArgument("empty continuation");
  return -lp.mean();
}

inline double log_perplexity(const Policy& policy, const TokenSeq& context,
                             const TokenSeq& continuation) {
  return log_perplexity(policy.logprob(context, continuation));
}

}  // namespace astred
