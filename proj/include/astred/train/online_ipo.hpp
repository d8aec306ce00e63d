#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"
#include "astred/data/corpus.hpp"
#include "astred/lm/toy_policy.hpp"
#include "astred/reward.hpp"
#include "astred/rollout.hpp"
#include "astred/train/adamw.hpp"
#include "astred/train/preference.hpp"

namespace astred {

struct TrainConfig {
  double beta = 0.01;
  double learning_rate = 0.05;
  int episodes_per_epoch = 512;
  int batch_size = 8;
  int epochs = 1;
  // Per-episode probability of drawing the seed from the weak-supervision corpus.
  double rho = 0.5;
  int horizon = 3;
  AdamWConfig adam;

  void validate() const {
    if (!(beta > 0.0)) throw ConfigError("train.beta", "must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("train.learning_rate", "must be finite and non-negative");
    if (episodes_per_epoch < 1) throw ConfigError("train.episodes_per_epoch", "must be positive");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be positive");
    if (epochs < 0) throw ConfigError("train.epochs", "must be non-negative");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("train.rho", "must lie in [0, 1]");
    if (horizon < 0) throw ConfigError("train.horizon", "must be non-negative");
    adam.validate();
  }
};

struct SeedPrompt {
  std::string id;
  TokenSeq tokens;
};

enum class SeedSource { nontoxic, weak };

inline std::string_view to_string(SeedSource s) { return s == SeedSource::weak ? "weak" : "nontoxic"; }

struct PromptSource {
  std::vector<SeedPrompt> nontoxic;
  std::vector<SeedPrompt> weak;

  static std::vector<SeedPrompt> tokenize(const Vocab& vocab, const std::vector<PromptRecord>& records) {
    std::vector<SeedPrompt> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.id, vocab.tokenize(r.text)});
    return out;
  }
};

struct EpisodeRecord {
  std::string seed_id;
  SeedSource source = SeedSource::nontoxic;
  std::size_t triples = 0;
  double mean_loss = 0.0;
};

struct EpochStats {
  int epoch = 0;
  std::size_t episodes = 0;
  std::size_t triples = 0;
  std::size_t updates = 0;
  std::size_t weak_episodes = 0;
  double mean_loss = 0.0;
  double mean_h = 0.0;
  double mean_reward_plus = 0.0;
  double mean_reward_minus = 0.0;
  // Over both candidates of every node.
  double mean_defense_score = 0.0;
  double mean_log_perplexity = 0.0;
  std::vector<EpisodeRecord> episode_log;
};

inline nlohmann::json to_json(const EpochStats& s) {
  return {{"epoch", s.epoch},
          {"episodes", s.episodes},
          {"triples", s.triples},
          {"updates", s.updates},
          {"weak_episodes", s.weak_episodes},
          {"mean_loss", s.mean_loss},
          {"mean_h", s.mean_h},
          {"mean_reward_plus", s.mean_reward_plus},
          {"mean_reward_minus", s.mean_reward_minus},
          {"mean_defense_score", s.mean_defense_score},
          {"mean_log_perplexity", s.mean_log_perplexity}};
}

// Frozen pieces of an online IPO run.
struct IpoEnvironment {
  const Policy& reference;
  const Policy& defender;
  const Scorer& scorer;
  RewardWeights weights;
  RolloutSettings sampling;
};

using TripleSink = std::function<void(const PreferenceTriple&, const TripleProvenance&)>;

// One epoch of online IPO: every episode draws a seed prompt, grows a fresh
// rollout tree with the current adversary, then takes one optimizer step per
// minibatch of that tree's shuffled triples.
inline EpochStats train_epoch(ToyPolicy& adversary, AdamW& optimizer, const IpoEnvironment& env,
                              const PromptSource& prompts, const TrainConfig& cfg, Rng& rng, int epoch_index = 0,
                              const TripleSink& sink = nullptr) {
  cfg.validate();
  if (prompts.nontoxic.empty() && cfg.rho < 1.0) throw InvalidArgument("train_epoch: empty prompt source");
  if (prompts.weak.empty() && cfg.rho > 0.0)
    throw InvalidArgument("train_epoch: rho > 0 needs a weak-supervision corpus");
  if (optimizer.size() != adversary.num_params()) throw InvalidArgument("train_epoch: optimizer shape mismatch");

  EpochStats stats;
  stats.epoch = epoch_index;
  std::vector<double> grad(adversary.num_params());
  double sum_loss = 0, sum_h = 0, sum_rp = 0, sum_rm = 0, sum_def = 0, sum_ppl = 0;

  for (int ep = 0; ep < cfg.episodes_per_epoch; ++ep) {
    // Always consume the coin so seed streams line up across rho values.
    const bool weak = rng.uniform() < cfg.rho;
    const auto& pool = weak ? prompts.weak : prompts.nontoxic;
    const SeedPrompt& seed = pool[rng.index(pool.size())];

    auto tree = rollout_tree(adversary, env.defender, env.scorer, env.weights, seed.tokens, cfg.horizon,
                             env.sampling, rng);
    if (sink) {
      for (const auto& t : tree) sink(t, TripleProvenance{epoch_index, ep, seed.id});
    }
    rng.shuffle(tree);

    EpisodeRecord rec{seed.id, weak ? SeedSource::weak : SeedSource::nontoxic, tree.size(), 0.0};
    double ep_loss = 0.0;
    for (std::size_t start = 0; start < tree.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(tree.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& t = tree[i];
        const auto [loss, h] = ipo_loss_and_grad(adversary, env.reference, t.context, t.preferred,
                                                 t.rejected, cfg.beta, scale, grad);
        ep_loss += loss;
        sum_loss += loss;
        sum_h += h;
        sum_rp += t.reward_plus.total;
        sum_rm += t.reward_minus.total;
        sum_def += t.reward_plus.defense_score + t.reward_minus.defense_score;
        sum_ppl += t.reward_plus.log_perplexity() + t.reward_minus.log_perplexity();
      }
      optimizer.step(adversary.mutable_logits(), grad, cfg.learning_rate);
      ++stats.updates;
    }
    rec.mean_loss = tree.empty() ? 0.0 : ep_loss / static_cast<double>(tree.size());
    stats.triples += tree.size();
    stats.weak_episodes += weak ? 1 : 0;
    stats.episode_log.push_back(std::move(rec));
  }
  stats.episodes = static_cast<std::size_t>(cfg.episodes_per_epoch);
  if (stats.triples > 0) {
    const double n = static_cast<double>(stats.triples);
    stats.mean_loss = sum_loss / n;
    stats.mean_h = sum_h / n;
    stats.mean_reward_plus = sum_rp / n;
    stats.mean_reward_minus = sum_rm / n;
    stats.mean_defense_score = sum_def / (2 * n);
    stats.mean_log_perplexity = sum_ppl / (2 * n);
  }
  return stats;
}

}  // namespace astred
