#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"
#include "astred/lm/toy_policy.hpp"
#include "astred/rollout.hpp"
#include "astred/train/adamw.hpp"
#include "astred/train/online_ipo.hpp"
#include "astred/train/preference.hpp"

namespace astred {

struct FinetuneStats {
  std::vector<double> epoch_loss;  // mean loss over each pass
  std::size_t updates = 0;
};

// ---------------------------------------------------------------------------
// Supervised baseline: cross-entropy language modelling on a corpus of
// sequences, each read as a continuation of the empty context.

// Mean per-token negative log-likelihood.
inline double sft_loss(const Policy& policy, std::span<const TokenSeq> corpus) {
  double nll = 0.0;
  std::size_t tokens = 0;
  const TokenSeq empty;
  for (const auto& seq : corpus) {
    nll -= policy.logprob(empty, seq).sum;
    tokens += seq.size();
  }
  if (tokens == 0) throw InvalidArgument("sft_loss: corpus has no tokens");
  return nll / static_cast<double>(tokens);
}

inline FinetuneStats sft_finetune(ToyPolicy& policy, std::span<const TokenSeq> corpus, const TrainConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  if (corpus.empty()) throw InvalidArgument("sft_finetune: empty corpus");
  for (const auto& s : corpus) require_continuation(s);

  AdamW opt(policy.num_params(), cfg.adam);
  Rng rng(seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad(policy.num_params());
  const TokenSeq empty;
  FinetuneStats stats;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::size_t batch_tokens = 0;
      for (std::size_t i = start; i < end; ++i) batch_tokens += corpus[order[i]].size();
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& seq = corpus[order[i]];
        epoch_nll -= policy.logprob(empty, seq).sum;
        // Minimizing NLL: gradient is minus the log-likelihood gradient.
        policy.accumulate_grad_logprob(empty, seq, -1.0 / static_cast<double>(batch_tokens), grad);
      }
      epoch_tokens += batch_tokens;
      opt.step(policy.mutable_logits(), grad, cfg.learning_rate);
      ++stats.updates;
    }
    stats.epoch_loss.push_back(epoch_nll / static_cast<double>(epoch_tokens));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Defender hardening with DPO.

struct DpoPair {
  TokenSeq prompt;
  TokenSeq chosen{Role::defender};
  TokenSeq rejected{Role::defender};
};

// Mean DPO loss over the dataset.
inline double dpo_dataset_loss(const Policy& policy, const Policy& reference, std::span<const DpoPair> pairs,
                               double beta) {
  if (pairs.empty()) throw InvalidArgument("dpo: empty pair dataset");
  double total = 0.0;
  for (const auto& p : pairs)
    total += dpo_loss(preference_margin(policy, reference, p.prompt, p.chosen, p.rejected), beta);
  return total / static_cast<double>(pairs.size());
}

// Minimize -log sigmoid(beta * margin) over the pairs, pushing the defender
// toward the chosen rollouts and away from the rejected ones. Uses the
// learning rate, beta, batch size, epochs and optimizer settings of `cfg`.
inline FinetuneStats dpo_harden(ToyPolicy& defender, const Policy& reference, std::span<const DpoPair> pairs,
                                const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (pairs.empty()) throw InvalidArgument("dpo_harden: empty pair dataset");
  AdamW opt(defender.num_params(), cfg.adam);
  Rng rng(seed);
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad(defender.num_params());
  FinetuneStats stats;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = start; i < end; ++i) {
        const auto& p = pairs[order[i]];
        epoch_loss += dpo_loss_and_grad(defender, reference, p.prompt, p.chosen, p.rejected, cfg.beta, scale, grad)
                          .loss;
      }
      opt.step(defender.mutable_logits(), grad, cfg.learning_rate);
      ++stats.updates;
    }
    stats.epoch_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));
  }
  return stats;
}

// Everything said after the seed in an attack, flattened into one sequence.
inline TokenSeq flatten_rollout(const AttackTrace& trace) {
  TokenSeq out(Role::defender);
  for (const auto& t : trace.turns) {
    for (Token tok : t.adversary.tokens()) out.push_back(tok);
    for (Token tok : t.defender.tokens()) out.push_back(tok);
  }
  return out;
}

// Pairs for hardening: for each prompt, the baseline adversary's rollout is
// preferred and the trained adversary's rollout is rejected.
inline std::vector<DpoPair> build_hardening_pairs(const Policy& baseline, const Policy& adversary,
                                                  const Policy& defender, const Scorer& scorer,
                                                  std::span<const SeedPrompt> prompts, int turns,
                                                  const RolloutSettings& sampling, std::uint64_t seed) {
  std::vector<DpoPair> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) {
    Rng base_rng(derive_seed(seed, fnv1a64(p.id) ^ 0x1));
    Rng adv_rng(derive_seed(seed, fnv1a64(p.id) ^ 0x2));
    const auto good = attack_chain(baseline, defender, scorer, p.tokens, turns, sampling, base_rng);
    const auto bad = attack_chain(adversary, defender, scorer, p.tokens, turns, sampling, adv_rng);
    out.push_back(DpoPair{p.tokens, flatten_rollout(good), flatten_rollout(bad)});
  }
  return out;
}

}  // namespace astred
