#pragma once

#include <functional>
#include <sstream>
#include <vector>

#include "astred/data/corpus.hpp"
#include "astred/eval/metrics.hpp"
#include "astred/toy/world.hpp"
#include "astred/train/finetune.hpp"
#include "astred/train/online_ipo.hpp"

// End-to-end runs in the toy world: train an adversary from a copy of the
// defender, evaluate it against the untuned copy, optionally harden the
// defender against it.
namespace astred::toy {

struct ScenarioParams {
  WorldParams world;
  TrainConfig train = default_train();
  RewardWeights weights;
  int eval_turns = 3;
  int harden_epochs = 20;
  double harden_learning_rate = 0.01;

  static TrainConfig default_train() {
    TrainConfig c;
    c.learning_rate = 0.01;
    c.episodes_per_epoch = 64;
    c.epochs = 50;
    return c;
  }
};

struct ScenarioData {
  World world;
  std::vector<PromptRecord> records;  // ingested and split
  PromptSource train;                 // train split plus weak prompts
  std::vector<SeedPrompt> test;
};

// Routes the world's prompts through ingest and the 60/10/30 split.
inline ScenarioData make_scenario_data(const WorldParams& p) {
  World world = make_world(p);
  std::ostringstream corpus, weak_corpus;
  for (const auto& s : world.prompts) corpus << s << '\n';
  for (const auto& s : world.weak_prompts) weak_corpus << s << '\n';
  std::istringstream cin(corpus.str()), win(weak_corpus.str());
  auto records = load_corpus(cin, world.scorer).records;
  assign_splits(records, SplitRatios{}, p.seed);
  auto weak = load_corpus(win, world.scorer).records;

  ScenarioData d{std::move(world), std::move(records), {}, {}};
  d.train.nontoxic = PromptSource::tokenize(d.world.vocab, select_split(d.records, Split::train));
  d.train.weak = PromptSource::tokenize(d.world.vocab, weak);
  d.test = PromptSource::tokenize(d.world.vocab, select_split(d.records, Split::test));
  return d;
}

struct AttackOutcome {
  ToyPolicy adversary;
  std::vector<EpochStats> epochs;
  MetricsReport baseline;  // untuned adversary (defender copy)
  MetricsReport trained;
};

inline std::uint64_t eval_seed(std::uint64_t seed) { return derive_seed(seed, 0x6576616c); }

inline AttackOutcome run_attack(const ScenarioData& d, const ScenarioParams& p, std::uint64_t seed,
                                const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
  const auto sampling = default_sampling();
  const ToyPolicy& defender = d.world.defender;
  AttackOutcome out{defender, {}, {}, {}};
  AdamW opt(out.adversary.num_params(), p.train.adam);
  IpoEnvironment env{defender, defender, d.world.scorer, p.weights, sampling};
  Rng rng(seed);
  for (int e = 0; e < p.train.epochs; ++e) {
    out.epochs.push_back(train_epoch(out.adversary, opt, env, d.train, p.train, rng, e));
    if (on_epoch) on_epoch(out.epochs.back());
  }
  out.baseline =
      evaluate(defender, defender, d.world.scorer, d.test, p.eval_turns, sampling, eval_seed(seed), p.weights).report;
  out.trained = evaluate(out.adversary, defender, d.world.scorer, d.test, p.eval_turns, sampling, eval_seed(seed),
                         p.weights)
                    .report;
  return out;
}

struct HardenOutcome {
  ToyPolicy hardened;
  FinetuneStats stats;
  MetricsReport before;  // trained adversary vs original defender
  MetricsReport after;   // trained adversary vs hardened defender
};

// Pairs come from the train split; the before/after attack runs on test.
inline HardenOutcome run_hardening(const ScenarioData& d, const ScenarioParams& p, const ToyPolicy& adversary,
                                   std::uint64_t seed) {
  const auto sampling = default_sampling();
  const ToyPolicy& defender = d.world.defender;
  const auto pairs = build_hardening_pairs(defender, adversary, defender, d.world.scorer, d.train.nontoxic,
                                           p.eval_turns, sampling, derive_seed(seed, 0x70616972));
  TrainConfig hc = p.train;
  hc.epochs = p.harden_epochs;
  hc.learning_rate = p.harden_learning_rate;
  HardenOutcome out{defender, {}, {}, {}};
  out.stats = dpo_harden(out.hardened, defender, pairs, hc, derive_seed(seed, 0x64706f));
  out.before =
      evaluate(adversary, defender, d.world.scorer, d.test, p.eval_turns, sampling, eval_seed(seed), p.weights).report;
  out.after = evaluate(adversary, out.hardened, d.world.scorer, d.test, p.eval_turns, sampling, eval_seed(seed),
                       p.weights)
                  .report;
  return out;
}

}  // namespace astred::toy
