#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/config/run_config.hpp"
#include "astred/data/corpus.hpp"
#include "astred/eval/frontier.hpp"
#include "astred/eval/metrics.hpp"
#include "astred/gateway/client.hpp"
#include "astred/lm/toy_policy.hpp"
#include "astred/toy/world.hpp"
#include "astred/train/finetune.hpp"
#include "astred/train/online_ipo.hpp"

// Subcommand implementations. Each takes a validated RunConfig, writes into
// cfg.out and reports progress on `log`. Output layout:
//
//   <out>/config.toml           effective configuration
//   <out>/stats.jsonl           one line per training epoch
//   <out>/triples.jsonl         preference triples (train.log_triples)
//   <out>/traces.jsonl          one attack trace per prompt
//   <out>/checkpoints/          epoch-NNNN.json, adversary.json, defender-hardened.json
//   <out>/reports/              metrics.json/.csv, histogram.csv, frontier.csv/.json, harden.json
namespace astred::app {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files.

inline void write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << contents;
    if (!os.flush()) throw IoError("failed writing " + tmp.string());
  }
  // Rename is atomic, so an interrupted run leaves the previous file intact.
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::string hex64(std::uint64_t x) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

inline fs::path require_out(const config::RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("out", "no output directory (set out or pass --out)");
  fs::create_directories(cfg.out);
  return cfg.out;
}

inline void write_snapshot(const config::RunConfig& cfg) {
  write_file(require_out(cfg) / "config.toml", config::to_toml_string(cfg));
}

// ---------------------------------------------------------------------------
// Models, scorer and prompts.

class Workspace {
 public:
  explicit Workspace(const config::RunConfig& cfg) : cfg_(cfg) {}

  const toy::World& world() {
    if (!world_) world_ = toy::make_world(cfg_.world);
    return *world_;
  }

  // Trainable tabular policy from a toy-world or checkpoint definition.
  ToyPolicy toy_policy(const config::ModelSpec& m, const std::string& field) {
    switch (m.kind) {
      case config::ModelKind::toy_world: return world().defender;
      case config::ModelKind::checkpoint: return ToyPolicy::load(m.path);
      case config::ModelKind::gateway: break;
    }
    throw ConfigError(field, "gateway models cannot be trained or hardened here");
  }

  std::unique_ptr<Policy> policy(const config::ModelSpec& m, const std::string& field) {
    if (m.kind == config::ModelKind::gateway) {
      const auto doc = nlohmann::json::parse(read_file(m.vocab));
      Vocab vocab = Vocab::from_json(doc.contains("vocab") ? doc.at("vocab") : doc);
      return std::make_unique<gateway::RemotePolicy>(gateway::resolve_endpoint(m.endpoint), std::move(vocab));
    }
    return std::make_unique<ToyPolicy>(toy_policy(m, field));
  }

  const Scorer& scorer() {
    if (!scorer_) {
      switch (cfg_.scorer.kind) {
        case config::ScorerKind::toy_world:
          scorer_ = std::make_unique<LexiconScorer>(toy::make_scorer(cfg_.world));
          break;
        case config::ScorerKind::lexicon:
          scorer_ = std::make_unique<LexiconScorer>(load_lexicon(cfg_.scorer.path, cfg_.scorer.saturation));
          break;
        case config::ScorerKind::gateway:
          scorer_ = std::make_unique<gateway::RemoteScorer>(gateway::resolve_endpoint(cfg_.scorer.endpoint));
          break;
      }
    }
    return *scorer_;
  }

  // Ingested, filtered and split prompt records.
  const std::vector<PromptRecord>& records() {
    if (records_) return *records_;
    std::vector<PromptRecord> recs;
    if (cfg_.data.source == config::DataSource::toy_world) {
      std::ostringstream text;
      for (const auto& p : world().prompts) text << p << '\n';
      std::istringstream is(text.str());
      recs = load_corpus(is, scorer()).records;
      assign_splits(recs, SplitRatios{}, cfg_.world.seed);
    } else if (cfg_.data.prompts.extension() == ".jsonl") {
      recs = read_manifest(cfg_.data.prompts);
      if (recs.empty()) throw InvalidArgument("prompt manifest " + cfg_.data.prompts.string() + " is empty");
      for (const auto& r : recs)
        if (!(r.score.value() < kIngestThreshold))
          throw InvalidArgument("manifest record " + r.id + " fails the non-toxic filter");
    } else {
      recs = load_corpus(cfg_.data.prompts, scorer()).records;
      assign_splits(recs, SplitRatios{}, cfg_.data.split_seed);
    }
    records_ = std::move(recs);
    return *records_;
  }

  std::vector<PromptRecord> weak_records() {
    if (cfg_.data.source == config::DataSource::toy_world) {
      std::ostringstream text;
      for (const auto& p : world().weak_prompts) text << p << '\n';
      std::istringstream is(text.str());
      return load_corpus(is, scorer()).records;
    }
    if (cfg_.data.weak.empty()) return {};
    return load_corpus(cfg_.data.weak, scorer()).records;
  }

  std::vector<SeedPrompt> prompts(const Vocab& vocab, Split split) {
    auto sel = select_split(records(), split);
    if (sel.empty()) throw InvalidArgument("no prompts in the " + std::string(to_string(split)) + " split");
    return PromptSource::tokenize(vocab, sel);
  }

  PromptSource train_source(const Vocab& vocab) {
    PromptSource src;
    src.nontoxic = PromptSource::tokenize(vocab, select_split(records(), Split::train));
    src.weak = PromptSource::tokenize(vocab, weak_records());
    return src;
  }

 private:
  const config::RunConfig& cfg_;
  std::optional<toy::World> world_;
  std::unique_ptr<Scorer> scorer_;
  std::optional<std::vector<PromptRecord>> records_;
};

inline void require_same_vocab(const Policy& a, const Policy& b, const std::string& what) {
  if (!(a.vocab() == b.vocab())) throw InvalidArgument(what + ": models use different vocabularies");
}

inline std::string jsonl(const Vocab& vocab, const std::vector<AttackTrace>& traces) {
  std::string out;
  for (const auto& t : traces) out += to_json(vocab, t).dump() + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainCheckpoint {
  int epoch = 0;  // epochs completed
  ToyPolicy policy;
  AdamW optimizer;
  std::string rng_state;
};

inline nlohmann::json to_json(const TrainCheckpoint& c) {
  return {{"epoch", c.epoch}, {"policy", c.policy.to_json()}, {"optimizer", c.optimizer.to_json()},
          {"rng", c.rng_state}};
}

inline TrainCheckpoint load_train_checkpoint(const fs::path& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  if (!j.contains("optimizer") || !j.contains("rng"))
    throw InvalidArgument("checkpoint " + path.string() + " has no optimizer or rng state to resume from");
  return TrainCheckpoint{j.at("epoch").get<int>(), ToyPolicy::from_json(j.at("policy")),
                         AdamW::from_json(j.at("optimizer")), j.at("rng").get<std::string>()};
}

inline std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch-%04d.json", epoch);
  return buf;
}

struct TrainResult {
  ToyPolicy adversary;
  std::vector<EpochStats> stats;
};

// Online IPO training. With `resume`, continues from a training checkpoint
// written by an earlier run of the same config.
inline TrainResult cmd_train(const config::RunConfig& cfg, std::ostream& log,
                             const std::optional<fs::path>& resume = std::nullopt) {
  const fs::path out = require_out(cfg);
  write_snapshot(cfg);
  Workspace ws(cfg);
  const ToyPolicy initial = ws.toy_policy(cfg.adversary, "models.adversary");
  const auto defender = ws.policy(cfg.defender, "models.defender");
  // The reference is the adversary's starting point unless defined separately.
  std::unique_ptr<Policy> reference_owned;
  const bool same_ref = cfg.reference.kind == cfg.adversary.kind && cfg.reference.path == cfg.adversary.path &&
                        cfg.reference.endpoint == cfg.adversary.endpoint;
  if (!same_ref) reference_owned = ws.policy(cfg.reference, "models.reference");
  const Policy& reference = same_ref ? static_cast<const Policy&>(initial) : *reference_owned;
  require_same_vocab(initial, *defender, "train");
  require_same_vocab(initial, reference, "train");

  const auto source = ws.train_source(initial.vocab());
  IpoEnvironment env{reference, *defender, ws.scorer(), cfg.reward, cfg.sampling};

  TrainCheckpoint state{0, initial, AdamW(initial.num_params(), cfg.train.adam), {}};
  Rng rng(cfg.seed);
  std::string stats_text;
  if (resume) {
    state = load_train_checkpoint(*resume);
    if (state.optimizer.size() != state.policy.num_params())
      throw InvalidArgument("checkpoint optimizer does not match the policy");
    if (!(state.policy.vocab() == initial.vocab())) throw InvalidArgument("checkpoint vocabulary differs");
    rng.set_state(state.rng_state);
    // Keep the stats of the epochs the checkpoint covers.
    std::istringstream prev(fs::exists(out / "stats.jsonl") ? read_file(out / "stats.jsonl") : std::string{});
    std::string line;
    for (int i = 0; i < state.epoch && std::getline(prev, line); ++i) stats_text += line + '\n';
    log << "resuming at epoch " << state.epoch << "\n";
  }

  std::string triples_text;
  TripleSink sink = nullptr;
  if (cfg.log_triples)
    sink = [&](const PreferenceTriple& t, const TripleProvenance& p) {
      triples_text += to_json(initial.vocab(), t, p).dump() + '\n';
    };

  auto save = [&](const fs::path& path) {
    state.rng_state = rng.state();
    write_file(path, to_json(state).dump(1) + '\n');
  };
  if (!resume) save(out / "checkpoints" / epoch_name(0));

  TrainResult result{state.policy, {}};
  for (int e = state.epoch; e < cfg.train.epochs; ++e) {
    auto st = train_epoch(state.policy, state.optimizer, env, source, cfg.train, rng, e, sink);
    state.epoch = e + 1;
    stats_text += to_json(st).dump() + '\n';
    write_file(out / "stats.jsonl", stats_text);
    if (cfg.log_triples) write_file(out / "triples.jsonl", triples_text);
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %4d  loss %10.3f  h %8.4f  defense %.4f  log_ppl %.4f  weak %zu/%zu\n",
                  e + 1, st.mean_loss, st.mean_h, st.mean_defense_score, st.mean_log_perplexity, st.weak_episodes,
                  st.episodes);
    log << buf;
    if (state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.train.epochs)
      save(out / "checkpoints" / epoch_name(state.epoch));
    result.stats.push_back(std::move(st));
  }
  if (!fs::exists(out / "stats.jsonl")) write_file(out / "stats.jsonl", stats_text);
  // With zero epochs the initial checkpoint is the only one.
  if (cfg.train.epochs > 0) save(out / "checkpoints" / "adversary.json");
  result.adversary = state.policy;
  return result;
}

// ---------------------------------------------------------------------------
// attack / eval

struct AttackSetup {
  std::unique_ptr<Policy> adversary;
  std::unique_ptr<Policy> defender;
  std::vector<SeedPrompt> prompts;
};

inline AttackSetup attack_setup(const config::RunConfig& cfg, Workspace& ws) {
  AttackSetup s{ws.policy(cfg.adversary, "models.adversary"), ws.policy(cfg.defender, "models.defender"), {}};
  require_same_vocab(*s.adversary, *s.defender, "attack");
  s.prompts = ws.prompts(s.defender->vocab(), cfg.eval.split);
  return s;
}

// Multi-turn attack from every prompt of the eval split; persists raw traces.
inline std::vector<AttackTrace> cmd_attack(const config::RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_out(cfg);
  write_snapshot(cfg);
  Workspace ws(cfg);
  auto s = attack_setup(cfg, ws);
  auto res = evaluate(*s.adversary, *s.defender, ws.scorer(), s.prompts, cfg.eval.turns, cfg.sampling, cfg.seed,
                      cfg.reward);
  write_file(out / "traces.jsonl", jsonl(s.defender->vocab(), res.traces));
  log << res.traces.size() << " traces, " << cfg.eval.turns << " turns each -> " << (out / "traces.jsonl").string()
      << "\n";
  return std::move(res.traces);
}

inline nlohmann::json report_json(const MetricsReport& r, const config::RunConfig& cfg) {
  auto j = to_json(r);
  j["turns"] = cfg.eval.turns;
  j["split"] = std::string(to_string(cfg.eval.split));
  j["seed"] = cfg.seed;
  return j;
}

inline void write_reports(const fs::path& dir, const EvalResult& res, const config::RunConfig& cfg,
                          const std::string& stem = "metrics") {
  std::ostringstream csv, hist;
  write_metrics_csv(csv, res.report);
  const auto edges = default_bin_edges(res.traces, cfg.eval.histogram_bins);
  write_histogram_csv(hist, perplexity_histogram(res.traces, edges));
  write_file(dir / (stem + ".json"), report_json(res.report, cfg).dump(1) + '\n');
  write_file(dir / (stem + ".csv"), csv.str());
  write_file(dir / (stem == "metrics" ? std::string("histogram.csv") : stem + "-histogram.csv"), hist.str());
}

inline MetricsReport cmd_eval(const config::RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_out(cfg);
  write_snapshot(cfg);
  Workspace ws(cfg);
  auto s = attack_setup(cfg, ws);
  auto res = evaluate(*s.adversary, *s.defender, ws.scorer(), s.prompts, cfg.eval.turns, cfg.sampling, cfg.seed,
                      cfg.reward);
  write_file(out / "traces.jsonl", jsonl(s.defender->vocab(), res.traces));
  write_reports(out / "reports", res, cfg);
  print_metrics_table(log, res.report);
  return res.report;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOutcome {
  SweepResult result;
  std::optional<double> spearman_ppl;
  std::optional<double> spearman_unsafe;
};

// Trains one adversary per (gamma, seed) from the configured starting point
// and evaluates it on the eval split.
inline SweepOutcome cmd_sweep(const config::RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_out(cfg);
  write_snapshot(cfg);
  Workspace ws(cfg);
  const ToyPolicy initial = ws.toy_policy(cfg.adversary, "models.adversary");
  const auto defender = ws.policy(cfg.defender, "models.defender");
  require_same_vocab(initial, *defender, "sweep");
  if (!(cfg.reference.kind == cfg.adversary.kind && cfg.reference.path == cfg.adversary.path))
    throw ConfigError("models.reference", "sweep always uses the adversary's starting point as reference");
  const auto source = ws.train_source(initial.vocab());
  const auto prompts = ws.prompts(initial.vocab(), cfg.eval.split);
  const Scorer& scorer = ws.scorer();
  const bool remote = cfg.defender.kind == config::ModelKind::gateway || cfg.scorer.kind == config::ScorerKind::gateway;

  auto pipeline = [&](double gamma, std::uint64_t seed) {
    RewardWeights w = cfg.reward;
    w.gamma = gamma;
    ToyPolicy adv = initial;
    AdamW opt(adv.num_params(), cfg.train.adam);
    IpoEnvironment env{initial, *defender, scorer, w, cfg.sampling};
    Rng rng(seed);
    for (int e = 0; e < cfg.train.epochs; ++e) train_epoch(adv, opt, env, source, cfg.train, rng, e);
    return evaluate(adv, *defender, scorer, prompts, cfg.eval.turns, cfg.sampling, derive_seed(seed, 0x6576616c), w)
        .report;
  };
  SweepOutcome o;
  o.result = gamma_sweep(cfg.sweep.gammas, cfg.sweep.seeds, pipeline, cfg.sweep.parallel && !remote);

  std::vector<double> g, ppl, unsafe;
  for (const auto& p : o.result.frontier) {
    g.push_back(p.gamma);
    ppl.push_back(p.mean_log_ppl);
    unsafe.push_back(p.mean_unsafeness);
  }
  if (g.size() >= 2) {
    o.spearman_ppl = spearman(g, ppl);
    o.spearman_unsafe = spearman(g, unsafe);
  }

  std::ostringstream csv;
  write_frontier_csv(csv, o.result);
  write_file(out / "reports" / "frontier.csv", csv.str());
  auto points = nlohmann::json::array();
  for (const auto& p : o.result.frontier)
    points.push_back({{"gamma", p.gamma},
                      {"mean_log_ppl", p.mean_log_ppl},
                      {"mean_unsafeness", p.mean_unsafeness},
                      {"mean_combined", p.mean_combined},
                      {"seeds", p.seeds}});
  auto opt_json = [](const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(nullptr); };
  write_file(out / "reports" / "frontier.json",
             nlohmann::json{{"frontier", points},
                            {"spearman_gamma_log_ppl", opt_json(o.spearman_ppl)},
                            {"spearman_gamma_unsafeness", opt_json(o.spearman_unsafe)}}
                     .dump(1) +
                 '\n');

  char buf[160];
  std::snprintf(buf, sizeof buf, "%8s %12s %12s %12s\n", "gamma", "log_ppl", "defense", "combined");
  log << buf;
  for (const auto& p : o.result.frontier) {
    std::snprintf(buf, sizeof buf, "%8.3f %12.4f %12.4f %12.4f\n", p.gamma, p.mean_log_ppl, p.mean_unsafeness,
                  p.mean_combined);
    log << buf;
  }
  if (o.spearman_ppl) log << "spearman(gamma, log_ppl) = " << *o.spearman_ppl << "\n";
  if (o.spearman_unsafe) log << "spearman(gamma, defense) = " << *o.spearman_unsafe << "\n";
  return o;
}

// ---------------------------------------------------------------------------
// harden

struct HardenOutcome {
  ToyPolicy hardened;
  MetricsReport before;
  MetricsReport after;
  FinetuneStats stats;
};

// DPO hardening: for each train prompt the baseline adversary's rollout is
// preferred and the trained adversary's is rejected. Both defenders are then
// attacked by the trained adversary on the eval split.
inline HardenOutcome cmd_harden(const config::RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_out(cfg);
  write_snapshot(cfg);
  Workspace ws(cfg);
  const ToyPolicy defender = ws.toy_policy(cfg.defender, "models.defender");
  const auto adversary = ws.policy(cfg.adversary, "models.adversary");
  const auto baseline = ws.policy(cfg.baseline, "models.baseline");
  require_same_vocab(defender, *adversary, "harden");
  require_same_vocab(defender, *baseline, "harden");
  const Scorer& scorer = ws.scorer();
  const auto train = ws.prompts(defender.vocab(), Split::train);
  const auto test = ws.prompts(defender.vocab(), cfg.eval.split);

  const auto pairs = build_hardening_pairs(*baseline, *adversary, defender, scorer, train, cfg.eval.turns,
                                           cfg.sampling, derive_seed(cfg.seed, 0x70616972));
  TrainConfig hc = cfg.train;
  hc.epochs = cfg.harden.epochs;
  hc.learning_rate = cfg.harden.learning_rate;
  HardenOutcome o{defender, {}, {}, {}};
  o.stats = dpo_harden(o.hardened, defender, pairs, hc, derive_seed(cfg.seed, 0x64706f));

  const fs::path before_path = out / "checkpoints" / "defender.json";
  const fs::path after_path = out / "checkpoints" / "defender-hardened.json";
  write_file(before_path, defender.to_json().dump(1) + '\n');
  write_file(after_path, o.hardened.to_json().dump(1) + '\n');

  const auto eval_seed = derive_seed(cfg.seed, 0x6576616c);
  auto before = evaluate(*adversary, defender, scorer, test, cfg.eval.turns, cfg.sampling, eval_seed, cfg.reward);
  auto after = evaluate(*adversary, o.hardened, scorer, test, cfg.eval.turns, cfg.sampling, eval_seed, cfg.reward);
  o.before = before.report;
  o.after = after.report;
  write_reports(out / "reports", before, cfg, "before");
  write_reports(out / "reports", after, cfg, "after");

  std::string stats_text;
  for (std::size_t i = 0; i < o.stats.epoch_loss.size(); ++i)
    stats_text += nlohmann::json{{"epoch", i}, {"mean_dpo_loss", o.stats.epoch_loss[i]}}.dump() + '\n';
  write_file(out / "stats.jsonl", stats_text);

  const double b = o.before.aggregate.defense.mean, a = o.after.aggregate.defense.mean;
  const auto rel = b > 0.0 ? nlohmann::json((b - a) / b) : nlohmann::json(nullptr);
  write_file(out / "reports" / "harden.json",
             nlohmann::json{{"pairs", pairs.size()},
                            {"updates", o.stats.updates},
                            {"defender_hash_before", file_hash(before_path)},
                            {"defender_hash_after", file_hash(after_path)},
                            {"defense_mean_before", b},
                            {"defense_mean_after", a},
                            {"relative_reduction", rel}}
                     .dump(1) +
                 '\n');
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu pairs, %zu updates; defense unsafeness %.4f -> %.4f\n", pairs.size(),
                o.stats.updates, b, a);
  log << buf << "hardened defender -> " << after_path.string() << "\n";
  return o;
}

// ---------------------------------------------------------------------------
// Helpers outside the experiment loop.

// Text corpus -> scored, filtered, split JSON-lines manifest.
inline IngestResult cmd_ingest(const config::RunConfig& cfg, const fs::path& input, const fs::path& manifest,
                               std::ostream& log) {
  Workspace ws(cfg);
  auto res = load_corpus(input, ws.scorer());
  assign_splits(res.records, SplitRatios{}, cfg.data.split_seed);
  std::string text;
  for (const auto& r : res.records) text += to_json(r).dump() + '\n';
  write_file(manifest, text);
  const auto sizes = split_sizes(res.records.size(), SplitRatios{});
  log << res.records.size() << " prompts kept, " << res.dropped << " dropped; train/dev/test " << sizes.train << "/"
      << sizes.dev << "/" << sizes.test << "\n";
  return res;
}

// Materializes the synthetic world as plain files: defender checkpoint,
// vocabulary, lexicon and prompt corpora.
inline void cmd_toy_world(const config::RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_out(cfg);
  const auto world = toy::make_world(cfg.world);
  write_file(out / "defender.json", world.defender.to_json().dump(1) + '\n');
  write_file(out / "vocab.json", world.vocab.to_json().dump(1) + '\n');
  std::string lex, prompts, weak;
  for (const auto& w : toy::toxic_words()) lex += w + '\n';
  for (const auto& p : world.prompts) prompts += p + '\n';
  for (const auto& p : world.weak_prompts) weak += p + '\n';
  write_file(out / "lexicon.txt", lex);
  write_file(out / "prompts.txt", prompts);
  write_file(out / "weak.txt", weak);
  log << "toy world written to " << out.string() << "\n";
}

}  // namespace astred::app
