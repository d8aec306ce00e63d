#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <toml.hpp>

#include "astred/core/error.hpp"
#include "astred/data/corpus.hpp"
#include "astred/reward.hpp"
#include "astred/rollout.hpp"
#include "astred/toy/world.hpp"
#include "astred/train/online_ipo.hpp"

// Run configuration, read from TOML. Schema (every key optional unless noted):
//
//   seed = 1                      global rng seed
//   out = "runs/name"             output directory
//
//   [models.defender]             required
//   kind = "toy-world" | "checkpoint" | "gateway"
//   path = "defender.json"        checkpoint file (kind = checkpoint)
//   endpoint = "http://host:port" (kind = gateway)
//   vocab = "vocab.json"          vocabulary for gateway text (kind = gateway)
//   [models.adversary]            defaults to the defender definition
//   [models.reference]            defaults to the adversary definition
//   [models.baseline]             untuned adversary for hardening; defaults to
//                                 the defender definition
//
//   [scorer]
//   kind = "toy-world" | "lexicon" | "gateway"
//   path = "lexicon.txt"          (kind = lexicon)
//   saturation = 3                (kind = lexicon)
//   endpoint = "..."              (kind = gateway)
//
//   [toy_world]                   parameters of the synthetic world
//   seed, eot_mass, unk_mass, mild_trigger_prob, strong_trigger_prob,
//   toxic_prob, mild_leak, strong_leak, toxic_persist, neutral_spread,
//   saturation, num_prompts, num_weak_prompts
//
//   [data]
//   source = "toy-world" | "files"
//   prompts = "prompts.txt"       text (one per line) or .jsonl manifest
//   weak = "weak.txt"             weak-supervision prompts, text
//   split_seed = 0                seed for the 60/10/30 split of text input
//
//   [reward]  alpha, zeta, gamma
//   [train]   beta, learning_rate, episodes_per_epoch, batch_size, epochs,
//             rho, horizon, checkpoint_every, log_triples
//   [train.adam]  beta1, beta2, epsilon, weight_decay
//   [sampling.adversary] / [sampling.defender]
//             temperature, top_p, max_new_tokens, min_new_tokens, greedy
//   [eval]    turns, split, histogram_bins
//   [sweep]   gammas, seeds, parallel
//   [harden]  epochs, learning_rate
//
// Unknown keys anywhere are rejected. Relative paths resolve against the
// directory of the config file.
namespace astred::config {

enum class ModelKind { toy_world, checkpoint, gateway };
enum class ScorerKind { toy_world, lexicon, gateway };
enum class DataSource { toy_world, files };

struct ModelSpec {
  ModelKind kind = ModelKind::toy_world;
  std::filesystem::path path;
  std::string endpoint;
  std::filesystem::path vocab;
};

struct ScorerSpec {
  ScorerKind kind = ScorerKind::toy_world;
  std::filesystem::path path;
  int saturation = LexiconScorer::kDefaultSaturation;
  std::string endpoint;
};

struct DataSpec {
  DataSource source = DataSource::toy_world;
  std::filesystem::path prompts;
  std::filesystem::path weak;
  std::uint64_t split_seed = 0;
};

struct EvalSpec {
  int turns = 3;
  Split split = Split::test;
  std::size_t histogram_bins = 8;
};

struct SweepSpec {
  std::vector<double> gammas{0.0, 0.25, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  bool parallel = false;
};

struct HardenSpec {
  int epochs = 20;
  double learning_rate = 0.01;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out;
  ModelSpec defender;
  ModelSpec adversary;
  ModelSpec reference;
  ModelSpec baseline;
  ScorerSpec scorer;
  toy::WorldParams world;
  DataSpec data;
  RewardWeights reward;
  TrainConfig train;
  int checkpoint_every = 10;
  bool log_triples = false;
  RolloutSettings sampling;
  EvalSpec eval;
  SweepSpec sweep;
  HardenSpec harden;
};

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::checkpoint: return "checkpoint";
    case ModelKind::gateway: return "gateway";
    case ModelKind::toy_world: break;
  }
  return "toy-world";
}

inline std::string_view to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::lexicon: return "lexicon";
    case ScorerKind::gateway: return "gateway";
    case ScorerKind::toy_world: break;
  }
  return "toy-world";
}

namespace detail {

inline std::string join(const std::string& prefix, std::string_view key) {
  return prefix.empty() ? std::string(key) : prefix + "." + std::string(key);
}

// A table plus the keys the schema allows in it. Every accessor records its
// key; `finish` rejects anything left over.
class Section {
 public:
  Section(const toml::table* t, std::string path) : table_(t), path_(std::move(path)) {}

  bool present() const { return table_ != nullptr; }
  const std::string& path() const { return path_; }
  bool has(std::string_view key) const { return table_ && table_->contains(key); }

  Section sub(std::string_view key) {
    allowed_.emplace(key);
    if (!table_) return Section(nullptr, join(path_, key));
    const toml::node* n = table_->get(key);
    if (!n) return Section(nullptr, join(path_, key));
    if (!n->is_table()) throw ConfigError(join(path_, key), "expected a table");
    return Section(n->as_table(), join(path_, key));
  }

  double real(std::string_view key, double fallback) {
    const toml::node* n = take(key);
    if (!n) return fallback;
    if (auto v = n->value_exact<double>()) return *v;
    if (auto v = n->value_exact<std::int64_t>()) return static_cast<double>(*v);
    throw ConfigError(join(path_, key), "expected a number");
  }

  std::int64_t integer(std::string_view key, std::int64_t fallback) {
    const toml::node* n = take(key);
    if (!n) return fallback;
    if (auto v = n->value_exact<std::int64_t>()) return *v;
    throw ConfigError(join(path_, key), "expected an integer");
  }

  std::uint64_t seed(std::string_view key, std::uint64_t fallback) {
    const auto v = integer(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(join(path_, key), "must be non-negative");
    return static_cast<std::uint64_t>(v);
  }

  int small_int(std::string_view key, int fallback) {
    const auto v = integer(key, fallback);
    if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(join(path_, key), "out of range");
    return static_cast<int>(v);
  }

  bool boolean(std::string_view key, bool fallback) {
    const toml::node* n = take(key);
    if (!n) return fallback;
    if (auto v = n->value_exact<bool>()) return *v;
    throw ConfigError(join(path_, key), "expected true or false");
  }

  std::optional<std::string> text(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return std::nullopt;
    if (auto v = n->value_exact<std::string>()) return *v;
    throw ConfigError(join(path_, key), "expected a string");
  }

  std::vector<double> reals(std::string_view key, std::vector<double> fallback) {
    const toml::node* n = take(key);
    if (!n) return fallback;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError(join(path_, key), "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *arr) {
      if (auto v = e.value_exact<double>()) out.push_back(*v);
      else if (auto i = e.value_exact<std::int64_t>()) out.push_back(static_cast<double>(*i));
      else throw ConfigError(join(path_, key), "expected an array of numbers");
    }
    return out;
  }

  std::vector<std::uint64_t> seeds(std::string_view key, std::vector<std::uint64_t> fallback) {
    const toml::node* n = take(key);
    if (!n) return fallback;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError(join(path_, key), "expected an array of integers");
    std::vector<std::uint64_t> out;
    for (const auto& e : *arr) {
      auto v = e.value_exact<std::int64_t>();
      if (!v || *v < 0) throw ConfigError(join(path_, key), "expected an array of non-negative integers");
      out.push_back(static_cast<std::uint64_t>(*v));
    }
    return out;
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      if (!allowed_.count(std::string(k.str()))) throw ConfigError(join(path_, k.str()), "unknown key");
    }
  }

 private:
  const toml::node* take(std::string_view key) {
    allowed_.emplace(key);
    return table_ ? table_->get(key) : nullptr;
  }

  const toml::table* table_;
  std::string path_;
  std::set<std::string> allowed_;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) path = base / path;
  return path.lexically_normal();
}

inline ModelSpec read_model(Section s, const std::filesystem::path& base) {
  ModelSpec m;
  const auto kind = s.text("kind");
  if (!kind) throw ConfigError(s.path() + ".kind", "missing");
  if (*kind == "toy-world") m.kind = ModelKind::toy_world;
  else if (*kind == "checkpoint") m.kind = ModelKind::checkpoint;
  else if (*kind == "gateway") m.kind = ModelKind::gateway;
  else throw ConfigError(s.path() + ".kind", "expected toy-world, checkpoint or gateway, got '" + *kind + "'");
  if (auto p = s.text("path")) m.path = resolve(base, *p);
  if (auto e = s.text("endpoint")) m.endpoint = *e;
  if (auto v = s.text("vocab")) m.vocab = resolve(base, *v);
  if (m.kind == ModelKind::checkpoint && m.path.empty()) throw ConfigError(s.path() + ".path", "missing");
  if (m.kind == ModelKind::gateway) {
    if (m.endpoint.empty()) throw ConfigError(s.path() + ".endpoint", "missing");
    if (m.vocab.empty()) throw ConfigError(s.path() + ".vocab", "missing");
  }
  s.finish();
  return m;
}

inline SamplingConfig read_sampling(Section s, SamplingConfig c) {
  c.temperature = s.real("temperature", c.temperature);
  c.top_p = s.real("top_p", c.top_p);
  c.max_new_tokens = s.small_int("max_new_tokens", c.max_new_tokens);
  c.min_new_tokens = s.small_int("min_new_tokens", c.min_new_tokens);
  c.greedy = s.boolean("greedy", c.greedy);
  s.finish();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(s.path(), e.what());
  }
  return c;
}

}  // namespace detail

// Parses and validates; `base` anchors relative paths.
inline RunConfig from_toml(const toml::table& root, const std::filesystem::path& base = {}) {
  using detail::Section;
  RunConfig c;
  Section top(&root, "");
  c.seed = top.seed("seed", c.seed);
  if (auto o = top.text("out")) c.out = detail::resolve(base, *o);

  Section models = top.sub("models");
  if (!models.has("defender")) throw ConfigError("models.defender", "missing model definition");
  c.defender = detail::read_model(models.sub("defender"), base);
  c.adversary = models.has("adversary") ? detail::read_model(models.sub("adversary"), base) : c.defender;
  c.reference = models.has("reference") ? detail::read_model(models.sub("reference"), base) : c.adversary;
  c.baseline = models.has("baseline") ? detail::read_model(models.sub("baseline"), base) : c.defender;
  models.finish();

  Section scorer = top.sub("scorer");
  if (auto k = scorer.text("kind")) {
    if (*k == "toy-world") c.scorer.kind = ScorerKind::toy_world;
    else if (*k == "lexicon") c.scorer.kind = ScorerKind::lexicon;
    else if (*k == "gateway") c.scorer.kind = ScorerKind::gateway;
    else throw ConfigError("scorer.kind", "expected toy-world, lexicon or gateway, got '" + *k + "'");
  }
  if (auto p = scorer.text("path")) c.scorer.path = detail::resolve(base, *p);
  c.scorer.saturation = scorer.small_int("saturation", c.scorer.saturation);
  if (auto e = scorer.text("endpoint")) c.scorer.endpoint = *e;
  if (c.scorer.kind == ScorerKind::lexicon && c.scorer.path.empty()) throw ConfigError("scorer.path", "missing");
  if (c.scorer.kind == ScorerKind::gateway && c.scorer.endpoint.empty())
    throw ConfigError("scorer.endpoint", "missing");
  if (c.scorer.saturation < 1) throw ConfigError("scorer.saturation", "must be positive");
  scorer.finish();

  Section world = top.sub("toy_world");
  auto& w = c.world;
  w.seed = world.seed("seed", w.seed);
  w.eot_mass = world.real("eot_mass", w.eot_mass);
  w.unk_mass = world.real("unk_mass", w.unk_mass);
  w.mild_trigger_prob = world.real("mild_trigger_prob", w.mild_trigger_prob);
  w.strong_trigger_prob = world.real("strong_trigger_prob", w.strong_trigger_prob);
  w.toxic_prob = world.real("toxic_prob", w.toxic_prob);
  w.mild_leak = world.real("mild_leak", w.mild_leak);
  w.strong_leak = world.real("strong_leak", w.strong_leak);
  w.toxic_persist = world.real("toxic_persist", w.toxic_persist);
  w.neutral_spread = world.real("neutral_spread", w.neutral_spread);
  w.saturation = world.small_int("saturation", w.saturation);
  {
    const auto n = world.integer("num_prompts", static_cast<std::int64_t>(w.num_prompts));
    const auto k = world.integer("num_weak_prompts", static_cast<std::int64_t>(w.num_weak_prompts));
    if (n < 3) throw ConfigError("toy_world.num_prompts", "must be at least 3");
    if (k < 1) throw ConfigError("toy_world.num_weak_prompts", "must be positive");
    w.num_prompts = static_cast<std::size_t>(n);
    w.num_weak_prompts = static_cast<std::size_t>(k);
  }
  world.finish();

  Section data = top.sub("data");
  if (auto s = data.text("source")) {
    if (*s == "toy-world") c.data.source = DataSource::toy_world;
    else if (*s == "files") c.data.source = DataSource::files;
    else throw ConfigError("data.source", "expected toy-world or files, got '" + *s + "'");
  }
  if (auto p = data.text("prompts")) c.data.prompts = detail::resolve(base, *p);
  if (auto p = data.text("weak")) c.data.weak = detail::resolve(base, *p);
  c.data.split_seed = data.seed("split_seed", c.data.split_seed);
  if (c.data.source == DataSource::files && c.data.prompts.empty()) throw ConfigError("data.prompts", "missing");
  data.finish();

  Section reward = top.sub("reward");
  c.reward.alpha = reward.real("alpha", c.reward.alpha);
  c.reward.zeta = reward.real("zeta", c.reward.zeta);
  c.reward.gamma = reward.real("gamma", c.reward.gamma);
  reward.finish();
  try {
    c.reward.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("reward", e.what());
  }

  Section train = top.sub("train");
  auto& t = c.train;
  t.beta = train.real("beta", t.beta);
  t.learning_rate = train.real("learning_rate", t.learning_rate);
  t.episodes_per_epoch = train.small_int("episodes_per_epoch", t.episodes_per_epoch);
  t.batch_size = train.small_int("batch_size", t.batch_size);
  t.epochs = train.small_int("epochs", t.epochs);
  t.rho = train.real("rho", t.rho);
  t.horizon = train.small_int("horizon", t.horizon);
  c.checkpoint_every = train.small_int("checkpoint_every", c.checkpoint_every);
  c.log_triples = train.boolean("log_triples", c.log_triples);
  Section adam = train.sub("adam");
  t.adam.beta1 = adam.real("beta1", t.adam.beta1);
  t.adam.beta2 = adam.real("beta2", t.adam.beta2);
  t.adam.epsilon = adam.real("epsilon", t.adam.epsilon);
  t.adam.weight_decay = adam.real("weight_decay", t.adam.weight_decay);
  adam.finish();
  train.finish();
  try {
    t.adam.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("train.adam", e.what());
  }
  t.validate();
  if (c.checkpoint_every < 1) throw ConfigError("train.checkpoint_every", "must be positive");

  Section sampling = top.sub("sampling");
  c.sampling.adversary_sampling = detail::read_sampling(sampling.sub("adversary"), c.sampling.adversary_sampling);
  c.sampling.defender_sampling = detail::read_sampling(sampling.sub("defender"), c.sampling.defender_sampling);
  sampling.finish();

  Section ev = top.sub("eval");
  c.eval.turns = ev.small_int("turns", c.eval.turns);
  if (auto s = ev.text("split")) {
    try {
      c.eval.split = split_from_string(*s);
    } catch (const InvalidArgument&) {
      throw ConfigError("eval.split", "expected train, dev or test");
    }
  }
  {
    const auto bins = ev.integer("histogram_bins", static_cast<std::int64_t>(c.eval.histogram_bins));
    if (bins < 1) throw ConfigError("eval.histogram_bins", "must be positive");
    c.eval.histogram_bins = static_cast<std::size_t>(bins);
  }
  if (c.eval.turns < 1) throw ConfigError("eval.turns", "must be positive");
  ev.finish();

  Section sweep = top.sub("sweep");
  c.sweep.gammas = sweep.reals("gammas", c.sweep.gammas);
  c.sweep.seeds = sweep.seeds("seeds", c.sweep.seeds);
  c.sweep.parallel = sweep.boolean("parallel", c.sweep.parallel);
  if (c.sweep.gammas.empty()) throw ConfigError("sweep.gammas", "must not be empty");
  for (double g : c.sweep.gammas)
    if (!(g >= 0.0)) throw ConfigError("sweep.gammas", "gamma must be >= 0");
  if (c.sweep.seeds.size() < 2) throw ConfigError("sweep.seeds", "need at least 2 seeds");
  sweep.finish();

  Section harden = top.sub("harden");
  c.harden.epochs = harden.small_int("epochs", c.harden.epochs);
  c.harden.learning_rate = harden.real("learning_rate", c.harden.learning_rate);
  if (c.harden.epochs < 0) throw ConfigError("harden.epochs", "must be non-negative");
  if (!(c.harden.learning_rate >= 0.0)) throw ConfigError("harden.learning_rate", "must be non-negative");
  harden.finish();

  top.finish();
  return c;
}

inline toml::table parse_toml(std::string_view text, const std::string& source = "config") {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError("", msg.str());
  }
}

inline toml::table read_toml(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_toml(ss.str(), path.string());
}

inline RunConfig load(const std::filesystem::path& path) {
  return from_toml(read_toml(path), path.parent_path());
}

// Emits a config that reproduces `c` when read back; all paths absolute.
inline toml::table to_toml(const RunConfig& c) {
  auto abs = [](const std::filesystem::path& p) { return std::filesystem::absolute(p).lexically_normal().string(); };
  auto model = [&](const ModelSpec& m) {
    toml::table t{{"kind", std::string(to_string(m.kind))}};
    if (!m.path.empty()) t.insert("path", abs(m.path));
    if (!m.endpoint.empty()) t.insert("endpoint", m.endpoint);
    if (!m.vocab.empty()) t.insert("vocab", abs(m.vocab));
    return t;
  };
  auto sampling = [](const SamplingConfig& s) {
    return toml::table{{"temperature", s.temperature},
                       {"top_p", s.top_p},
                       {"max_new_tokens", s.max_new_tokens},
                       {"min_new_tokens", s.min_new_tokens},
                       {"greedy", s.greedy}};
  };
  auto as_int = [](std::uint64_t v) { return static_cast<std::int64_t>(v); };

  toml::table root;
  root.insert("seed", as_int(c.seed));
  if (!c.out.empty()) root.insert("out", abs(c.out));
  root.insert("models", toml::table{{"defender", model(c.defender)},
                                    {"adversary", model(c.adversary)},
                                    {"reference", model(c.reference)},
                                    {"baseline", model(c.baseline)}});
  toml::table scorer{{"kind", std::string(to_string(c.scorer.kind))}, {"saturation", c.scorer.saturation}};
  if (!c.scorer.path.empty()) scorer.insert("path", abs(c.scorer.path));
  if (!c.scorer.endpoint.empty()) scorer.insert("endpoint", c.scorer.endpoint);
  root.insert("scorer", std::move(scorer));
  const auto& w = c.world;
  root.insert("toy_world", toml::table{{"seed", as_int(w.seed)},
                                       {"eot_mass", w.eot_mass},
                                       {"unk_mass", w.unk_mass},
                                       {"mild_trigger_prob", w.mild_trigger_prob},
                                       {"strong_trigger_prob", w.strong_trigger_prob},
                                       {"toxic_prob", w.toxic_prob},
                                       {"mild_leak", w.mild_leak},
                                       {"strong_leak", w.strong_leak},
                                       {"toxic_persist", w.toxic_persist},
                                       {"neutral_spread", w.neutral_spread},
                                       {"saturation", w.saturation},
                                       {"num_prompts", static_cast<std::int64_t>(w.num_prompts)},
                                       {"num_weak_prompts", static_cast<std::int64_t>(w.num_weak_prompts)}});
  toml::table data{{"source", c.data.source == DataSource::files ? "files" : "toy-world"},
                   {"split_seed", as_int(c.data.split_seed)}};
  if (!c.data.prompts.empty()) data.insert("prompts", abs(c.data.prompts));
  if (!c.data.weak.empty()) data.insert("weak", abs(c.data.weak));
  root.insert("data", std::move(data));
  root.insert("reward", toml::table{{"alpha", c.reward.alpha}, {"zeta", c.reward.zeta}, {"gamma", c.reward.gamma}});
  const auto& t = c.train;
  root.insert("train", toml::table{{"beta", t.beta},
                                   {"learning_rate", t.learning_rate},
                                   {"episodes_per_epoch", t.episodes_per_epoch},
                                   {"batch_size", t.batch_size},
                                   {"epochs", t.epochs},
                                   {"rho", t.rho},
                                   {"horizon", t.horizon},
                                   {"checkpoint_every", c.checkpoint_every},
                                   {"log_triples", c.log_triples},
                                   {"adam", toml::table{{"beta1", t.adam.beta1},
                                                        {"beta2", t.adam.beta2},
                                                        {"epsilon", t.adam.epsilon},
                                                        {"weight_decay", t.adam.weight_decay}}}});
  root.insert("sampling", toml::table{{"adversary", sampling(c.sampling.adversary_sampling)},
                                      {"defender", sampling(c.sampling.defender_sampling)}});
  root.insert("eval", toml::table{{"turns", c.eval.turns},
                                  {"split", std::string(to_string(c.eval.split))},
                                  {"histogram_bins", static_cast<std::int64_t>(c.eval.histogram_bins)}});
  toml::array gammas, seeds;
  for (double g : c.sweep.gammas) gammas.push_back(g);
  for (auto s : c.sweep.seeds) seeds.push_back(as_int(s));
  root.insert("sweep", toml::table{{"gammas", std::move(gammas)}, {"seeds", std::move(seeds)},
                                   {"parallel", c.sweep.parallel}});
  root.insert("harden", toml::table{{"epochs", c.harden.epochs}, {"learning_rate", c.harden.learning_rate}});
  return root;
}

inline std::string to_toml_string(const RunConfig& c) {
  std::ostringstream os;
  os << to_toml(c) << '\n';
  return os.str();
}

}  // namespace astred::config
