// astred: train, attack, evaluate and harden against a frozen defender.
//
// Exit status: 0 on success, 2 on usage or configuration errors, 1 on any
// runtime failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "astred/app/commands.hpp"

namespace fs = std::filesystem;
using namespace astred;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Overrides {
  std::string config;
  std::optional<std::int64_t> seed;
  std::string out;
  std::string defender;
  std::string adversary;
  std::vector<double> gammas;
  std::optional<int> turns;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required) {
  auto* c = cmd->add_option("--config,-c", o.config, "run configuration (TOML)");
  if (config_required) c->required();
  c->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "global rng seed")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out,-o", o.out, "output directory");
  cmd->add_option("--defender", o.defender, "defender checkpoint, overrides models.defender")
      ->check(CLI::ExistingFile);
  cmd->add_option("--adversary", o.adversary, "adversary checkpoint, overrides models.adversary")
      ->check(CLI::ExistingFile);
  cmd->add_option("--gamma", o.gammas, "perplexity weight; repeat for a sweep")->allow_extra_args(false);
  cmd->add_option("--turns", o.turns, "attack turns")->check(CLI::PositiveNumber);
}

toml::table checkpoint_model(const std::string& path) {
  return toml::table{{"kind", "checkpoint"}, {"path", fs::absolute(path).lexically_normal().string()}};
}

toml::table& subtable(toml::table& t, std::string_view key) {
  if (!t.contains(key)) t.insert(key, toml::table{});
  auto* sub = t.get_as<toml::table>(key);
  if (!sub) throw ConfigError(std::string(key), "expected a table");
  return *sub;
}

// Flags are folded into the parsed document before validation, so the
// snapshot written with the results reflects them.
config::RunConfig resolve(const Overrides& o, bool sweep) {
  toml::table doc;
  fs::path base;
  if (!o.config.empty()) {
    doc = config::read_toml(o.config);
    base = fs::path(o.config).parent_path();
  } else {
    doc.insert("models", toml::table{{"defender", toml::table{{"kind", "toy-world"}}}});
  }
  if (o.seed) doc.insert_or_assign("seed", *o.seed);
  if (!o.out.empty()) doc.insert_or_assign("out", fs::absolute(o.out).lexically_normal().string());
  if (!o.defender.empty()) subtable(doc, "models").insert_or_assign("defender", checkpoint_model(o.defender));
  if (!o.adversary.empty()) subtable(doc, "models").insert_or_assign("adversary", checkpoint_model(o.adversary));
  if (!o.gammas.empty()) {
    if (sweep) {
      toml::array a;
      for (double g : o.gammas) a.push_back(g);
      subtable(doc, "sweep").insert_or_assign("gammas", std::move(a));
    } else {
      if (o.gammas.size() != 1) throw ConfigError("--gamma", "only sweep accepts more than one value");
      subtable(doc, "reward").insert_or_assign("gamma", o.gammas.front());
    }
  }
  if (o.turns) subtable(doc, "eval").insert_or_assign("turns", *o.turns);
  return config::from_toml(doc, base);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive stress testing for language-model red teaming"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "astred 0.1.0");

  Overrides o;
  std::string resume, input, manifest;

  auto* train = app.add_subcommand("train", "online IPO training of the adversary");
  add_common(train, o, true);
  train->add_option("--resume", resume, "training checkpoint to continue from")->check(CLI::ExistingFile);

  auto* attack = app.add_subcommand("attack", "multi-turn attack on every eval prompt; writes traces");
  add_common(attack, o, true);
  auto* eval = app.add_subcommand("eval", "attack and report metrics");
  add_common(eval, o, true);
  auto* sweep = app.add_subcommand("sweep", "train and evaluate over gamma x seed; writes the frontier");
  add_common(sweep, o, true);
  auto* harden = app.add_subcommand("harden", "DPO-harden the defender against a trained adversary");
  add_common(harden, o, true);

  auto* ingest = app.add_subcommand("ingest", "score, filter and split a prompt file into a manifest");
  add_common(ingest, o, false);
  ingest->add_option("--input", input, "prompts, one per line")->required()->check(CLI::ExistingFile);
  ingest->add_option("--manifest", manifest, "output JSON-lines manifest")->required();

  auto* world = app.add_subcommand("toy-world", "write the synthetic toy world as files");
  add_common(world, o, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    const auto cfg = resolve(o, sweep->parsed());
    if (train->parsed()) {
      app::cmd_train(cfg, std::cout, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
    } else if (attack->parsed()) {
      app::cmd_attack(cfg, std::cout);
    } else if (eval->parsed()) {
      app::cmd_eval(cfg, std::cout);
    } else if (sweep->parsed()) {
      app::cmd_sweep(cfg, std::cout);
    } else if (harden->parsed()) {
      app::cmd_harden(cfg, std::cout);
    } else if (ingest->parsed()) {
      app::cmd_ingest(cfg, input, manifest, std::cout);
    } else if (world->parsed()) {
      app::cmd_toy_world(cfg, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "astred: config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "astred: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
