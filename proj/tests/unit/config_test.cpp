#include <gtest/gtest.h>

#include <string>

#include "astred/config/run_config.hpp"

using namespace astred;
using config::from_toml;
using config::parse_toml;

namespace {

constexpr const char* kMinimal = R"(
[models.defender]
kind = "toy-world"
)";

std::string field_of(const std::string& text) {
  try {
    from_toml(parse_toml(text), "/base");
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST(Config, MinimalDocumentGetsDefaults) {
  const auto c = from_toml(parse_toml(kMinimal));
  EXPECT_EQ(c.seed, 1u);
  EXPECT_EQ(c.defender.kind, config::ModelKind::toy_world);
  EXPECT_EQ(c.adversary.kind, config::ModelKind::toy_world);
  EXPECT_EQ(c.reward.gamma, 0.25);
  EXPECT_EQ(c.train.beta, 0.01);
  EXPECT_EQ(c.eval.turns, 3);
  EXPECT_EQ(c.sweep.gammas.size(), 4u);
}

TEST(Config, MissingDefenderNamesTheField) {
  EXPECT_EQ(field_of("seed = 3\n"), "models.defender");
  EXPECT_EQ(field_of("[models.adversary]\nkind = \"toy-world\"\n"), "models.defender");
  EXPECT_EQ(field_of("[models.defender]\npath = \"x.json\"\n"), "models.defender.kind");
  EXPECT_EQ(field_of("[models.defender]\nkind = \"checkpoint\"\n"), "models.defender.path");
  EXPECT_EQ(field_of("[models.defender]\nkind = \"gateway\"\nendpoint = \"http://h:1\"\n"), "models.defender.vocab");
  EXPECT_EQ(field_of("[models.defender]\nkind = \"magic\"\n"), "models.defender.kind");
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  const std::string base = kMinimal;
  EXPECT_EQ(field_of("sede = 2\n" + base), "sede");
  EXPECT_EQ(field_of(base + "[train]\nlearnig_rate = 0.1\n"), "train.learnig_rate");
  EXPECT_EQ(field_of(base + "[train.adam]\nbeta3 = 0.1\n"), "train.adam.beta3");
  EXPECT_EQ(field_of(base + "[sampling.adversary]\ntop_k = 4\n"), "sampling.adversary.top_k");
  EXPECT_EQ(field_of(std::string(kMinimal) + "colour = \"red\"\n"), "models.defender.colour");
  EXPECT_EQ(field_of(base + "[evaluation]\nturns = 2\n"), "evaluation");
}

TEST(Config, ValuesValidated) {
  const std::string base = kMinimal;
  EXPECT_EQ(field_of(base + "[train]\nbeta = 0.0\n"), "train.beta");
  EXPECT_EQ(field_of(base + "[train]\nrho = 1.5\n"), "train.rho");
  EXPECT_EQ(field_of(base + "[train]\nepochs = \"ten\"\n"), "train.epochs");
  EXPECT_EQ(field_of(base + "[train]\nepochs = 2.5\n"), "train.epochs");
  EXPECT_EQ(field_of(base + "[reward]\ngamma = -1.0\n"), "reward");
  EXPECT_EQ(field_of(base + "[sampling.defender]\ntop_p = 0.0\n"), "sampling.defender");
  EXPECT_EQ(field_of(base + "[eval]\nturns = 0\n"), "eval.turns");
  EXPECT_EQ(field_of(base + "[eval]\nsplit = \"holdout\"\n"), "eval.split");
  EXPECT_EQ(field_of(base + "[sweep]\nseeds = [4]\n"), "sweep.seeds");
  EXPECT_EQ(field_of(base + "[sweep]\ngammas = [0.5, -0.1]\n"), "sweep.gammas");
  EXPECT_EQ(field_of("seed = -1\n" + base), "seed");
  EXPECT_EQ(field_of(base + "[scorer]\nkind = \"lexicon\"\n"), "scorer.path");
  EXPECT_EQ(field_of(base + "[data]\nsource = \"files\"\n"), "data.prompts");
  EXPECT_EQ(field_of(base + "[toy_world]\nnum_prompts = 2\n"), "toy_world.num_prompts");
  EXPECT_EQ(field_of("models = 3\n"), "models");
  EXPECT_THROW(parse_toml("[models.defender\n"), ConfigError);
}

TEST(Config, ModelDefaultsChain) {
  const auto c = from_toml(parse_toml(R"(
[models.defender]
kind = "checkpoint"
path = "def.json"
[models.adversary]
kind = "checkpoint"
path = "/abs/adv.json"
)"),
                           "/runs/cfg");
  EXPECT_EQ(c.defender.path, "/runs/cfg/def.json");
  EXPECT_EQ(c.adversary.path, "/abs/adv.json");
  EXPECT_EQ(c.reference.path, c.adversary.path);
  EXPECT_EQ(c.baseline.path, c.defender.path);
}

TEST(Config, SerializedConfigRoundTrips) {
  const auto c = from_toml(parse_toml(R"(
seed = 42
out = "/tmp/astred-out"
[models.defender]
kind = "toy-world"
[models.adversary]
kind = "checkpoint"
path = "/tmp/adv.json"
[reward]
gamma = 0.1
[train]
learning_rate = 0.0123456789012345
epochs = 7
log_triples = true
[train.adam]
weight_decay = 0.01
[sampling.adversary]
temperature = 0.9
greedy = true
[eval]
split = "dev"
histogram_bins = 5
[sweep]
gammas = [0.0, 0.3]
seeds = [5, 6, 7]
[toy_world]
mild_leak = 0.45
num_prompts = 77
)"));
  const std::string once = config::to_toml_string(c);
  const auto back = from_toml(parse_toml(once));
  EXPECT_EQ(config::to_toml_string(back), once);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.train.learning_rate, 0.0123456789012345);
  EXPECT_EQ(back.train.adam.weight_decay, 0.01);
  EXPECT_TRUE(back.log_triples);
  EXPECT_TRUE(back.sampling.adversary_sampling.greedy);
  EXPECT_FALSE(back.sampling.defender_sampling.greedy);
  EXPECT_EQ(back.eval.split, Split::dev);
  EXPECT_EQ(back.eval.histogram_bins, 5u);
  EXPECT_EQ(back.sweep.seeds, (std::vector<std::uint64_t>{5, 6, 7}));
  EXPECT_EQ(back.world.mild_leak, 0.45);
  EXPECT_EQ(back.world.num_prompts, 77u);
  EXPECT_EQ(back.adversary.path, "/tmp/adv.json");
}

TEST(Config, ShippedToyConfigLoads) {
  const auto c = config::load(std::string(ASTRED_CONFIG_DIR) + "/toy.toml");
  EXPECT_EQ(c.train.epochs, 50);
  EXPECT_EQ(c.train.episodes_per_epoch, 64);
  EXPECT_EQ(c.sampling.defender_sampling.max_new_tokens, 10);
  EXPECT_TRUE(c.out.is_absolute() || c.out.has_parent_path());
  EXPECT_THROW(config::load("/nonexistent/astred.toml"), IoError);
}
