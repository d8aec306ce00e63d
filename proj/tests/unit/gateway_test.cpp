#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "astred/app/commands.hpp"
#include "astred/gateway/client.hpp"

using namespace astred;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Fault { none, echo, bad_status, not_json, missing_field, out_of_range, positive_logprob, unavailable };

// In-process stand-in for the gateway, backed by the toy world's defender
// and lexicon scorer.
class StubGateway {
 public:
  StubGateway() : world_(toy::make_world(small())) {
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"status", "ok"}, {"protocol_version", gateway::kProtocolVersion}}.dump(), "application/json");
    });
    server_.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [&](const json& b) {
        if (fault_ == Fault::echo) return json{{"unsafe_probability", 0.7}};
        if (fault_ == Fault::out_of_range) return json{{"unsafe_probability", 1.5}};
        if (fault_ == Fault::missing_field) return json{{"probability", 0.1}};
        const RoleTexts t{b.at("context"), b.at("user"), b.at("assistant")};
        return json{{"unsafe_probability", world_.scorer.score(t).value()}};
      });
    });
    server_.Post("/v1/logprob", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [&](const json& b) {
        const auto& v = world_.vocab;
        const auto lp = world_.defender.logprob(v.tokenize(b.at("context").get<std::string>()),
                                                v.tokenize(b.at("continuation").get<std::string>()));
        json out{{"tokens", json::array()}, {"logprobs", lp.per_token}, {"sum", lp.sum}};
        if (fault_ == Fault::positive_logprob) out["logprobs"][0] = 0.5;
        return out;
      });
    });
    server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [&](const json& b) {
        SamplingConfig c;
        c.temperature = b.at("temperature");
        c.top_p = b.at("top_p");
        c.max_new_tokens = b.at("max_new_tokens");
        c.min_new_tokens = b.at("min_new_tokens");
        c.greedy = b.at("greedy");
        Rng rng(b.at("seed").get<std::uint64_t>());
        const auto& v = world_.vocab;
        const auto out = world_.defender.sample(v.tokenize(b.at("context").get<std::string>()), c, rng);
        if (fault_ == Fault::missing_field) return json{{"tokens", json::array()}};
        return json{{"text", v.detokenize(out)}, {"tokens", json::array()}, {"logprobs", json::array()}};
      });
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubGateway() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  const toy::World& world() const { return world_; }
  void set_fault(Fault f) { fault_ = f; }

  static toy::WorldParams small() {
    toy::WorldParams p;
    p.num_prompts = 40;
    p.num_weak_prompts = 5;
    return p;
  }

 private:
  template <typename F>
  void handle(const httplib::Request& req, httplib::Response& res, F&& f) {
    res.set_header(gateway::kProtocolHeader, gateway::kProtocolVersion);
    if (fault_ == Fault::not_json) {
      res.set_content("<html>oops</html>", "text/html");
      return;
    }
    if (fault_ == Fault::unavailable) {
      res.status = 503;
      res.set_content(json{{"error", "model loading"}}.dump(), "application/json");
      return;
    }
    json body;
    try {
      body = json::parse(req.body);
      if (fault_ == Fault::bad_status) throw std::runtime_error("rejected by stub");
      res.set_content(f(body).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  toy::World world_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<Fault> fault_{Fault::none};
};

}  // namespace

TEST(Gateway, HealthReportsProtocol) {
  StubGateway stub;
  gateway::Client c(stub.endpoint());
  const auto h = c.health();
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("protocol_version"), gateway::kProtocolVersion);
}

TEST(Gateway, RemoteScoreEchoAndLocalConformance) {
  StubGateway stub;
  gateway::RemoteScorer remote(stub.endpoint());
  stub.set_fault(Fault::echo);
  EXPECT_DOUBLE_EQ(score_defense(remote, "", "hi", "there").value(), 0.7);
  stub.set_fault(Fault::none);
  const auto& local = stub.world().scorer;
  for (const char* d : {"the dog", "you idiot", "hate trash stupid idiot", "idiot stupid the"}) {
    EXPECT_EQ(score_defense(remote, "ctx", "adv", d).value(), score_defense(local, "ctx", "adv", d).value());
    EXPECT_EQ(score_combined(remote, "ctx", "hate", d).value(), score_combined(local, "ctx", "hate", d).value());
  }
}

TEST(Gateway, RemoteLogProbMatchesLocal) {
  StubGateway stub;
  const auto& w = stub.world();
  gateway::RemotePolicy remote(stub.endpoint(), w.vocab);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto ctx = w.defender.sample(TokenSeq(), toy::default_sampling().adversary_sampling, rng, Role::context);
    const auto cont = w.defender.sample(ctx, toy::default_sampling().adversary_sampling, rng);
    const auto a = remote.logprob(ctx, cont), b = w.defender.logprob(ctx, cont);
    ASSERT_EQ(a.per_token.size(), b.per_token.size());
    for (std::size_t k = 0; k < a.per_token.size(); ++k) EXPECT_NEAR(a.per_token[k], b.per_token[k], 1e-9);
    EXPECT_NEAR(a.sum, b.sum, 1e-9);
  }
}

TEST(Gateway, RemoteGenerateReproducesLocalSampling) {
  StubGateway stub;
  const auto& w = stub.world();
  gateway::RemotePolicy remote(stub.endpoint(), w.vocab);
  auto cfg = toy::default_sampling().adversary_sampling;
  cfg.top_p = 0.9;
  cfg.temperature = 0.8;
  Rng caller(11);
  const auto ctx = w.vocab.tokenize("we went to the park");
  for (int i = 0; i < 20; ++i) {
    Rng probe = caller;
    Rng local_rng(probe.next());
    const auto expect = w.defender.sample(ctx, cfg, local_rng);
    EXPECT_EQ(remote.sample(ctx, cfg, caller), expect);
  }
}

TEST(Gateway, FailuresSurfaceAsTypedErrors) {
  StubGateway stub;
  gateway::RemoteScorer scorer(stub.endpoint());
  gateway::RemotePolicy policy(stub.endpoint(), stub.world().vocab);
  const auto ctx = stub.world().vocab.tokenize("the dog");
  const auto cont = stub.world().vocab.tokenize("is nice");
  Rng rng(1);

  stub.set_fault(Fault::bad_status);
  try {
    scorer.score({"", "", "x"});
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("status 400"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("rejected by stub"), std::string::npos);
  }
  stub.set_fault(Fault::not_json);
  EXPECT_THROW(scorer.score({"", "", "x"}), ProtocolError);
  stub.set_fault(Fault::missing_field);
  EXPECT_THROW(scorer.score({"", "", "x"}), ProtocolError);
  EXPECT_THROW(policy.sample(ctx, toy::default_sampling().adversary_sampling, rng), ProtocolError);
  stub.set_fault(Fault::out_of_range);
  EXPECT_THROW(scorer.score({"", "", "x"}), ProtocolError);
  stub.set_fault(Fault::positive_logprob);
  EXPECT_THROW(policy.logprob(ctx, cont), ProtocolError);
  stub.set_fault(Fault::unavailable);
  try {
    policy.logprob(ctx, cont);
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_TRUE(e.retryable());
  }
}

TEST(Gateway, MalformedRequestGets400) {
  StubGateway stub;
  httplib::Client raw(stub.endpoint());
  const auto res = raw.Post("/v1/logprob", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_TRUE(json::parse(res->body).contains("error"));
}

TEST(Gateway, UnreachableEndpointIsATransportError) {
  // Nothing listens on the tcpmux port in the test environment.
  gateway::RemoteScorer scorer("http://127.0.0.1:1");
  EXPECT_THROW(scorer.score({"", "", "x"}), TransportError);
  EXPECT_THROW(gateway::Client("not a url"), InvalidArgument);
}

TEST(Gateway, EndpointFromEnvironmentWins) {
  ::setenv(gateway::kEndpointEnv, "http://example.invalid:9", 1);
  EXPECT_EQ(gateway::resolve_endpoint("http://configured:1"), "http://example.invalid:9");
  ::unsetenv(gateway::kEndpointEnv);
  EXPECT_EQ(gateway::resolve_endpoint("http://configured:1"), "http://configured:1");
}

TEST(Gateway, EvalRunsAgainstRemoteDefenderAndScorer) {
  StubGateway stub;
  const auto dir = fs::temp_directory_path() / "astred_gateway_eval";
  fs::remove_all(dir);
  app::write_file(dir / "vocab.json", stub.world().vocab.to_json().dump());
  const std::string text = "seed = 2\nout = \"" + (dir / "run").string() + R"("
[models.defender]
kind = "gateway"
endpoint = ")" + stub.endpoint() + R"("
vocab = ")" + (dir / "vocab.json").string() + R"("
[models.adversary]
kind = "toy-world"
[scorer]
kind = "gateway"
endpoint = ")" + stub.endpoint() + R"("
[toy_world]
num_prompts = 40
num_weak_prompts = 5
)";
  std::ostringstream log;
  const auto rep = app::cmd_eval(config::from_toml(config::parse_toml(text)), log);
  EXPECT_EQ(rep.prompts, 12u);
  EXPECT_TRUE(fs::exists(dir / "run" / "reports" / "metrics.json"));
}
