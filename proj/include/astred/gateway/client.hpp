#pragma once

// Client side of the model gateway protocol (JSON over HTTP/1.1):
//
//   GET  /v1/health   -> {"status", "protocol_version"}
//   POST /v1/generate {"context", "temperature", "top_p", "max_new_tokens",
//                      "min_new_tokens", "seed", "greedy"}
//                     -> {"text", "tokens": [str], "logprobs": [num]}
//   POST /v1/logprob  {"context", "continuation"}
//                     -> {"tokens": [str], "logprobs": [num], "sum": num}
//   POST /v1/score    {"context", "user", "assistant"}
//                     -> {"unsafe_probability": num in [0, 1]}
//
// Errors come back as 4xx/5xx with {"error": message}. Every response carries
// the protocol version in the X-Astred-Protocol header.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"
#include "astred/lm/policy.hpp"
#include "astred/safety/scorer.hpp"

namespace astred::gateway {

inline constexpr const char* kProtocolVersion = "1";
inline constexpr const char* kProtocolHeader = "X-Astred-Protocol";
inline constexpr const char* kEndpointEnv = "ASTRED_GATEWAY_URL";

// Endpoint from the environment if set, otherwise `configured`.
inline std::string resolve_endpoint(const std::string& configured) {
  if (const char* env = std::getenv(kEndpointEnv); env != nullptr && *env != '\0') return env;
  return configured;
}

class Client {
 public:
  explicit Client(std::string endpoint, double timeout_seconds = 30.0)
      : endpoint_(std::move(endpoint)), http_(endpoint_) {
    // Plain HTTP only; the vendored client is built without TLS.
    if (endpoint_.rfind("http://", 0) != 0 || !http_.is_valid())
      throw InvalidArgument("gateway: invalid endpoint '" + endpoint_ + "'");
    const auto sec = static_cast<time_t>(timeout_seconds);
    const auto usec = static_cast<time_t>((timeout_seconds - static_cast<double>(sec)) * 1e6);
    http_.set_connection_timeout(sec, usec);
    http_.set_read_timeout(sec, usec);
    http_.set_write_timeout(sec, usec);
  }

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  const std::string& endpoint() const noexcept { return endpoint_; }

  nlohmann::json health() {
    auto res = http_.Get("/v1/health");
    return decode(res, "/v1/health");
  }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) {
    auto res = http_.Post(path, body.dump(), "application/json");
    return decode(res, path);
  }

 private:
  nlohmann::json decode(const httplib::Result& res, const std::string& path) {
    if (!res) {
      throw TransportError("gateway " + endpoint_ + path + ": " + httplib::to_string(res.error()));
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("gateway " + path + ": response is not JSON (status " +
                          std::to_string(res->status) + ")");
    }
    if (res->status == 503) {
      throw TransportError("gateway " + path + ": model unavailable: " + body.value("error", ""));
    }
    if (res->status != 200) {
      throw ProtocolError("gateway " + path + ": status " + std::to_string(res->status) + ": " +
                          body.value("error", std::string("no error message")));
    }
    if (!body.is_object()) throw ProtocolError("gateway " + path + ": response is not an object");
    return body;
  }

  std::string endpoint_;
  httplib::Client http_;
};

// Scorer backed by POST /v1/score. Holds no state between calls beyond the
// connection, so a transport failure never yields a fabricated score.
class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(std::string endpoint) : client_(std::make_unique<Client>(std::move(endpoint))) {}

  SafetyScore score(const RoleTexts& texts) const override {
    const nlohmann::json req = {
        {"context", texts.context}, {"user", texts.user}, {"assistant", texts.assistant}};
    const auto res = client_->post("/v1/score", req);
    const auto it = res.find("unsafe_probability");
    if (it == res.end() || !it->is_number())
      throw ProtocolError("gateway /v1/score: missing numeric unsafe_probability");
    const double p = it->get<double>();
    if (!(p >= 0.0 && p <= 1.0)) throw ProtocolError("gateway /v1/score: probability outside [0, 1]");
    return SafetyScore(p);
  }

 private:
  std::unique_ptr<Client> client_;
};

// Policy served by the gateway. Text crosses the wire; tokens are recovered
// with the local vocabulary, so out-of-vocabulary words collapse to <unk>.
class RemotePolicy final : public Policy {
 public:
  RemotePolicy(std::string endpoint, Vocab vocab)
      : client_(std::make_unique<Client>(std::move(endpoint))), vocab_(std::move(vocab)) {}

  const Vocab& vocab() const override { return vocab_; }

  LogProbResult logprob(const TokenSeq& context, const TokenSeq& continuation) const override {
    require_continuation(continuation);
    const nlohmann::json req = {{"context", vocab_.detokenize(context)},
                                {"continuation", vocab_.detokenize(continuation)}};
    const auto res = client_->post("/v1/logprob", req);
    LogProbResult out;
    try {
      out.per_token = res.at("logprobs").get<std::vector<double>>();
      out.sum = res.at("sum").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("gateway /v1/logprob: ") + e.what());
    }
    if (out.per_token.empty()) throw ProtocolError("gateway /v1/logprob: no log-probabilities");
    for (double lp : out.per_token)
      if (!(lp <= 0.0)) throw ProtocolError("gateway /v1/logprob: log-probability above zero");
    return out;
  }

  using Policy::sample;

  // The request seed is drawn from the caller's generator, so a seeded caller
  // gets reproducible generations from a deterministic backend.
  TokenSeq sample(const TokenSeq& context, const SamplingConfig& config, Rng& rng,
                  Role role = Role::adversary) const override {
    config.validate();
    const nlohmann::json req = {{"context", vocab_.detokenize(context)},
                                {"temperature", config.temperature},
                                {"top_p", config.top_p},
                                {"max_new_tokens", config.max_new_tokens},
                                {"min_new_tokens", config.min_new_tokens},
                                {"greedy", config.greedy},
                                {"seed", rng.next()}};
    const auto res = client_->post("/v1/generate", req);
    const auto it = res.find("text");
    if (it == res.end() || !it->is_string()) throw ProtocolError("gateway /v1/generate: missing text");
    return vocab_.tokenize(it->get<std::string>(), role);
  }

 private:
  std::unique_ptr<Client> client_;
  Vocab vocab_;
};

}  // namespace astred::gateway
