#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"
#include "astred/lm/nucleus.hpp"
#include "astred/lm/policy.hpp"
#include "astred/lm/vocab.hpp"

namespace astred {

// Called once per generated position with the (temperature-scaled, masked)
// distribution, the nucleus drawn from, and the chosen index.
using SampleObserver = std::function<void(std::span<const double> probs,
                                          std::span<const std::size_t> nucleus, Token chosen)>;

// Tabular n-gram policy. Each context of the previous order-1 tokens owns a
// row of logits over the vocabulary; the next-token distribution is the
// softmax of that row. Histories shorter than order-1 are left-padded with a
// begin marker that is a context symbol only and is never generated.
class ToyPolicy final : public Policy {
 public:
  static constexpr std::string_view kFormat = "astred.toy_policy";
  static constexpr int kFormatVersion = 1;

  ToyPolicy(Vocab vocab, int order) : vocab_(std::move(vocab)), order_(order) {
    if (order_ < 1) throw InvalidArgument("toy policy: order must be >= 1");
    rows_ = 1;
    for (int i = 1; i < order_; ++i) rows_ *= vocab_.size() + 1;
    logits_.assign(rows_ * vocab_.size(), 0.0);
  }

  ToyPolicy(Vocab vocab, int order, std::vector<double> logits) : ToyPolicy(std::move(vocab), order) {
    if (logits.size() != logits_.size())
      throw InvalidArgument("toy policy: logit table has " + std::to_string(logits.size()) +
                            " entries, expected " + std::to_string(logits_.size()));
    logits_ = std::move(logits);
    for (std::size_t r = 0; r < rows_; ++r) {
      bool any = false;
      for (double x : row(r)) {
        if (std::isnan(x) || x == INFINITY) throw InvalidArgument("toy policy: logits must be finite or -inf");
        any = any || std::isfinite(x);
      }
      if (!any) throw InvalidArgument("toy policy: row " + std::to_string(r) + " has no finite logit");
    }
  }

  // Conditional-frequency estimate: logit = log(count + add_k). Every corpus
  // sequence starts after the begin marker and ends with end-of-turn. Rows
  // never observed stay uniform.
  static ToyPolicy fit_counts(const Vocab& vocab, int order, std::span<const TokenSeq> corpus,
                              double add_k) {
    if (add_k < 0.0) throw InvalidArgument("fit_counts: add_k must be non-negative");
    ToyPolicy p(vocab, order);
    std::vector<double> counts(p.logits_.size(), 0.0);
    std::vector<double> row_totals(p.rows_, 0.0);
    const std::size_t v = vocab.size();
    for (const auto& seq : corpus) {
      std::vector<Token> history;
      auto observe = [&](Token next) {
        const std::size_t r = p.context_row(history);
        counts[r * v + static_cast<std::size_t>(next.id)] += 1.0;
        row_totals[r] += 1.0;
        history.push_back(next);
      };
      for (Token t : seq.tokens()) observe(t);
      observe(vocab.eot());
    }
    for (std::size_t r = 0; r < p.rows_; ++r) {
      if (row_totals[r] == 0.0) continue;
      for (std::size_t j = 0; j < v; ++j) p.logits_[r * v + j] = std::log(counts[r * v + j] + add_k);
    }
    return p;
  }

  const Vocab& vocab() const override { return vocab_; }
  int order() const noexcept { return order_; }
  std::size_t num_rows() const noexcept { return rows_; }
  std::size_t row_size() const noexcept { return vocab_.size(); }
  std::size_t num_params() const noexcept { return logits_.size(); }

  std::span<const double> logits() const noexcept { return logits_; }
  std::span<double> mutable_logits() noexcept { return logits_; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(logits_).subspan(r * vocab_.size(), vocab_.size());
  }
  std::span<double> mutable_row(std::size_t r) {
    return std::span<double>(logits_).subspan(r * vocab_.size(), vocab_.size());
  }

  // Begin marker's digit in the context index.
  std::size_t begin_symbol() const noexcept { return vocab_.size(); }

  std::size_t context_row(std::span<const Token> history) const {
    const std::size_t width = static_cast<std::size_t>(order_ - 1);
    const std::size_t base = vocab_.size() + 1;
    std::size_t r = 0;
    for (std::size_t i = 0; i < width; ++i) {
      // Position i of the window, oldest first.
      const std::size_t back = width - i;
      std::size_t digit = begin_symbol();
      if (back <= history.size()) {
        const Token t = history[history.size() - back];
        if (!vocab_.contains(t)) throw InvalidArgument("toy policy: token id out of range");
        digit = static_cast<std::size_t>(t.id);
      }
      r = r * base + digit;
    }
    return r;
  }

  // Row index for an explicit window of the previous order-1 symbols, oldest first.
  std::size_t row_for(std::span<const Token> window) const {
    if (window.size() != static_cast<std::size_t>(order_ - 1))
      throw InvalidArgument("toy policy: window length must equal order - 1");
    return context_row(window);
  }

  std::vector<double> next_distribution(std::span<const Token> history) const {
    return softmax(row(context_row(history)));
  }

  LogProbResult logprob(const TokenSeq& context, const TokenSeq& continuation) const override {
    require_continuation(continuation);
    LogProbResult out;
    out.per_token.reserve(continuation.size());
    std::vector<Token> history = context.tokens();
    for (Token t : continuation.tokens()) {
      if (!vocab_.contains(t)) throw InvalidArgument("toy policy: token id out of range");
      const auto lp = log_softmax_at(row(context_row(history)), static_cast<std::size_t>(t.id));
      out.per_token.push_back(lp);
      out.sum += lp;
      history.push_back(t);
    }
    return out;
  }

  using Policy::sample;

  TokenSeq sample(const TokenSeq& context, const SamplingConfig& config, Rng& rng,
                  Role role = Role::adversary) const override {
    return sample_observed(context, config, rng, role, nullptr);
  }

  TokenSeq sample_observed(const TokenSeq& context, const SamplingConfig& config, Rng& rng,
                           Role role, const SampleObserver& observer) const {
    config.validate();
    const std::size_t eot = static_cast<std::size_t>(vocab_.eot().id);
    std::vector<Token> history = context.tokens();
    TokenSeq out(role);
    std::vector<double> scaled(vocab_.size());
    for (int step = 0; step < config.max_new_tokens; ++step) {
      auto logits = row(context_row(history));
      std::copy(logits.begin(), logits.end(), scaled.begin());
      if (step < config.min_new_tokens) scaled[eot] = -INFINITY;
      std::size_t pick;
      std::vector<double> probs;
      std::vector<std::size_t> members;
      if (config.greedy) {
        probs = softmax(scaled);
        pick = argmax(probs);
        members = {pick};
      } else {
        probs = softmax(scaled, config.temperature);
        members = nucleus(probs, config.top_p);
        pick = draw_from_nucleus(probs, members, rng.uniform());
      }
      const Token tok{static_cast<std::int32_t>(pick)};
      if (observer) observer(probs, members, tok);
      if (pick == eot) break;
      out.push_back(tok);
      history.push_back(tok);
    }
    return out;
  }

  // d/dθ of the summed log-probability, scaled and added into `grad`.
  // For a softmax row, d log p(k)/dθ_j = [j == k] - p_j.
  void accumulate_grad_logprob(const TokenSeq& context, const TokenSeq& continuation, double scale,
                               std::span<double> grad) const {
    require_continuation(continuation);
    if (grad.size() != logits_.size()) throw InvalidArgument("gradient buffer has wrong shape");
    const std::size_t v = vocab_.size();
    std::vector<Token> history = context.tokens();
    for (Token t : continuation.tokens()) {
      const std::size_t r = context_row(history);
      const auto p = softmax(row(r));
      double* g = grad.data() + r * v;
      for (std::size_t j = 0; j < v; ++j) g[j] -= scale * p[j];
      g[static_cast<std::size_t>(t.id)] += scale;
      history.push_back(t);
    }
  }

  std::vector<double> grad_logprob(const TokenSeq& context, const TokenSeq& continuation) const {
    std::vector<double> g(logits_.size(), 0.0);
    accumulate_grad_logprob(context, continuation, 1.0, g);
    return g;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = kFormat;
    j["version"] = kFormatVersion;
    j["vocab"] = vocab_.to_json();
    j["order"] = order_;
    j["rows"] = rows_;
    j["cols"] = vocab_.size();
    auto table = nlohmann::json::array();
    for (std::size_t r = 0; r < rows_; ++r) {
      auto jr = nlohmann::json::array();
      for (double x : row(r)) jr.push_back(encode_logit(x));
      table.push_back(std::move(jr));
    }
    j["logits"] = std::move(table);
    return j;
  }

  static ToyPolicy from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kFormat)
      throw InvalidArgument("checkpoint: not a toy policy document");
    if (j.value("version", 0) != kFormatVersion)
      throw InvalidArgument("checkpoint: unsupported version");
    Vocab vocab = Vocab::from_json(j.at("vocab"));
    const int order = j.at("order").get<int>();
    std::vector<double> logits;
    for (const auto& jr : j.at("logits")) {
      if (jr.size() != vocab.size()) throw InvalidArgument("checkpoint: logit row has wrong width");
      for (const auto& x : jr) logits.push_back(decode_logit(x));
    }
    return ToyPolicy(std::move(vocab), order, std::move(logits));
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os << to_json().dump(1) << '\n';
    if (!os) throw IoError("failed writing checkpoint " + path.string());
  }

  static ToyPolicy load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read checkpoint " + path.string());
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("checkpoint " + path.string() + ": " + e.what());
    }
    // Training checkpoints nest the policy next to optimizer state.
    if (j.contains("policy")) return from_json(j.at("policy"));
    return from_json(j);
  }

  friend bool operator==(const ToyPolicy& a, const ToyPolicy& b) {
    if (!(a.vocab_ == b.vocab_) || a.order_ != b.order_ || a.logits_.size() != b.logits_.size())
      return false;
    // Bitwise so that -0.0 vs 0.0 and NaN payloads count as changes.
    return std::memcmp(a.logits_.data(), b.logits_.data(), a.logits_.size() * sizeof(double)) == 0;
  }

 private:
  static double log_softmax_at(std::span<const double> logits, std::size_t k) {
    double hi = -INFINITY;
    for (double x : logits) hi = std::max(hi, x);
    double z = 0.0;
    for (double x : logits) z += std::exp(x - hi);
    return logits[k] - hi - std::log(z);
  }

  static nlohmann::json encode_logit(double x) {
    if (x == -INFINITY) return "-inf";
    return x;
  }

  static double decode_logit(const nlohmann::json& x) {
    if (x.is_string() && x.get<std::string>() == "-inf") return -INFINITY;
    if (!x.is_number()) throw InvalidArgument("checkpoint: logit is not a number");
    return x.get<double>();
  }

  Vocab vocab_;
  int order_;
  std::size_t rows_ = 1;
  std::vector<double> logits_;
};

}  // namespace astred
