#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"

namespace astred {

struct Token {
  std::int32_t id = 0;
  friend auto operator<=>(const Token&, const Token&) = default;
};

enum class Role { context, adversary, defender };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::context: return "context";
    case Role::adversary: return "adversary";
    case Role::defender: return "defender";
  }
  return "context";
}

inline Role role_from_string(std::string_view s) {
  if (s == "context") return Role::context;
  if (s == "adversary") return Role::adversary;
  if (s == "defender") return Role::defender;
  throw InvalidArgument("unknown role '" + std::string(s) + "'");
}

// A run of tokens produced by one speaker. The role is fixed at construction.
class TokenSeq {
 public:
  explicit TokenSeq(Role role = Role::context, std::vector<Token> tokens = {})
      : role_(role), tokens_(std::move(tokens)) {}

  Role role() const noexcept { return role_; }
  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  std::span<const Token> span() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  Token operator[](std::size_t i) const { return tokens_[i]; }

  void push_back(Token t) { tokens_.push_back(t); }

  // New context-role sequence holding this one followed by every part.
  template <typename... Seqs>
  TokenSeq extended(const Seqs&... parts) const {
    std::vector<Token> out = tokens_;
    (out.insert(out.end(), parts.tokens().begin(), parts.tokens().end()), ...);
    return TokenSeq(Role::context, std::move(out));
  }

  bool starts_with(const TokenSeq& prefix) const {
    return prefix.size() <= size() &&
           std::equal(prefix.tokens_.begin(), prefix.tokens_.end(), tokens_.begin());
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;

 private:
  Role role_;
  std::vector<Token> tokens_;
};

// Closed word-level vocabulary. Text is split on whitespace; unknown words map
// to the unknown marker when the vocabulary has one and are rejected otherwise.
class Vocab {
 public:
  static constexpr std::string_view kDefaultEot = "<eot>";
  static constexpr std::string_view kDefaultUnk = "<unk>";

  Vocab() = default;

  explicit Vocab(std::vector<std::string> symbols, std::string eot = std::string(kDefaultEot),
                 std::string unk = std::string(kDefaultUnk))
      : symbols_(std::move(symbols)) {
    if (symbols_.empty()) throw InvalidArgument("vocab: no symbols");
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      const auto& s = symbols_[i];
      if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
        throw InvalidArgument("vocab: symbol '" + s + "' is empty or contains whitespace");
      }
      if (!index_.emplace(s, static_cast<std::int32_t>(i)).second) {
        throw InvalidArgument("vocab: duplicate symbol '" + s + "'");
      }
    }
    auto e = find(eot);
    if (!e) throw InvalidArgument("vocab: end-of-turn marker '" + eot + "' is not a member");
    eot_ = *e;
    unk_ = find(unk);
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  Token eot() const noexcept { return eot_; }
  std::optional<Token> unk() const noexcept { return unk_; }

  bool contains(Token t) const noexcept {
    return t.id >= 0 && static_cast<std::size_t>(t.id) < symbols_.size();
  }

  const std::string& symbol(Token t) const {
    if (!contains(t)) throw InvalidArgument("vocab: token id " + std::to_string(t.id) + " out of range");
    return symbols_[static_cast<std::size_t>(t.id)];
  }

  std::optional<Token> find(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return Token{it->second};
  }

  Token lookup(std::string_view word) const {
    if (auto t = find(word)) return *t;
    if (unk_) return *unk_;
    throw InvalidArgument("vocab: out-of-vocabulary word '" + std::string(word) + "'");
  }

  TokenSeq tokenize(std::string_view text, Role role = Role::context) const {
    std::vector<Token> out;
    std::istringstream is{std::string(text)};
    std::string word;
    while (is >> word) out.push_back(lookup(word));
    return TokenSeq(role, std::move(out));
  }

  std::string detokenize(std::span<const Token> tokens) const {
    std::string out;
    for (Token t : tokens) {
      if (!out.empty()) out += ' ';
      out += symbol(t);
    }
    return out;
  }
  std::string detokenize(const TokenSeq& seq) const { return detokenize(seq.span()); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["symbols"] = symbols_;
    j["eot"] = symbol(eot_);
    j["unk"] = unk_ ? nlohmann::json(symbol(*unk_)) : nlohmann::json(nullptr);
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    std::string unk = j.contains("unk") && j["unk"].is_string() ? j["unk"].get<std::string>()
                                                                : std::string(kDefaultUnk);
    return Vocab(j.at("symbols").get<std::vector<std::string>>(), j.at("eot").get<std::string>(),
                 unk);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.symbols_ == b.symbols_ && a.eot_ == b.eot_ && a.unk_ == b.unk_;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> index_;
  Token eot_{};
  std::optional<Token> unk_;
};

}  // namespace astred
