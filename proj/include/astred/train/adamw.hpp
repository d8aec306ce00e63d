#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "astred/core/error.hpp"

namespace astred {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw InvalidArgument("adamw: moment coefficients must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw InvalidArgument("adamw: epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("adamw: weight decay must be non-negative");
  }
};

// Adaptive-moment minimizer with decoupled weight decay. Moments persist
// across calls; the caller owns the parameters.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::size_t num_params, AdamWConfig config)
      : config_(config), m_(num_params, 0.0), v_(num_params, 0.0) {
    config_.validate();
  }

  const AdamWConfig& config() const noexcept { return config_; }
  std::int64_t steps() const noexcept { return step_; }
  std::size_t size() const noexcept { return m_.size(); }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

  void step(std::span<double> params, std::span<const double> grad, double learning_rate) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw InvalidArgument("adamw: parameter/gradient shape mismatch");
    ++step_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.epsilon);
      if (config_.weight_decay != 0.0) params[i] -= learning_rate * config_.weight_decay * params[i];
      params[i] -= learning_rate * update;
    }
  }

  nlohmann::json to_json() const {
    return {{"beta1", config_.beta1}, {"beta2", config_.beta2}, {"epsilon", config_.epsilon},
            {"weight_decay", config_.weight_decay}, {"step", step_}, {"m", m_}, {"v", v_}};
  }

  static AdamW from_json(const nlohmann::json& j) {
    AdamW opt;
    opt.config_ = AdamWConfig{j.at("beta1").get<double>(), j.at("beta2").get<double>(),
                              j.at("epsilon").get<double>(), j.at("weight_decay").get<double>()};
    opt.config_.validate();
    opt.step_ = j.at("step").get<std::int64_t>();
    opt.m_ = j.at("m").get<std::vector<double>>();
    opt.v_ = j.at("v").get<std::vector<double>>();
    if (opt.m_.size() != opt.v_.size()) throw InvalidArgument("adamw: moment shapes differ");
    return opt;
  }

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace astred
