#pragma once

#include <cmath>
#include <span>

#include "astred/core/error.hpp"
#include "astred/lm/policy.hpp"
#include "astred/lm/toy_policy.hpp"

namespace astred {

// Log-ratio margin shared by IPO and DPO:
//   [log p(chosen) - log p_ref(chosen)] - [log p(rejected) - log p_ref(rejected)]
// Computed from summed log-probabilities, never from probability products.
inline double preference_margin(const Policy& policy, const Policy& reference, const TokenSeq& x,
                                const TokenSeq& chosen, const TokenSeq& rejected) {
  require_continuation(chosen);
  require_continuation(rejected);
  return (policy.logprob(x, chosen).sum - reference.logprob(x, chosen).sum) -
         (policy.logprob(x, rejected).sum - reference.logprob(x, rejected).sum);
}

// IPO log-ratio h(y+, y-, x).
inline double ipo_h(const Policy& policy, const Policy& reference, const TokenSeq& x, const TokenSeq& y_plus,
                    const TokenSeq& y_minus) {
  return preference_margin(policy, reference, x, y_plus, y_minus);
}

// (h - 1/(2 beta))^2
inline double ipo_loss(double h, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("ipo_loss: beta must be positive");
  const double d = h - 1.0 / (2.0 * beta);
  return d * d;
}

// -log sigmoid(beta * margin), evaluated without overflow.
inline double dpo_loss(double margin, double beta) {
  if (!(beta > 0.0)) throw InvalidArgument("dpo_loss: beta must be positive");
  const double z = beta * margin;
  return z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct PairLoss {
  double loss;
  double margin;
};

namespace detail {

inline void accumulate_margin_grad(const ToyPolicy& policy, const TokenSeq& x, const TokenSeq& chosen,
                                   const TokenSeq& rejected, double scale, std::span<double> grad) {
  policy.accumulate_grad_logprob(x, chosen, scale, grad);
  policy.accumulate_grad_logprob(x, rejected, -scale, grad);
}

}  // namespace detail

// IPO loss for one triple; adds scale * dL/dθ into `grad`.
inline PairLoss ipo_loss_and_grad(const ToyPolicy& policy, const Policy& reference, const TokenSeq& x,
                                const TokenSeq& y_plus, const TokenSeq& y_minus, double beta, double scale,
                                std::span<double> grad) {
  const double h = ipo_h(policy, reference, x, y_plus, y_minus);
  const double loss = ipo_loss(h, beta);
  detail::accumulate_margin_grad(policy, x, y_plus, y_minus, scale * 2.0 * (h - 1.0 / (2.0 * beta)), grad);
  return {loss, h};
}

// DPO loss for one pair; adds scale * dL/dθ into `grad`.
inline PairLoss dpo_loss_and_grad(const ToyPolicy& policy, const Policy& reference, const TokenSeq& x,
                                const TokenSeq& chosen, const TokenSeq& rejected, double beta, double scale,
                                std::span<double> grad) {
  const double margin = preference_margin(policy, reference, x, chosen, rejected);
  const double loss = dpo_loss(margin, beta);
  // d/dm [-log sigmoid(beta m)] = -beta * sigmoid(-beta m)
  detail::accumulate_margin_grad(policy, x, chosen, rejected, scale * -beta * sigmoid(-beta * margin), grad);
  return {loss, margin};
}

}  // namespace astred
