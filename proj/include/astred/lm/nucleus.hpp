#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "astred/core/error.hpp"
#include "astred/core/random.hpp"

namespace astred {

// Numerically stable softmax of `logits / temperature`. Entries equal to
// -infinity get probability zero.
inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0) {
  std::vector<double> p(logits.size());
  double hi = -INFINITY;
  for (double x : logits) hi = std::max(hi, x);
  if (!std::isfinite(hi)) throw InvalidArgument("softmax: no finite logit");
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - hi) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

// Smallest set of highest-probability indices whose mass reaches `top_p`.
// Indices tied with the last admitted probability are all admitted, so the
// result does not depend on index order. Returned in descending probability,
// ascending index among ties.
inline std::vector<std::size_t> nucleus(std::span<const double> probs, double top_p) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  // Slack for rounding: top_p == 1 must admit every token with positive mass.
  constexpr double kSlack = 1e-12;
  double mass = 0.0;
  std::size_t n = 0;
  while (n < order.size()) {
    if (probs[order[n]] <= 0.0) break;
    mass += probs[order[n]];
    ++n;
    if (mass >= top_p - kSlack) break;
  }
  if (n == 0) throw InvalidArgument("nucleus: distribution has no positive mass");
  const double cutoff = probs[order[n - 1]];
  while (n < order.size() && probs[order[n]] == cutoff) ++n;
  order.resize(n);
  return order;
}

inline std::size_t argmax(std::span<const double> probs) {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// Draw an index from the renormalized nucleus using one uniform variate.
inline std::size_t draw_from_nucleus(std::span<const double> probs,
                                     std::span<const std::size_t> members, double u) {
  double z = 0.0;
  for (std::size_t i : members) z += probs[i];
  const double target = u * z;
  double acc = 0.0;
  for (std::size_t i : members) {
    acc += probs[i];
    if (target < acc) return i;
  }
  return members.back();
}

}  // namespace astred
