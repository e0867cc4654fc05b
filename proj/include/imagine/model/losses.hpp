#pragma once

#include <cmath>
#include <vector>

#include "imagine/core/ops.hpp"
#include "imagine/nn/blocks.hpp"

namespace imagine {

// ---------------------------------------------------------------------------
// Pixel scoring: channel intensities in [0,1] are treated as
// pseudo-probabilities and scored by negative KL against the predicted
// Bernoulli means, so a perfect prediction scores exactly 0.
// ---------------------------------------------------------------------------

template <typename T>
Var pixel_log_prob(Tape<T>& tp, Var log_odds, const Tensor<T>& target) {
  return bernoulli_score(tp, log_odds, target, /*include_target_entropy=*/true);
}

/// Value-only version (no tape).
template <typename T>
double pixel_log_prob_value(const Tensor<T>& log_odds, const Tensor<T>& target) {
  IM_CHECK(log_odds.shape() == target.shape(), "pixel score: shape mismatch");
  double acc = 0;
  for (long i = 0; i < log_odds.numel(); ++i) {
    const double l = log_odds[i];
    const double p = target[i];
    acc -= p * detail::stable_softplus(-l) + (1 - p) * detail::stable_softplus(l);
    if (p > 0) acc -= p * std::log(p);
    if (p < 1) acc -= (1 - p) * std::log(1 - p);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Reward codec: N magnitude bits (LSB first) for |floor(r)|, one sign bit
// (r < 0), one zero-indicator bit (r == 0).
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> reward_encode(double r, int N) {
  IM_CHECK(N >= 1, "reward bit count must be >= 1");
  const long mag = std::lround(std::abs(std::floor(r)));
  IM_CHECK(mag < (1L << N),
           "reward magnitude " + std::to_string(mag) + " overflows " +
               std::to_string(N) + " bits");
  std::vector<uint8_t> bits(N + 2, 0);
  for (int i = 0; i < N; ++i) bits[i] = static_cast<uint8_t>((mag >> i) & 1);
  bits[N] = r < 0 ? 1 : 0;
  bits[N + 1] = r == 0 ? 1 : 0;
  return bits;
}

inline double reward_decode(const std::vector<uint8_t>& bits, int N) {
  IM_CHECK(static_cast<int>(bits.size()) == N + 2, "reward bit vector length mismatch");
  if (bits[N + 1]) return 0.0;
  long mag = 0;
  for (int i = 0; i < N; ++i) mag |= static_cast<long>(bits[i]) << i;
  return bits[N] ? -static_cast<double>(mag) : static_cast<double>(mag);
}

template <typename T>
Var reward_log_prob(Tape<T>& tp, Var logits, double r, int N) {
  const auto bits = reward_encode(r, N);
  IM_CHECK(tp.val(logits).numel() == N + 2, "reward logits length mismatch");
  Tensor<T> target({N + 2});
  for (int i = 0; i < N + 2; ++i) target[i] = static_cast<T>(bits[i]);
  return bernoulli_score(tp, logits, target, /*include_target_entropy=*/false);
}

template <typename T>
double reward_log_prob_value(const Tensor<T>& logits, double r, int N) {
  const auto bits = reward_encode(r, N);
  IM_CHECK(logits.numel() == N + 2, "reward logits length mismatch");
  double acc = 0;
  for (int i = 0; i < N + 2; ++i) {
    const double l = logits[i];
    acc -= bits[i] ? detail::stable_softplus(-l) : detail::stable_softplus(l);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Diagonal Gaussian KL, elementwise closed form summed over all entries.
// ---------------------------------------------------------------------------

template <typename T>
double gaussian_kl_value(const Tensor<T>& mu_q, const Tensor<T>& sigma_q,
                         const Tensor<T>& mu_p, const Tensor<T>& sigma_p) {
  IM_CHECK(mu_q.shape() == mu_p.shape() && sigma_q.shape() == sigma_p.shape() &&
               mu_q.shape() == sigma_q.shape(),
           "gaussian_kl: shape mismatch");
  double acc = 0;
  for (long i = 0; i < mu_q.numel(); ++i) {
    const double sq = sigma_q[i], sp = sigma_p[i];
    const double dm = mu_q[i] - mu_p[i];
    acc += std::log(sp / sq) + (sq * sq + dm * dm) / (2 * sp * sp) - 0.5;
  }
  return acc;
}

template <typename T>
Var gaussian_kl(Tape<T>& tp, const LatentStatsVar<T>& q, const LatentStatsVar<T>& p) {
  Var lt = sub(tp, log_op(tp, p.sigma), log_op(tp, q.sigma));
  Var num = add(tp, square(tp, q.sigma), square(tp, sub(tp, q.mu, p.mu)));
  Var den = scale(tp, square(tp, p.sigma), T(2));
  Var ratio = affine(tp, div(tp, num, den), T(1), T(-0.5));
  return sum_all(tp, add(tp, lt, ratio));
}

/// Sum over elements of log N(z; mu, sigma^2). Used by the importance
/// sampling estimate that cross-checks the analytic KL path.
template <typename T>
Var gaussian_log_prob(Tape<T>& tp, Var z, const LatentStatsVar<T>& stats) {
  Var dz = div(tp, sub(tp, z, stats.mu), stats.sigma);
  Var quad = scale(tp, square(tp, dz), T(-0.5));
  Var norm = affine(tp, log_op(tp, stats.sigma), T(-1),
                    T(-0.5 * std::log(2.0 * M_PI)));
  return sum_all(tp, add(tp, quad, norm));
}

}  // namespace imagine
