#pragma once

// Consolidation of several low-rank adapters trained on the same base.
// Factors are never averaged directly (mean(B) * mean(A) is not the mean of
// B * A); the composed deltas are averaged instead.

#include <optional>
#include <vector>

#include "cembed/encoder.hpp"

namespace cembed {

enum class SoupStrategy {
  kDeltaAverage,  // dense weighted sum of deltas
  kFactorSvd,     // the same sum, truncated to rank r and re-factored
};

struct SoupSpec {
  std::vector<LoraAdapter> adapters;
  std::vector<double> weights;  // >= 0, sum to 1; empty means uniform
  SoupStrategy strategy = SoupStrategy::kDeltaAverage;
  std::optional<Eigen::Index> target_rank;  // factor-svd only; defaults to the adapters' rank
};

struct SoupResult {
  Matrix delta;                        // effective merged delta
  std::optional<LoraAdapter> adapter;  // set for factor-svd (scaling 1)
};

/// Throws ShapeMismatch, WeightsInvalid.
SoupResult soup_adapters(const SoupSpec& spec);

/// Best rank-`rank` approximation of `delta`, as B = U_r S_r, A = V_r^T, scaling 1.
LoraAdapter factorize_delta(const Matrix& delta, Eigen::Index rank);

/// W <- W + delta, adapter dropped. Throws ShapeMismatch.
EncoderParams merge_into_base(const EncoderParams& params, const Matrix& delta);

/// Checks weights are finite, non-negative and sum to 1 within 1e-9.
void validate_soup_weights(const std::vector<double>& weights, std::size_t count);

}  // namespace cembed
