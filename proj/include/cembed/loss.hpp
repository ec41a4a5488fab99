#pragma once

// In-batch contrastive objectives: plain InfoNCE and the hardness-weighted,
// false-negative-masked variant with a learnable per-task temperature
// tau_t = exp(theta_t). All gradients are analytic.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cembed/core_math.hpp"

namespace cembed {

/// theta is kept inside this box so that tau stays in [e^-10, e^10].
inline constexpr double kThetaMin = -10.0;
inline constexpr double kThetaMax = 10.0;

struct LossConfig {
  double alpha = 0.0;                          // hardness strength, >= 0
  std::optional<double> delta;                 // false-negative threshold; nullopt disables masking
  std::map<std::string, double> theta_per_task;
  bool differentiate_weights = true;           // false: w_i treated as constants in backprop
  bool symmetric = false;                      // average query->target and target->query

  /// Throws ConfigInvalid.
  void validate() const;
};

struct ContrastiveBatch {
  Matrix queries;                        // N x d, row-normalized
  Matrix targets;                        // N x d, row-normalized
  std::vector<int> positive_index;       // query i -> its positive target; empty means identity
  std::string task_id;
  std::vector<std::string> equivalence_groups;  // per target; empty when unknown

  Eigen::Index size() const { return queries.rows(); }
  int positive_of(Eigen::Index i) const {
    return positive_index.empty() ? static_cast<int>(i) : positive_index[static_cast<std::size_t>(i)];
  }
  std::vector<int> positives() const;

  /// Throws DimMismatch / ConfigInvalid.
  void validate() const;
};

struct LossOutput {
  double loss = 0.0;
  Matrix grad_queries;
  Matrix grad_targets;
  double grad_theta = 0.0;
  Mask mask;       // true = excluded as a false negative (query -> target direction)
  Matrix weights;  // exp(alpha * s) on kept negatives, 1 on positives, 0 where masked
  Matrix grad_similarities;  // dL/dS for S = queries * targets^T
  Vector row_losses;         // per query, query -> target direction; loss is their mean unless symmetric

  Eigen::Index masked_count() const { return mask.count(); }
};

double clamp_theta(double theta);

/// exp(theta) with theta clamped to [kThetaMin, kThetaMax].
double task_temperature(double theta);

/// Entry (i, j) is true iff j != positive(i) and <candidates_j, candidates_positive(i)> > delta.
/// All-false when delta is disabled.
Mask false_negative_mask(const Matrix& candidates, std::span<const int> positive_index, std::optional<double> delta);

/// w[i][j] = exp(alpha * S[i][j]) for kept negatives, 1 on positives, 0 where masked.
Matrix hardness_weights(const Matrix& similarities, double alpha, const Mask& mask,
                        std::span<const int> positive_index = {});

LossOutput infonce_loss(const ContrastiveBatch& batch, double tau);
LossOutput whnm_loss(const ContrastiveBatch& batch, const LossConfig& config);

/// Ground-truth false negatives from `equivalence_groups`: (i, j) true iff j is
/// not the positive of i but shares its group. All-false when groups are absent.
Mask equivalence_mask(const ContrastiveBatch& batch);

}  // namespace cembed
