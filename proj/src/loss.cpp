#include "cembed/loss.hpp"

#include <algorithm>
#include <cmath>

namespace cembed {

namespace {

// One direction of the objective on a precomputed similarity matrix.
struct DirectionTerms {
  double loss = 0.0;
  Matrix grad_similarities;  // dL/dS, already divided by N
  double grad_tau = 0.0;
  Vector row_losses;
};

DirectionTerms contrast(const Matrix& sims, std::span<const int> positives, const Mask& mask, double alpha,
                        double tau, bool differentiate_weights) {
  const Eigen::Index n = sims.rows();
  const Eigen::Index m = sims.cols();
  const double inv_tau = 1.0 / tau;
  const double neg_slope = differentiate_weights ? alpha + inv_tau : inv_tau;

  DirectionTerms out;
  out.grad_similarities = Matrix::Zero(n, m);
  out.row_losses = Vector::Zero(n);
  Vector logits(m);
  std::vector<Eigen::Index> kept;
  kept.reserve(static_cast<std::size_t>(m));

  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index pos = positives[static_cast<std::size_t>(i)];
    kept.clear();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (mask(i, j)) continue;
      // log(w_j * exp(s/tau)) = alpha*s + s/tau on negatives.
      logits(static_cast<Eigen::Index>(kept.size())) = (j == pos) ? sims(i, j) * inv_tau
                                                                   : alpha * sims(i, j) + sims(i, j) * inv_tau;
      kept.push_back(j);
    }
    const auto live = logits.head(static_cast<Eigen::Index>(kept.size()));
    const double lse = logsumexp(live);
    out.row_losses(i) = lse - sims(i, pos) * inv_tau;
    out.loss += out.row_losses(i);

    double expected_sim = 0.0;
    for (std::size_t k = 0; k < kept.size(); ++k) {
      const Eigen::Index j = kept[k];
      const double p = std::exp(live(static_cast<Eigen::Index>(k)) - lse);
      expected_sim += p * sims(i, j);
      out.grad_similarities(i, j) = (j == pos) ? (p - 1.0) * inv_tau : p * neg_slope;
    }
    out.grad_tau += (sims(i, pos) - expected_sim) * inv_tau * inv_tau;
  }

  const double scale = 1.0 / static_cast<double>(n);
  out.loss *= scale;
  out.grad_similarities *= scale;
  out.grad_tau *= scale;
  return out;
}

std::vector<int> inverse_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  return inv;
}

LossOutput evaluate(const ContrastiveBatch& batch, double alpha, std::optional<double> delta, double tau,
                    bool differentiate_weights, bool symmetric) {
  batch.validate();
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::kTemperatureNonPositive, "temperature must be positive, got " + std::to_string(tau));
  }
  const std::vector<int> positives = batch.positives();
  const Matrix sims = similarity_matrix(batch.queries, batch.targets);

  LossOutput out;
  out.mask = false_negative_mask(batch.targets, positives, delta);
  out.weights = hardness_weights(sims, alpha, out.mask, positives);

  DirectionTerms fwd = contrast(sims, positives, out.mask, alpha, tau, differentiate_weights);
  Matrix grad_sims = std::move(fwd.grad_similarities);
  out.loss = fwd.loss;
  out.row_losses = std::move(fwd.row_losses);
  double grad_tau = fwd.grad_tau;

  if (symmetric) {
    // Reverse direction: each target retrieves its query among all queries;
    // false negatives are judged against the positive query.
    const std::vector<int> inverse = inverse_permutation(positives);
    const Mask reverse_mask = false_negative_mask(batch.queries, inverse, delta);
    const Matrix sims_t = sims.transpose();
    DirectionTerms rev = contrast(sims_t, inverse, reverse_mask, alpha, tau, differentiate_weights);
    out.loss = 0.5 * (out.loss + rev.loss);
    grad_sims = 0.5 * (grad_sims + rev.grad_similarities.transpose());
    grad_tau = 0.5 * (grad_tau + rev.grad_tau);
  }

  out.grad_queries = grad_sims * batch.targets;
  out.grad_similarities = std::move(grad_sims);
  out.grad_targets = out.grad_similarities.transpose() * batch.queries;
  out.grad_theta = grad_tau;  // converted to d/dtheta by the caller where relevant
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) {
    throw Error(ErrorCode::kConfigInvalid, "alpha must be finite and >= 0");
  }
  if (delta && !(*delta > 0.0 && *delta <= 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "delta must lie in (0, 1]");
  }
  for (const auto& [task, theta] : theta_per_task) {
    if (!std::isfinite(theta)) throw Error(ErrorCode::kConfigInvalid, "theta for task '" + task + "' is not finite");
  }
}

std::vector<int> ContrastiveBatch::positives() const {
  std::vector<int> out(static_cast<std::size_t>(size()));
  for (Eigen::Index i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = positive_of(i);
  return out;
}

void ContrastiveBatch::validate() const {
  const Eigen::Index n = queries.rows();
  if (n < 2) throw Error(ErrorCode::kConfigInvalid, "a contrastive batch needs at least 2 pairs");
  if (targets.rows() != n || targets.cols() != queries.cols()) {
    throw Error(ErrorCode::kDimMismatch, "queries and targets must have identical shapes");
  }
  if (!all_finite(queries) || !all_finite(targets)) {
    throw Error(ErrorCode::kConfigInvalid, "batch embeddings contain non-finite values");
  }
  if (!positive_index.empty()) {
    if (static_cast<Eigen::Index>(positive_index.size()) != n) {
      throw Error(ErrorCode::kDimMismatch, "positive_index length differs from batch size");
    }
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int p : positive_index) {
      if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)]) {
        throw Error(ErrorCode::kConfigInvalid, "positive_index is not a permutation");
      }
      seen[static_cast<std::size_t>(p)] = true;
    }
  }
  if (!equivalence_groups.empty() && static_cast<Eigen::Index>(equivalence_groups.size()) != n) {
    throw Error(ErrorCode::kDimMismatch, "equivalence_groups length differs from batch size");
  }
}

double clamp_theta(double theta) { return std::clamp(theta, kThetaMin, kThetaMax); }

double task_temperature(double theta) { return std::exp(clamp_theta(theta)); }

Mask false_negative_mask(const Matrix& candidates, std::span<const int> positive_index,
                         std::optional<double> delta) {
  const Eigen::Index n = static_cast<Eigen::Index>(positive_index.size());
  const Eigen::Index m = candidates.rows();
  Mask mask = Mask::Constant(n, m, false);
  if (!delta) return mask;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index pos = positive_index[static_cast<std::size_t>(i)];
    if (pos < 0 || pos >= m) throw Error(ErrorCode::kDimMismatch, "positive index out of range");
    const auto anchor = candidates.row(pos);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != pos && candidates.row(j).dot(anchor) > *delta) mask(i, j) = true;
    }
  }
  return mask;
}

Matrix hardness_weights(const Matrix& similarities, double alpha, const Mask& mask,
                        std::span<const int> positive_index) {
  if (mask.rows() != similarities.rows() || mask.cols() != similarities.cols()) {
    throw Error(ErrorCode::kDimMismatch, "mask shape differs from similarity matrix");
  }
  Matrix w = (alpha * similarities.array()).exp().matrix();
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      if (mask(i, j)) w(i, j) = 0.0;
    }
    const Eigen::Index pos = positive_index.empty() ? i : positive_index[static_cast<std::size_t>(i)];
    w(i, pos) = 1.0;
  }
  return w;
}

LossOutput infonce_loss(const ContrastiveBatch& batch, double tau) {
  LossOutput out = evaluate(batch, 0.0, std::nullopt, tau, true, false);
  out.grad_theta *= tau;
  return out;
}

LossOutput whnm_loss(const ContrastiveBatch& batch, const LossConfig& config) {
  config.validate();
  const auto it = config.theta_per_task.find(batch.task_id);
  if (it == config.theta_per_task.end()) {
    throw Error(ErrorCode::kMissingTaskTheta, "no theta for task '" + batch.task_id + "'");
  }
  const double theta = it->second;
  const double tau = task_temperature(theta);
  LossOutput out = evaluate(batch, config.alpha, config.delta, tau, config.differentiate_weights, config.symmetric);
  // dtau/dtheta = tau inside the clamp box, 0 outside it.
  const bool clamped = theta < kThetaMin || theta > kThetaMax;
  out.grad_theta = clamped ? 0.0 : out.grad_theta * tau;
  return out;
}

Mask equivalence_mask(const ContrastiveBatch& batch) {
  const Eigen::Index n = batch.size();
  Mask mask = Mask::Constant(n, n, false);
  if (batch.equivalence_groups.empty()) return mask;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int pos = batch.positive_of(i);
    const auto& group = batch.equivalence_groups[static_cast<std::size_t>(pos)];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != pos && batch.equivalence_groups[static_cast<std::size_t>(j)] == group) mask(i, j) = true;
    }
  }
  return mask;
}

}  // namespace cembed
