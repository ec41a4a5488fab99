#pragma once

// Central finite-difference checks of the analytic gradients. The
// differences only ever call forward passes.

#include <cstdint>
#include <optional>
#include <vector>

#include "cembed/encoder.hpp"
#include "cembed/loss.hpp"

namespace cembed {

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
double relative_error(double analytic, double numeric, double floor);

struct GradCheckOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  Eigen::Index min_batch = 2;
  Eigen::Index max_batch = 8;
  Eigen::Index min_dim = 2;
  Eigen::Index max_dim = 16;
  std::vector<double> alphas = {0.0, 1.0, 9.0};
  std::vector<std::optional<double>> deltas = {std::nullopt, 0.95};
  double theta_min = -3.0;
  double theta_max = 0.0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-6;
  // Configurations with a similarity within this distance of delta are redrawn:
  // a step of `step` could flip the mask there and the loss is not differentiable.
  double mask_margin = 1e-3;
  bool through_normalization = false;  // differentiate w.r.t. unnormalized rows
  bool random_symmetric = false;       // also draw symmetric=true configurations
};

struct GradCheckReport {
  std::size_t trials = 0;
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;
  double max_rel_err_queries = 0.0;
  double max_rel_err_targets = 0.0;
  double max_rel_err_theta = 0.0;

  bool passed() const { return failures == 0; }
};

/// Random (N, d, alpha, delta, theta) configurations; some batches carry
/// exact duplicate targets so that masking is exercised.
GradCheckReport check_loss_gradients(const GradCheckOptions& options);

struct EncoderGradCheckOptions {
  std::size_t trials = 50;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-6;
};

/// Encoder parameters (W, b, A, B) through normalization and a WHNM loss.
GradCheckReport check_encoder_gradients(const EncoderGradCheckOptions& options);

}  // namespace cembed
