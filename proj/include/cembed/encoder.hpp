#pragma once

// Toy backbone: signed feature hashing of text into a fixed-width vector,
// followed by one linear layer (optionally with a low-rank adapter) and L2
// normalization, which yields a single embedding per input.

#include <cstdint>
#include <optional>
#include <string_view>

#include "cembed/core_math.hpp"
#include "cembed/rng.hpp"

namespace cembed {

/// Hashes whitespace tokens and their character trigrams into `dim_in` signed buckets.
struct Featurizer {
  Eigen::Index dim_in = 64;
  std::uint64_t seed = 0;

  static constexpr double kTokenWeight = 1.0;
  static constexpr double kTrigramWeight = 0.25;

  /// Unnormalized feature vector. Throws EmptyText for empty or all-whitespace text.
  Vector featurize(std::string_view text) const;
};

/// delta() = scaling * B * A.
struct LoraAdapter {
  Matrix A;  // rank x d_in
  Matrix B;  // d_out x rank
  double scaling = 1.0;

  Eigen::Index rank() const { return A.rows(); }
  Matrix delta() const { return scaling * (B * A); }

  /// B = 0, A ~ N(0, sigma^2).
  static LoraAdapter initialize(Eigen::Index d_in, Eigen::Index d_out, Eigen::Index rank, Rng& rng,
                                double sigma = 0.02, double scaling = 1.0);
};

struct EncoderParams {
  Matrix W;  // d_out x d_in
  Vector b;  // d_out
  std::optional<LoraAdapter> adapter;

  Eigen::Index d_in() const { return W.cols(); }
  Eigen::Index d_out() const { return W.rows(); }

  /// W, plus the adapter delta when present.
  Matrix effective_weight() const;

  /// Throws ShapeMismatch.
  void validate() const;

  /// W ~ N(0, 1/d_in), b = 0, no adapter.
  static EncoderParams initialize(Eigen::Index d_in, Eigen::Index d_out, Rng& rng);
};

/// normalize((W + delta) x + b). Throws DimMismatch, ZeroVector.
Vector encode(const Vector& x, const EncoderParams& params);

/// Forward pass over a row-per-input matrix, keeping what the backward pass needs.
struct EncodedBatch {
  Matrix inputs;   // n x d_in
  Matrix outputs;  // n x d_out, row-normalized
};

EncodedBatch encode_batch(const Matrix& inputs, const EncoderParams& params);

enum class TrainMode {
  kFull,         // W, b and the adapter
  kBaseOnly,     // W and b; adapter gradients zero
  kAdapterOnly,  // A and B; base gradients zero
};

struct EncoderGrads {
  Matrix W;
  Vector b;
  Matrix A;  // empty when the encoder has no adapter
  Matrix B;

  static EncoderGrads zeros_like(const EncoderParams& params);
  EncoderGrads& operator+=(const EncoderGrads& other);
  double squared_norm() const;
};

/// Gradients of a downstream loss w.r.t. the parameters, given the gradient
/// w.r.t. `encoded.outputs`. Rows are reduced in index order.
EncoderGrads encode_backward(const EncodedBatch& encoded, const EncoderParams& params, const Matrix& upstream,
                             TrainMode mode = TrainMode::kFull);

}  // namespace cembed
