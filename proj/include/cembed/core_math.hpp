#pragma once

// Dense primitives shared by every module. Everything is templated on the
// scalar type and accepts arbitrary Eigen expressions; the rest of the
// library instantiates it with double.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "cembed/error.hpp"

namespace cembed {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Norms below this are treated as zero by the normalizers.
inline constexpr double kZeroNormThreshold = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

/// Unit-L2 copy of `v`. Throws ZeroVector when ‖v‖ < 1e-12.
template <typename Derived>
VectorX<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = v.norm();
  if (!(norm >= Scalar(kZeroNormThreshold))) {
    throw Error(ErrorCode::kZeroVector, "cannot normalize a vector of norm " + std::to_string(double(norm)));
  }
  return v / norm;
}

/// Row-wise l2_normalize.
template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar norm = m.row(i).norm();
    if (!(norm >= Scalar(kZeroNormThreshold))) {
      throw Error(ErrorCode::kZeroVector, "row " + std::to_string(i) + " has norm " + std::to_string(double(norm)));
    }
    out.row(i) = m.row(i) / norm;
  }
  return out;
}

/// Pulls a gradient w.r.t. normalize_rows(raw) back to `raw`:
/// dx = (g - y (y . g)) / |x| per row.
template <typename DerivedX, typename DerivedG>
MatrixX<typename DerivedX::Scalar> normalize_rows_backward(const Eigen::MatrixBase<DerivedX>& raw,
                                                           const Eigen::MatrixBase<DerivedG>& grad_normalized) {
  using Scalar = typename DerivedX::Scalar;
  if (raw.rows() != grad_normalized.rows() || raw.cols() != grad_normalized.cols()) {
    throw Error(ErrorCode::kDimMismatch, "normalize_rows_backward: gradient shape differs from input");
  }
  MatrixX<Scalar> out(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const Scalar norm = raw.row(i).norm();
    if (!(norm >= Scalar(kZeroNormThreshold))) {
      throw Error(ErrorCode::kZeroVector, "row " + std::to_string(i) + " has zero norm");
    }
    const auto y = (raw.row(i) / norm).eval();
    const Scalar radial = y.dot(grad_normalized.row(i));
    out.row(i) = (grad_normalized.row(i) - radial * y) / norm;
  }
  return out;
}

/// S[i][j] = <Q_i, K_j>. Cosine similarity when both sides are row-normalized.
template <typename DerivedQ, typename DerivedK>
MatrixX<typename DerivedQ::Scalar> similarity_matrix(const Eigen::MatrixBase<DerivedQ>& queries,
                                                     const Eigen::MatrixBase<DerivedK>& keys) {
  if (queries.cols() != keys.cols()) {
    throw Error(ErrorCode::kDimMismatch, "similarity_matrix: " + std::to_string(queries.cols()) + " vs " +
                                             std::to_string(keys.cols()) + " columns");
  }
  return queries * keys.transpose();
}

/// log(sum(exp(x))) with a max shift; left-to-right accumulation.
template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::DenseBase<Derived>& xs) {
  using Scalar = typename Derived::Scalar;
  if (xs.size() == 0) throw Error(ErrorCode::kEmptyInput, "logsumexp of an empty sequence");
  Scalar peak = -std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < xs.size(); ++i) peak = std::max(peak, xs.derived().coeff(i));
  Scalar acc = 0;
  for (Eigen::Index i = 0; i < xs.size(); ++i) acc += std::exp(xs.derived().coeff(i) - peak);
  return peak + std::log(acc);
}

}  // namespace cembed
