#include "cembed/souping.hpp"

#include <cmath>
#include <string>

namespace cembed {

void validate_soup_weights(const std::vector<double>& weights, std::size_t count) {
  if (weights.size() != count) {
    throw Error(ErrorCode::kWeightsInvalid,
                std::to_string(weights.size()) + " weights for " + std::to_string(count) + " adapters");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::kWeightsInvalid, "weights must be finite and >= 0");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kWeightsInvalid, "weights sum to " + std::to_string(total) + ", expected 1");
  }
}

LoraAdapter factorize_delta(const Matrix& delta, Eigen::Index rank) {
  if (rank < 1) throw Error(ErrorCode::kShapeMismatch, "target rank must be >= 1");
  const Eigen::Index r = std::min({rank, delta.rows(), delta.cols()});
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  LoraAdapter out;
  out.B = Matrix::Zero(delta.rows(), rank);
  out.A = Matrix::Zero(rank, delta.cols());
  out.B.leftCols(r) = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  out.A.topRows(r) = svd.matrixV().leftCols(r).transpose();
  out.scaling = 1.0;
  return out;
}

SoupResult soup_adapters(const SoupSpec& spec) {
  if (spec.adapters.empty()) throw Error(ErrorCode::kShapeMismatch, "nothing to soup");
  std::vector<double> weights = spec.weights;
  if (weights.empty()) weights.assign(spec.adapters.size(), 1.0 / static_cast<double>(spec.adapters.size()));
  validate_soup_weights(weights, spec.adapters.size());

  const LoraAdapter& first = spec.adapters.front();
  for (const LoraAdapter& a : spec.adapters) {
    if (a.A.rows() != first.A.rows() || a.A.cols() != first.A.cols() || a.B.rows() != first.B.rows() ||
        a.B.cols() != first.B.cols()) {
      throw Error(ErrorCode::kShapeMismatch, "adapters in a soup must share shapes");
    }
  }

  SoupResult out;
  out.delta = Matrix::Zero(first.B.rows(), first.A.cols());
  for (std::size_t i = 0; i < spec.adapters.size(); ++i) out.delta += weights[i] * spec.adapters[i].delta();

  if (spec.strategy == SoupStrategy::kFactorSvd) {
    out.adapter = factorize_delta(out.delta, spec.target_rank.value_or(first.rank()));
  }
  return out;
}

EncoderParams merge_into_base(const EncoderParams& params, const Matrix& delta) {
  if (delta.rows() != params.W.rows() || delta.cols() != params.W.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "delta shape differs from the base weight");
  }
  EncoderParams out;
  out.W = params.W + delta;
  out.b = params.b;
  return out;
}

}  // namespace cembed
