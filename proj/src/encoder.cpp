#include "cembed/encoder.hpp"

#include <cctype>
#include <string>

namespace cembed {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view prefix, std::string_view bytes) {
  std::uint64_t h = kFnvOffset;
  for (unsigned char c : prefix) h = (h ^ c) * kFnvPrime;
  for (unsigned char c : bytes) h = (h ^ c) * kFnvPrime;
  return h;
}

void add_hashed(Vector& out, std::uint64_t seed_mix, std::string_view prefix, std::string_view feature,
                double weight) {
  const std::uint64_t h = splitmix64(fnv1a(prefix, feature) ^ seed_mix);
  const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(out.size()));
  out(bucket) += (h >> 63) ? -weight : weight;
}

}  // namespace

Vector Featurizer::featurize(std::string_view text) const {
  if (dim_in < 1) throw Error(ErrorCode::kDimMismatch, "featurizer dimension must be positive");
  Vector out = Vector::Zero(dim_in);
  const std::uint64_t seed_mix = splitmix64(seed);
  bool any = false;
  std::size_t pos = 0;
  std::string padded;
  while (pos < text.size()) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos == start) break;
    const std::string_view token = text.substr(start, pos - start);
    any = true;
    add_hashed(out, seed_mix, "w:", token, kTokenWeight);
    padded.assign("<").append(token).append(">");
    for (std::size_t k = 0; k + 3 <= padded.size(); ++k) {
      add_hashed(out, seed_mix, "c:", std::string_view(padded).substr(k, 3), kTrigramWeight);
    }
  }
  if (!any) throw Error(ErrorCode::kEmptyText, "cannot featurize empty text");
  return out;
}

LoraAdapter LoraAdapter::initialize(Eigen::Index d_in, Eigen::Index d_out, Eigen::Index rank, Rng& rng,
                                    double sigma, double scaling) {
  if (rank < 1) throw Error(ErrorCode::kShapeMismatch, "adapter rank must be >= 1");
  LoraAdapter adapter;
  adapter.A.resize(rank, d_in);
  for (Eigen::Index i = 0; i < adapter.A.size(); ++i) adapter.A.data()[i] = sigma * rng.normal();
  adapter.B = Matrix::Zero(d_out, rank);
  adapter.scaling = scaling;
  return adapter;
}

Matrix EncoderParams::effective_weight() const {
  if (!adapter) return W;
  return W + adapter->delta();
}

void EncoderParams::validate() const {
  if (W.rows() < 1 || W.cols() < 1) throw Error(ErrorCode::kShapeMismatch, "empty weight matrix");
  if (b.size() != W.rows()) throw Error(ErrorCode::kShapeMismatch, "bias length differs from d_out");
  if (adapter) {
    if (adapter->rank() < 1) throw Error(ErrorCode::kShapeMismatch, "adapter rank must be >= 1");
    if (adapter->A.cols() != W.cols() || adapter->B.rows() != W.rows() || adapter->B.cols() != adapter->rank()) {
      throw Error(ErrorCode::kShapeMismatch, "adapter factors do not match the base weight");
    }
  }
}

EncoderParams EncoderParams::initialize(Eigen::Index d_in, Eigen::Index d_out, Rng& rng) {
  EncoderParams p;
  p.W.resize(d_out, d_in);
  const double sigma = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (Eigen::Index i = 0; i < p.W.size(); ++i) p.W.data()[i] = sigma * rng.normal();
  p.b = Vector::Zero(d_out);
  return p;
}

Vector encode(const Vector& x, const EncoderParams& params) {
  if (x.size() != params.d_in()) {
    throw Error(ErrorCode::kDimMismatch,
                "input has dim " + std::to_string(x.size()) + ", encoder expects " + std::to_string(params.d_in()));
  }
  const Vector z = params.effective_weight() * x + params.b;
  return l2_normalize(z);
}

EncodedBatch encode_batch(const Matrix& inputs, const EncoderParams& params) {
  params.validate();
  if (inputs.cols() != params.d_in()) {
    throw Error(ErrorCode::kDimMismatch, "inputs have " + std::to_string(inputs.cols()) +
                                             " columns, encoder expects " + std::to_string(params.d_in()));
  }
  EncodedBatch out;
  out.inputs = inputs;
  Matrix pre = inputs * params.effective_weight().transpose();
  pre.rowwise() += params.b.transpose();
  out.outputs = normalize_rows(pre);
  return out;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& params) {
  EncoderGrads g;
  g.W = Matrix::Zero(params.W.rows(), params.W.cols());
  g.b = Vector::Zero(params.b.size());
  if (params.adapter) {
    g.A = Matrix::Zero(params.adapter->A.rows(), params.adapter->A.cols());
    g.B = Matrix::Zero(params.adapter->B.rows(), params.adapter->B.cols());
  }
  return g;
}

EncoderGrads& EncoderGrads::operator+=(const EncoderGrads& other) {
  if (other.W.rows() != W.rows() || other.W.cols() != W.cols() || other.A.size() != A.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient shapes differ");
  }
  W += other.W;
  b += other.b;
  if (A.size() > 0) {
    A += other.A;
    B += other.B;
  }
  return *this;
}

double EncoderGrads::squared_norm() const {
  return W.squaredNorm() + b.squaredNorm() + A.squaredNorm() + B.squaredNorm();
}

EncoderGrads encode_backward(const EncodedBatch& encoded, const EncoderParams& params, const Matrix& upstream,
                             TrainMode mode) {
  if (upstream.rows() != encoded.outputs.rows() || upstream.cols() != encoded.outputs.cols()) {
    throw Error(ErrorCode::kDimMismatch, "upstream gradient shape differs from encoder outputs");
  }
  if (encoded.inputs.cols() != params.d_in()) {
    throw Error(ErrorCode::kDimMismatch, "cached inputs do not match the encoder");
  }
  EncoderGrads g = EncoderGrads::zeros_like(params);

  // Back through the normalization: y = z / |z|, recomputed from the cache.
  Matrix pre = encoded.inputs * params.effective_weight().transpose();
  pre.rowwise() += params.b.transpose();
  const Matrix grad_pre = normalize_rows_backward(pre, upstream);
  const Matrix grad_weight = grad_pre.transpose() * encoded.inputs;  // d_out x d_in

  if (mode != TrainMode::kAdapterOnly) {
    g.W = grad_weight;
    g.b = grad_pre.colwise().sum().transpose();
  }
  if (params.adapter && mode != TrainMode::kBaseOnly) {
    const LoraAdapter& a = *params.adapter;
    g.B = a.scaling * grad_weight * a.A.transpose();
    g.A = a.scaling * a.B.transpose() * grad_weight;
  }
  return g;
}

}  // namespace cembed
