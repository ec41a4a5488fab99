#include "cembed/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "cembed/rng.hpp"

namespace cembed {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

Matrix random_rows(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<int> random_permutation(Rng& rng, int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  return p;
}

bool near_threshold(const Matrix& targets, const std::vector<int>& positives, std::optional<double> delta,
                    double margin) {
  if (!delta) return false;
  for (int p : positives) {
    for (Eigen::Index j = 0; j < targets.rows(); ++j) {
      if (j == p) continue;
      if (std::abs(targets.row(j).dot(targets.row(p)) - *delta) < margin) return true;
    }
  }
  return false;
}

struct Tracker {
  const double tolerance;
  const double floor;
  GradCheckReport& report;

  double check(double analytic, double numeric) {
    const double e = relative_error(analytic, numeric, floor);
    ++report.coordinates;
    if (!(e < tolerance)) ++report.failures;
    report.max_rel_err = std::max(report.max_rel_err, e);
    return e;
  }
};

}  // namespace

GradCheckReport check_loss_gradients(const GradCheckOptions& o) {
  Rng rng(derive_seed(o.seed, 0x67726164ULL));  // "grad"
  GradCheckReport report;
  Tracker track{o.tolerance, o.floor, report};

  for (std::size_t trial = 0; trial < o.trials; ++trial) {
    const auto n = o.min_batch + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(o.max_batch - o.min_batch + 1)));
    const auto d = o.min_dim + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(o.max_dim - o.min_dim + 1)));
    LossConfig config;
    config.alpha = o.alphas[rng.below(o.alphas.size())];
    config.delta = o.deltas[rng.below(o.deltas.size())];
    config.symmetric = o.random_symmetric && rng.bernoulli(0.5);
    const double theta = o.theta_min + (o.theta_max - o.theta_min) * rng.uniform();
    config.theta_per_task = {{"task", theta}};

    Matrix raw_q, raw_t;
    std::vector<int> positives;
    do {
      raw_q = random_rows(rng, n, d);
      raw_t = random_rows(rng, n, d);
      positives = random_permutation(rng, static_cast<int>(n));
      if (n >= 3 && rng.bernoulli(0.5)) {
        // Exact duplicate of a positive target: a false negative for its query.
        const auto src = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        auto dst = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - 1)));
        if (dst >= src) ++dst;
        raw_t.row(dst) = raw_t.row(src) * (o.through_normalization ? 1.0 + rng.uniform() : 1.0);
      }
    } while (near_threshold(normalize_rows(raw_t), positives, config.delta, o.mask_margin));

    auto loss_at = [&](const Matrix& q, const Matrix& t, double th) {
      ContrastiveBatch b;
      b.queries = o.through_normalization ? normalize_rows(q) : q;
      b.targets = o.through_normalization ? normalize_rows(t) : t;
      b.positive_index = positives;
      b.task_id = "task";
      LossConfig c = config;
      c.theta_per_task = {{"task", th}};
      return whnm_loss(b, c).loss;
    };

    const Matrix q0 = o.through_normalization ? raw_q : normalize_rows(raw_q);
    const Matrix t0 = o.through_normalization ? raw_t : normalize_rows(raw_t);
    ContrastiveBatch batch;
    batch.queries = o.through_normalization ? normalize_rows(q0) : q0;
    batch.targets = o.through_normalization ? normalize_rows(t0) : t0;
    batch.positive_index = positives;
    batch.task_id = "task";
    const LossOutput out = whnm_loss(batch, config);
    const Matrix gq = o.through_normalization ? normalize_rows_backward(q0, out.grad_queries) : out.grad_queries;
    const Matrix gt = o.through_normalization ? normalize_rows_backward(t0, out.grad_targets) : out.grad_targets;

    for (int side = 0; side < 2; ++side) {
      const Matrix& base = side == 0 ? q0 : t0;
      const Matrix& analytic = side == 0 ? gq : gt;
      for (Eigen::Index k = 0; k < base.size(); ++k) {
        Matrix plus = base, minus = base;
        plus.data()[k] += o.step;
        minus.data()[k] -= o.step;
        const double numeric = side == 0 ? (loss_at(plus, t0, theta) - loss_at(minus, t0, theta)) / (2 * o.step)
                                         : (loss_at(q0, plus, theta) - loss_at(q0, minus, theta)) / (2 * o.step);
        const double e = track.check(analytic.data()[k], numeric);
        double& slot = side == 0 ? report.max_rel_err_queries : report.max_rel_err_targets;
        slot = std::max(slot, e);
      }
    }
    const double numeric_theta = (loss_at(q0, t0, theta + o.step) - loss_at(q0, t0, theta - o.step)) / (2 * o.step);
    report.max_rel_err_theta = std::max(report.max_rel_err_theta, track.check(out.grad_theta, numeric_theta));
    ++report.trials;
  }
  return report;
}

GradCheckReport check_encoder_gradients(const EncoderGradCheckOptions& o) {
  Rng rng(derive_seed(o.seed, 0x656e63ULL));  // "enc"
  GradCheckReport report;
  Tracker track{o.tolerance, o.floor, report};

  for (std::size_t trial = 0; trial < o.trials; ++trial) {
    const auto n = static_cast<Eigen::Index>(2 + rng.below(5));
    const auto d_in = static_cast<Eigen::Index>(2 + rng.below(15));
    const auto d_out = static_cast<Eigen::Index>(2 + rng.below(8));
    const auto rank = static_cast<Eigen::Index>(1 + rng.below(3));
    EncoderParams params = EncoderParams::initialize(d_in, d_out, rng);
    for (Eigen::Index i = 0; i < params.b.size(); ++i) params.b(i) = 0.1 * rng.normal();
    params.adapter = LoraAdapter::initialize(d_in, d_out, rank, rng, 0.3, 0.5);
    for (Eigen::Index i = 0; i < params.adapter->B.size(); ++i) params.adapter->B.data()[i] = 0.3 * rng.normal();

    const Matrix xq = random_rows(rng, n, d_in);
    const Matrix xt = random_rows(rng, n, d_in);
    LossConfig config;
    config.alpha = rng.bernoulli(0.5) ? 9.0 : 1.0;
    config.theta_per_task = {{"task", -1.0 - rng.uniform()}};

    auto loss_of = [&](const EncoderParams& p) {
      ContrastiveBatch b;
      b.queries = encode_batch(xq, p).outputs;
      b.targets = encode_batch(xt, p).outputs;
      b.task_id = "task";
      return whnm_loss(b, config).loss;
    };

    const EncodedBatch eq = encode_batch(xq, params);
    const EncodedBatch et = encode_batch(xt, params);
    ContrastiveBatch batch;
    batch.queries = eq.outputs;
    batch.targets = et.outputs;
    batch.task_id = "task";
    const LossOutput out = whnm_loss(batch, config);
    EncoderGrads g = encode_backward(eq, params, out.grad_queries);
    g += encode_backward(et, params, out.grad_targets);

    auto sweep = [&](auto&& block_of, const auto& analytic) {
      EncoderParams probe = params;
      auto& block = block_of(probe);
      for (Eigen::Index k = 0; k < block.size(); ++k) {
        const double keep = block.data()[k];
        block.data()[k] = keep + o.step;
        const double up = loss_of(probe);
        block.data()[k] = keep - o.step;
        const double down = loss_of(probe);
        block.data()[k] = keep;
        track.check(analytic.data()[k], (up - down) / (2 * o.step));
      }
    };
    sweep([](EncoderParams& p) -> Matrix& { return p.W; }, g.W);
    sweep([](EncoderParams& p) -> Vector& { return p.b; }, g.b);
    sweep([](EncoderParams& p) -> Matrix& { return p.adapter->A; }, g.A);
    sweep([](EncoderParams& p) -> Matrix& { return p.adapter->B; }, g.B);
    ++report.trials;
  }
  return report;
}

}  // namespace cembed
