#pragma once
// Naive reference implementations used as test oracles. Deliberately written
// without log-domain tricks or shared helpers from the library.
#include <cmath>
#include <optional>
#include <vector>

#include "cembed/core_math.hpp"
#include "cembed/rng.hpp"

namespace oracle {

using cembed::Matrix;

// Mean over queries of -log(e^{s+/tau} / (e^{s+/tau} + sum_kept w e^{s/tau})),
// identity positives, mask from target-target similarity.
inline double whnm(const Matrix& q, const Matrix& k, double tau, double alpha, std::optional<double> delta) {
  const long n = q.rows();
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    double pos = 0.0;
    for (long c = 0; c < q.cols(); ++c) pos += q(i, c) * k(i, c);
    double denom = std::exp(pos / tau);
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      if (delta) {
        double kk = 0.0;
        for (long c = 0; c < k.cols(); ++c) kk += k(j, c) * k(i, c);
        if (kk > *delta) continue;
      }
      double s = 0.0;
      for (long c = 0; c < q.cols(); ++c) s += q(i, c) * k(j, c);
      denom += std::exp(alpha * s) * std::exp(s / tau);
    }
    total += -std::log(std::exp(pos / tau) / denom);
  }
  return total / static_cast<double>(n);
}

inline Matrix random_unit_rows(cembed::Rng& rng, long n, long d) {
  Matrix m(n, d);
  for (long i = 0; i < n; ++i) {
    for (long c = 0; c < d; ++c) m(i, c) = rng.normal();
    m.row(i) /= m.row(i).norm();
  }
  return m;
}

}  // namespace oracle
