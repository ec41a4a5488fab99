#include <doctest.h>

#include <cmath>
#include <limits>

#include "cembed/core_math.hpp"
#include "cembed/error.hpp"
#include "cembed/rng.hpp"

using namespace cembed;

TEST_CASE("l2_normalize") {
  Vector v(2);
  v << 3.0, 4.0;
  const Vector u = l2_normalize(v);
  CHECK(u(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u(1) == doctest::Approx(0.8).epsilon(1e-15));

  Vector z = Vector::Zero(3);
  CHECK_THROWS_AS(l2_normalize(z), Error);
  try {
    l2_normalize(z);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kZeroVector);
  }

  // Works on float too.
  Eigen::Matrix<float, Eigen::Dynamic, 1> f(2);
  f << 0.0f, 2.0f;
  CHECK(l2_normalize(f)(1) == 1.0f);
}

TEST_CASE("normalized rows are unit norm") {
  Rng rng(7);
  Matrix m(20, 9);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * 10.0;
  const Matrix n = normalize_rows(m);
  for (Eigen::Index i = 0; i < n.rows(); ++i) CHECK(std::abs(n.row(i).norm() - 1.0) < 1e-12);
}

TEST_CASE("normalize_rows_backward matches finite differences") {
  Rng rng(11);
  Matrix x(3, 5), g(3, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = rng.normal();
    g.data()[i] = rng.normal();
  }
  // f(x) = sum(g .* normalize_rows(x))
  auto f = [&](const Matrix& m) { return (normalize_rows(m).array() * g.array()).sum(); };
  const Matrix analytic = normalize_rows_backward(x, g);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      CHECK(analytic(i, j) == doctest::Approx((f(xp) - f(xm)) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("similarity_matrix") {
  Matrix q(2, 2), k(3, 2);
  q << 1, 0, 0, 1;
  k << 1, 0, 0, 1, 0.6, 0.8;
  const Matrix s = similarity_matrix(q, k);
  CHECK(s.rows() == 2);
  CHECK(s.cols() == 3);
  CHECK(s(0, 0) == 1.0);
  CHECK(s(1, 0) == 0.0);
  CHECK(s(1, 2) == doctest::Approx(0.8));

  Matrix bad(3, 4);
  bad.setOnes();
  CHECK_THROWS_AS(similarity_matrix(q, bad), Error);
}

TEST_CASE("logsumexp") {
  Vector v(3);
  v << 1000.0, 1000.0, 1000.0;
  CHECK(logsumexp(v) == doctest::Approx(1000.0 + std::log(3.0)).epsilon(1e-15));

  Vector w(2);
  w << -1000.0, 0.0;
  CHECK(logsumexp(w) == doctest::Approx(0.0));

  Vector inf(2);
  inf << -std::numeric_limits<double>::infinity(), 2.0;
  CHECK(logsumexp(inf) == 2.0);

  Vector empty(0);
  CHECK_THROWS_AS(logsumexp(empty), Error);

  // Agrees with the direct formula where that is safe.
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    Vector x(7);
    double direct = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x(i) = rng.normal() * 5.0;
      direct += std::exp(x(i));
    }
    CHECK(std::abs(logsumexp(x) - std::log(direct)) < 1e-12);
  }
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42), b(42), c(derive_seed(42, 1));
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  Rng d(42);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ |= d.next() != c.next();
  CHECK(differ);
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 2, 4));

  Rng r(5);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.below(7);
    CHECK(k < 7);
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
