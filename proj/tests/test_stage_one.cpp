#include "blipmeta/error.hpp"
#include "blipmeta/random.hpp"
#include "blipmeta/stage_one.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace blipmeta;

TEST_CASE("OLS matches the SVD oracle") {
  Rng rng(derive_seed(11, {static_cast<std::uint64_t>(StreamPurpose::test)}));
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + static_cast<int>(rng.uniform() * 10);
    const int n = k + 2 + static_cast<int>(rng.uniform() * (100 - k - 2));
    Eigen::MatrixXd x(n, k);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < k; ++c) x(r, c) = rng.normal();
    Eigen::VectorXd y(n);
    for (int r = 0; r < n; ++r) y[r] = rng.normal(0.0, 3.0);
    const auto fit = fit_ols(x, y);
    const auto ref = oracle::svd_ols(x, y);
    for (int c = 0; c < k; ++c) {
      CHECK(std::abs(fit.coefficients[c] - ref.coefficients[c]) <=
            1e-10 * std::max(1.0, std::abs(ref.coefficients[c])));
      CHECK(std::abs(fit.coefficient_sds[c] - ref.sds[c]) <= 1e-10 * ref.sds[c]);
    }
    CHECK(fit.dof == n - k);
  }
}

TEST_CASE("rank detection agrees with singular values and records dependencies") {
  Rng rng(derive_seed(12, {static_cast<std::uint64_t>(StreamPurpose::test)}));
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 8 + static_cast<int>(rng.uniform() * 20);
    const int k = 2 + static_cast<int>(rng.uniform() * 7);
    Eigen::MatrixXd x(n, k);
    for (int c = 0; c < k; ++c) {
      const double u = rng.uniform();
      if (c > 0 && u < 0.3) {
        // Exact combination of two earlier columns.
        const int i = static_cast<int>(rng.uniform() * c);
        const int j = static_cast<int>(rng.uniform() * c);
        x.col(c) = 2.0 * x.col(i) - 0.5 * x.col(j);
      } else if (u < 0.4) {
        x.col(c).setZero();
      } else {
        for (int r = 0; r < n; ++r) x(r, c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
      }
    }
    if (x.isZero(0.0)) continue;
    const auto est = detect_estimable(x);
    CHECK(static_cast<int>(est.retained.size()) == oracle::svd_rank(x));
    CHECK(est.retained.size() + est.dropped.size() == static_cast<std::size_t>(k));
    Eigen::MatrixXd kept(n, static_cast<Eigen::Index>(est.retained.size()));
    for (std::size_t c = 0; c < est.retained.size(); ++c) kept.col(static_cast<Eigen::Index>(c)) = x.col(est.retained[c]);
    for (std::size_t d = 0; d < est.dropped.size(); ++d) {
      const Eigen::VectorXd rebuilt = kept * est.dependencies.row(static_cast<Eigen::Index>(d)).transpose();
      CHECK((rebuilt - x.col(est.dropped[d])).norm() <= 1e-8 * std::max(1.0, x.col(est.dropped[d]).norm()));
    }
  }
}

TEST_CASE("the later of two collinear indicator columns is dropped") {
  Eigen::MatrixXd x(4, 3);
  x << 1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0, 1;
  const auto est = detect_estimable(x);
  CHECK(est.retained == std::vector<int>{0, 1});
  CHECK(est.dropped == std::vector<int>{2});
  CHECK(est.dependencies(0, 0) == doctest::Approx(1.0));
  CHECK(est.dependencies(0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("degenerate and saturated sites fail with their codes") {
  try {
    detect_estimable(Eigen::MatrixXd::Zero(5, 2));
    FAIL("expected degenerate_site");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_site);
  }
  try {
    fit_ols(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(3));
    FAIL("expected saturated_fit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::saturated_fit);
  }
}
