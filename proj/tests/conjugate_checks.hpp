#ifndef BLIPMETA_TESTS_CONJUGATE_CHECKS_HPP_
#define BLIPMETA_TESTS_CONJUGATE_CHECKS_HPP_

// Moment tests of each full conditional against quadrature or
// covariance-form Gaussian algebra. Each returns the largest |z| over the
// tested moments.

#include <string>
#include <utility>
#include <vector>

#include "blipmeta/hierarchy.hpp"
#include "blipmeta/random.hpp"
#include "oracles.hpp"

namespace checks {

using namespace blipmeta;

struct Check {
  std::string name;
  double z = 0.0;
};

// Draws x ~ IG(params) and compares the mean of 1/x, which has finite
// variance for any shape, with the quadrature mean under `log_density`.
inline double inverse_gamma_z(const InverseGammaParams& params,
                              const std::function<double(double)>& log_density, int draws,
                              Rng& rng) {
  const auto reference = oracle::positive_quadrature(
      [&](double y) { return log_density(1.0 / y) - 2.0 * std::log(y); });
  const auto sample = oracle::sample(draws, [&] { return 1.0 / rng.inverse_gamma(params.shape, params.scale); });
  return std::abs(oracle::mean_z(sample, reference));
}

inline std::vector<Check> scale_conditionals(int draws, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::test), 1}));
  std::vector<Check> out;
  {
    const double ss = 3.7, nu = 0.8;
    const int m = 6;
    out.push_back({"sigma2 | effects, nu",
                   inverse_gamma_z(spread_conditional(ss, m, nu),
                                   [&](double x) {
                                     return -0.5 * m * std::log(x) - ss / (2 * x) - 1.5 * std::log(x) -
                                            1.0 / (nu * x);
                                   },
                                   draws, rng)});
  }
  {
    const double sigma2 = 0.4, s = 2.0;
    out.push_back({"nu | sigma2",
                   inverse_gamma_z(spread_auxiliary_conditional(sigma2, s),
                                   [&](double x) {
                                     // nu ~ IG(1/2, 1/s^2) times sigma2 | nu ~ IG(1/2, 1/nu).
                                     return -1.5 * std::log(x) - 1.0 / (s * s * x) - 0.5 * std::log(x) -
                                            1.0 / (x * sigma2);
                                   },
                                   draws, rng)});
  }
  {
    const double psi = 0.3, tau2 = 0.05, nu = 1.7;
    out.push_back({"lambda2 | psi, tau2, nu",
                   inverse_gamma_z(local_shrinkage_conditional(psi, tau2, nu),
                                   [&](double x) {
                                     return -1.5 * std::log(x) - 1.0 / (nu * x) - 0.5 * std::log(x) -
                                            psi * psi / (2 * tau2 * x);
                                   },
                                   draws, rng)});
  }
  {
    const std::vector<double> psi{0.2, -1.1, 0.05, 0.7};
    const std::vector<double> lambda2{0.5, 3.0, 0.1, 1.2};
    const double xi = 0.6;
    double wss = 0.0;
    for (std::size_t t = 0; t < psi.size(); ++t) wss += psi[t] * psi[t] / lambda2[t];
    const int m = static_cast<int>(psi.size());
    out.push_back({"tau2 | psi, lambda, xi",
                   inverse_gamma_z(global_shrinkage_conditional(wss, m, xi),
                                   [&](double x) {
                                     return -1.5 * std::log(x) - 1.0 / (xi * x) - 0.5 * m * std::log(x) -
                                            wss / (2 * x);
                                   },
                                   draws, rng)});
  }
  {
    const double sse = 52.0, nu = 0.3;
    const int n = 180;
    out.push_back({"residual sigma2 | sse, nu",
                   inverse_gamma_z(residual_conditional(sse, n, nu),
                                   [&](double x) {
                                     return -0.5 * n * std::log(x) - sse / (2 * x) - 1.5 * std::log(x) -
                                            1.0 / (nu * x);
                                   },
                                   draws, rng)});
  }
  return out;
}

// Largest |z| of coordinate means and relative sd error of draws from
// `conditional` against the oracle moments.
inline std::pair<double, double> gaussian_moment_check(const GaussianDraw& conditional,
                                                       const Eigen::VectorXd& mean,
                                                       const Eigen::MatrixXd& cov, int draws,
                                                       Rng& rng) {
  const auto m = mean.size();
  Eigen::LLT<Eigen::MatrixXd> precision(conditional.covariance.inverse());
  const Eigen::VectorXd rhs = conditional.covariance.inverse() * conditional.mean;
  Eigen::MatrixXd x(draws, m);
  for (int r = 0; r < draws; ++r) x.row(r) = rng.gaussian_from_precision(precision, rhs).transpose();
  double worst_z = 0.0, worst_sd = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    std::vector<double> col(x.col(k).data(), x.col(k).data() + draws);
    const double sd = std::sqrt(cov(k, k));
    worst_z = std::max(worst_z, std::abs(oracle::mean_z(col, {mean[k], sd})));
    worst_sd = std::max(worst_sd, std::abs(oracle::sample_sd(col) / sd - 1.0));
  }
  return {worst_z, worst_sd};
}

// Example site with a folded map row: estimates of (theta0 + theta1, theta1).
inline SiteBlock example_block() {
  Eigen::MatrixXd map(2, 2);
  map << 1, 1, 0, 1;
  Eigen::MatrixXd cov(2, 2);
  cov << 0.09, 0.02, 0.02, 0.04;
  return make_site_block("s", {0, 1}, map, Eigen::Vector2d(1.3, -0.4), cov);
}

inline std::vector<Check> gaussian_conditionals(int draws, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::test), 2}));
  std::vector<Check> out;
  {
    const auto block = example_block();
    const Eigen::Vector2d mu(0.8, -0.1);
    const Eigen::Vector2d sd(0.5, 0.3);
    const double r = 1.4;
    const auto cond = site_effect_conditional(block, r, mu, sd);
    // Covariance form: theta | xi with prior N(mu, D), xi = A theta + e.
    const Eigen::MatrixXd d = sd.array().square().matrix().asDiagonal();
    const Eigen::MatrixXd s = block.map * d * block.map.transpose() + r * block.covariance;
    const Eigen::MatrixXd gain = d * block.map.transpose() * s.inverse();
    const Eigen::VectorXd mean = mu + gain * (block.estimate - block.map * mu);
    const Eigen::MatrixXd cov = d - gain * block.map * d;
    const auto [z, sd_err] = gaussian_moment_check(cond, mean, cov, draws, rng);
    out.push_back({"site effects | common, sd (mean)", z});
    out.push_back({"site effects | common, sd (sd error x100)", 100.0 * sd_err});
  }
  {
    std::vector<Eigen::VectorXd> effects{Eigen::Vector2d(1.0, 0.2), Eigen::Vector2d(1.4, -0.3),
                                         Eigen::Vector2d(0.7, NAN)};
    const Eigen::Vector2d sd(0.6, 0.4);
    const Eigen::Vector2d prior(1e-2, 0.5);
    const auto cond = common_mean_conditional(effects, sd, prior);
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    // Conjugate normal update written as a weighted average.
    const double w0 = 3 / 0.36, w1 = 2 / 0.16;
    mean << (w0 * 3.1 / 3) / (w0 + prior[0]), (w1 * -0.05) / (w1 + prior[1]);
    cov(0, 0) = 1 / (w0 + prior[0]);
    cov(1, 1) = 1 / (w1 + prior[1]);
    const auto [z, sd_err] = gaussian_moment_check(cond, mean, cov, draws, rng);
    out.push_back({"common means | effects, sd (mean)", z});
    out.push_back({"common means | effects, sd (sd error x100)", 100.0 * sd_err});
  }
  {
    HierarchicalModel model;
    model.names = {"a", "a:x"};
    model.mean_priors = {MeanPrior::normal(4.0), MeanPrior::normal(2.0)};
    model.spread_priors = {SpreadPrior{}, SpreadPrior{}};
    model.sites.push_back(example_block());
    Eigen::MatrixXd one(1, 1);
    one << 1.0;
    model.sites.push_back(make_site_block("t", {0}, one, Eigen::VectorXd::Constant(1, 0.9),
                                          Eigen::MatrixXd::Constant(1, 1, 0.25)));
    const Eigen::Vector2d sd(0.4, 0.2);
    const Eigen::Vector2d resid(1.0, 1.0);
    const Eigen::Vector2d prior(0.25, 0.5);
    const auto cond = collapsed_mean_conditional(model, sd, resid, prior);
    // Stack both sites into y = H mu + e with marginal covariance C.
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(3, 2);
    h.topRows(2) = model.sites[0].map;
    h(2, 0) = 1.0;
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(3, 3);
    const Eigen::MatrixXd d = sd.array().square().matrix().asDiagonal();
    c.topLeftCorner(2, 2) = model.sites[0].covariance + model.sites[0].map * d * model.sites[0].map.transpose();
    c(2, 2) = 0.25 + d(0, 0);
    Eigen::Vector3d y;
    y << model.sites[0].estimate, 0.9;
    const Eigen::MatrixXd p0 = prior.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd gain = p0 * h.transpose() * (h * p0 * h.transpose() + c).inverse();
    const Eigen::VectorXd mean = gain * y;
    const Eigen::MatrixXd cov = p0 - gain * h * p0;
    const auto [z, sd_err] = gaussian_moment_check(cond, mean, cov, draws, rng);
    out.push_back({"common means, effects integrated (mean)", z});
    out.push_back({"common means, effects integrated (sd error x100)", 100.0 * sd_err});
  }
  return out;
}

}  // namespace checks

#endif  // BLIPMETA_TESTS_CONJUGATE_CHECKS_HPP_
