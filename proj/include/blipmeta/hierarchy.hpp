#ifndef BLIPMETA_HIERARCHY_HPP_
#define BLIPMETA_HIERARCHY_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blipmeta/posterior.hpp"
#include "blipmeta/random.hpp"

namespace blipmeta {

enum class MeanPriorKind { flat, normal, truncated_normal, horseshoe };

/// Prior on one common mean. `sign` is +1 (positive) or -1 (negative) for
/// truncated normals.
struct MeanPrior {
  MeanPriorKind kind = MeanPriorKind::normal;
  double variance = 1e4;
  int sign = 1;

  static MeanPrior flat() { return {MeanPriorKind::flat, 0.0, 1}; }
  static MeanPrior normal(double variance) { return {MeanPriorKind::normal, variance, 1}; }
  static MeanPrior truncated(double variance, int sign) {
    return {MeanPriorKind::truncated_normal, variance, sign};
  }
  static MeanPrior horseshoe() { return {MeanPriorKind::horseshoe, 0.0, 1}; }
};

/// Between-site sd: half-Cauchy(0, scale), or held fixed (0 pins every site
/// effect to the common mean).
struct SpreadPrior {
  double scale = 1.0;
  std::optional<double> fixed;
};

/// One site's contribution: estimate ~ N(map * theta_site, r * covariance),
/// where theta_site holds the site effects of the `touched` global parameters
/// and r is 1 (known sampling variance) or the site residual variance.
struct SiteBlock {
  std::string site_id;
  std::vector<int> touched;
  Eigen::MatrixXd map;
  Eigen::VectorXd estimate;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd precision;  // covariance^-1
  /// Residual variance sampled (individual-level model); needs sse and n_obs.
  bool residual_variance = false;
  double sse = 0.0;
  int n_obs = 0;
};

/// Builds precision from covariance and checks shapes; throws
/// Error(not_positive_definite) on a singular covariance.
SiteBlock make_site_block(std::string site_id, std::vector<int> touched, Eigen::MatrixXd map,
                          Eigen::VectorXd estimate, Eigen::MatrixXd covariance);

struct HierarchicalModel {
  std::vector<std::string> names;
  std::vector<MeanPrior> mean_priors;
  std::vector<SpreadPrior> spread_priors;
  /// Half-Cauchy scale of residual sds when a block samples them.
  double residual_scale = 1.0;
  std::vector<SiteBlock> sites;

  int size() const { return static_cast<int>(names.size()); }
};

struct SamplerControl {
  int n_chains = 2;
  int n_warmup = 1000;
  int n_kept = 1000;
  std::uint64_t seed = 1;
  bool store_site_effects = true;
  /// Run chains on separate threads; results do not depend on this.
  bool parallel = true;
};

/// Gibbs sampler for the hierarchy
///   estimate_i ~ N(map_i theta_i, r_i V_i),  theta_it ~ N(mu_t, sigma_t^2),
///   mu_t ~ prior_t,  sigma_t ~ C+(0, s_t),  horseshoe mu_t ~ N(0, tau^2 lambda_t^2).
/// Output columns: common means (model names), "sd(name)", "tau",
/// "lambda(name)", "name@site" site effects, "sigma2@site".
PooledPosterior run_gibbs(const HierarchicalModel& model, const SamplerControl& control);

struct GaussianDraw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

struct InverseGammaParams {
  double shape = 0.0;
  double scale = 0.0;
};

/// Full conditional of a site's effects given common means and between-site
/// sds (touched order). Coordinates with sd 0 are pinned and get zero variance.
GaussianDraw site_effect_conditional(const SiteBlock& block, double residual_variance,
                                     const Eigen::VectorXd& common, const Eigen::VectorXd& sd);

/// Full conditional of the common means given site effects and their sds,
/// ignoring sign constraints. `prior_precision` is 0 for flat priors.
GaussianDraw common_mean_conditional(const std::vector<Eigen::VectorXd>& site_effects,
                                     const Eigen::VectorXd& sd,
                                     const Eigen::VectorXd& prior_precision);

/// Common means with site effects integrated out.
GaussianDraw collapsed_mean_conditional(const HierarchicalModel& model,
                                        const Eigen::VectorXd& sd,
                                        const Eigen::VectorXd& residual_variance,
                                        const Eigen::VectorXd& prior_precision);

/// sigma^2 | effects, nu for sigma ~ C+(0, s): IG(1/2 + m/2, 1/nu + ss/2).
InverseGammaParams spread_conditional(double sum_squares, int count, double nu);
/// nu | sigma^2: IG(1, 1/s^2 + 1/sigma^2).
InverseGammaParams spread_auxiliary_conditional(double sigma2, double scale);
/// lambda_t^2 | psi_t, tau^2, nu_t: IG(1, 1/nu_t + psi_t^2 / (2 tau^2)).
InverseGammaParams local_shrinkage_conditional(double psi, double tau2, double nu);
/// tau^2 | psi, lambda, xi: IG((m + 1)/2, 1/xi + sum psi^2 / (2 lambda^2)).
InverseGammaParams global_shrinkage_conditional(double weighted_sum_squares, int count,
                                                double xi);
/// residual sigma_i^2 | theta_i, nu: IG(1/2 + n/2, 1/nu + sse/2).
InverseGammaParams residual_conditional(double sse, int n_obs, double nu);

}  // namespace blipmeta

#endif  // BLIPMETA_HIERARCHY_HPP_
