#ifndef BLIPMETA_SIMGEN_HPP_
#define BLIPMETA_SIMGEN_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "blipmeta/model.hpp"
#include "blipmeta/random.hpp"

namespace blipmeta {

enum class Setting { binary, continuous, sparse, many_covariates };
enum class Heterogeneity { common_effect, common_rule, varying_effects };

std::string_view to_string(Setting setting);
std::string_view to_string(Heterogeneity heterogeneity);
Setting parse_setting(std::string_view text);
Heterogeneity parse_heterogeneity(std::string_view text);

/// A complete data-generating configuration.
struct Scenario {
  std::string name = "scenario";
  Setting setting = Setting::binary;
  int sites = 10;
  int n_mean = 200;
  /// Propensity scenario 1-6 (binary and continuous-free settings only).
  int confounding = 1;
  Heterogeneity heterogeneity = Heterogeneity::common_effect;
  double i2 = 0.0;
  double sigma_eps2 = 0.25;
  /// Number of candidate tailoring covariates in the many-covariates setting.
  int covariates = 10;
  /// True common parameters in model order; empty means the defaults.
  std::vector<double> beta;
  std::vector<double> psi;
  double dose_lo = -100.0;
  double dose_hi = 100.0;
  std::uint64_t seed = 1;
};

/// sigma_B^2 = I^2 sigma_eps^2 / (1 - I^2). Throws
/// Error(heterogeneity_out_of_range) unless 0 <= I^2 < 1.
double heterogeneity_variance(double i2, double sigma_eps2);

/// Analysis model of a setting. Columns: x1, x2 (binary, continuous);
/// x1, x22, x23 (sparse); x1..xp (many covariates).
ModelSpec scenario_model(const Scenario& scenario);
std::vector<std::string> covariate_names(const Scenario& scenario);

struct TrueParameters {
  Eigen::VectorXd beta;  // treatment-free terms, model order
  Eigen::VectorXd psi;   // global psi order
};

/// The scenario's common parameters (defaults per setting when unset).
TrueParameters true_parameters(const Scenario& scenario);

struct Propensity {
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
};

/// Site-level propensity coefficients; uniform draws for scenarios 3-6 are
/// made once per call from `rng`.
Propensity resolve_propensity(int confounding, int site_id, Rng& rng);

/// n x p covariates for site `site_id` (1-based) under the setting's laws.
Eigen::MatrixXd gen_covariates(const Scenario& scenario, int site_id, int n, Rng& rng);

/// Binary settings: Bernoulli(logistic(alpha' (1, x1, x2))) or 0.5;
/// continuous: Normal(x1, 1).
Eigen::VectorXd gen_treatment(const Scenario& scenario, const Propensity& propensity,
                              const Eigen::MatrixXd& x, Rng& rng);
double propensity_probability(const Propensity& propensity, double x1, double x2);

TrueParameters gen_site_parameters(const Scenario& scenario, const TrueParameters& truth,
                                   double sigma_b2, Rng& rng);

/// Noiseless conditional mean E(Y | x, a) for each row.
Eigen::VectorXd outcome_mean(const Scenario& scenario, const TrueParameters& theta,
                             const Eigen::MatrixXd& x, const Eigen::VectorXd& a);
Eigen::VectorXd gen_outcome(const Scenario& scenario, const TrueParameters& theta,
                            const Eigen::MatrixXd& x, const Eigen::VectorXd& a, Rng& rng);

/// Blip gamma(a, x) = a psi1'x + a^2 psi2'x for one covariate row.
double true_blip(const Scenario& scenario, const Eigen::VectorXd& psi,
                 const Eigen::Ref<const Eigen::RowVectorXd>& x, double a);

struct SimulatedStudy {
  std::vector<SiteDataset> sites;
  std::vector<TrueParameters> site_parameters;
  std::vector<Propensity> propensities;
  TrueParameters truth;
};

/// Deterministic in (scenario.seed, replicate); every draw comes from a
/// substream keyed by (replicate, site, purpose).
SimulatedStudy simulate_study(const Scenario& scenario, std::uint64_t replicate);

/// Patients drawn from the mixture of site covariate laws (site uniform).
Eigen::MatrixXd draw_cohort(const Scenario& scenario, int size, std::uint64_t seed);

}  // namespace blipmeta

#endif  // BLIPMETA_SIMGEN_HPP_
