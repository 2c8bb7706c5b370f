#ifndef BLIPMETA_POSTERIOR_HPP_
#define BLIPMETA_POSTERIOR_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace blipmeta {

struct ChainInfo {
  int n_chains = 0;
  int n_warmup = 0;
  int n_kept = 0;
  std::uint64_t seed = 0;
};

/// Kept MCMC draws, chain-major: rows [c * n_kept, (c + 1) * n_kept) belong to
/// chain c.
class PooledPosterior {
 public:
  std::vector<std::string> names;
  Eigen::MatrixXd draws;
  ChainInfo info;
  /// Columns of `draws` holding the common blip means, in psi order.
  std::vector<int> psi_columns;
  std::vector<std::string> psi_labels;
  /// Per-draw conditional mean and variance of each common psi given the
  /// variance components (NaN where the coordinate was drawn under a sign
  /// constraint). Averaging these gives Rao-Blackwellized estimates.
  Eigen::MatrixXd rb_mean;
  Eigen::MatrixXd rb_variance;
  /// Diagnostics: Metropolis acceptance rates of the spread moves.
  std::vector<double> acceptance;

  int draw_count() const { return static_cast<int>(draws.rows()); }
  /// Column index of `name`; throws Error(invalid_argument) when absent.
  int column(const std::string& name) const;
  bool has(const std::string& name) const;

  double mean(int col) const;
  double sd(int col) const;
  /// Type-7 sample quantile.
  double quantile(int col, double p) const;
  double median(int col) const { return quantile(col, 0.5); }
  /// Split-R-hat over the chains.
  double rhat(int col) const;
  /// Rank-normalized split-R-hat: the larger of the bulk (ranks) and tail
  /// (folded ranks) versions; robust to heavy tails.
  double rank_rhat(int col) const;
  /// Effective sample size (Geyer initial monotone sequence, pooled chains).
  double ess(int col) const;
  double mcse(int col) const;

  /// Rao-Blackwellized mean and sd of common psi `t`; falls back to the
  /// plain draw moments when conditional moments are unavailable.
  double psi_mean(int t) const;
  double psi_sd(int t) const;
  /// Monte Carlo standard error of psi_mean(t).
  double psi_mcse(int t) const;

  Eigen::VectorXd chain_column(int col, int chain) const;
};

/// Split-R-hat of equal-length chains.
double split_rhat(const std::vector<Eigen::VectorXd>& chains);
/// Rank-normalized split-R-hat of equal-length chains.
double rank_normalized_rhat(const std::vector<Eigen::VectorXd>& chains);
/// ESS of equal-length chains from the combined autocorrelation estimate.
double effective_sample_size(const std::vector<Eigen::VectorXd>& chains);

}  // namespace blipmeta

#endif  // BLIPMETA_POSTERIOR_HPP_
