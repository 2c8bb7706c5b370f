#ifndef BLIPMETA_STAGE_ONE_HPP_
#define BLIPMETA_STAGE_ONE_HPP_

#include <Eigen/Dense>
#include <vector>

#include "blipmeta/federation.hpp"
#include "blipmeta/model.hpp"
#include "blipmeta/sparsity_map.hpp"

namespace blipmeta {

inline constexpr double kRankTolerance = 1e-8;

/// Columns of a design split into a maximal independent set (scanned in
/// canonical order) and the columns lying in the span of earlier ones.
struct EstimableSet {
  std::vector<int> retained;
  std::vector<int> dropped;
  /// dependencies(j, k): weight of retained[k] in the exact expression of
  /// dropped[j] as a combination of retained columns.
  Eigen::MatrixXd dependencies;
};

/// A column is dropped when its residual after projection onto the retained
/// columns has norm <= tolerance * (its own norm); zero columns always drop.
/// Throws Error(degenerate_site) when nothing survives.
EstimableSet detect_estimable(const Eigen::MatrixXd& design,
                              double tolerance = kRankTolerance);

struct SiteFit {
  std::vector<int> estimable_columns;
  Eigen::VectorXd coefficients;
  double residual_variance = 0.0;
  Eigen::VectorXd coefficient_sds;
  int n_obs = 0;
  int dof = 0;
  double sse = 0.0;
  Eigen::MatrixXd xtx;          // X'X over the retained columns
  Eigen::MatrixXd xtx_inverse;
};

/// OLS on a full-rank design. residual_variance = SSE / (n - k).
/// Throws Error(saturated_fit) when n - k < 1.
SiteFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& outcome,
                std::vector<int> columns = {});

/// Keeps only blip-block coefficients, each paired with its sd and map row.
SiteSummary summarize_site(const ModelSpec& spec, const std::string& site_id,
                           const DesignMatrix& design, const SiteFit& fit,
                           const ReparamMap& map);

/// Everything stage one computes for a site, in pipeline order.
struct SiteAnalysis {
  DesignMatrix design;
  EstimableSet estimable;
  SiteFit fit;
  ReparamMap map;
  SiteSummary summary;
};

SiteAnalysis analyze_site(const ModelSpec& spec, const SiteDataset& data,
                          double tolerance = kRankTolerance);

}  // namespace blipmeta

#endif  // BLIPMETA_STAGE_ONE_HPP_
