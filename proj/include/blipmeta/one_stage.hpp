#ifndef BLIPMETA_ONE_STAGE_HPP_
#define BLIPMETA_ONE_STAGE_HPP_

#include <optional>
#include <vector>

#include "blipmeta/hierarchy.hpp"
#include "blipmeta/model.hpp"
#include "blipmeta/posterior.hpp"
#include "blipmeta/stage_two.hpp"

namespace blipmeta {

/// Individual-level hierarchical regression over all sites: site-specific
/// beta_i, psi_i and residual variances, with common means for both blocks.
struct OneStageModel {
  ModelSpec spec;
  std::vector<SiteDataset> datasets;
  /// Mean and between-site priors; beta means use normal(0, mean_variance).
  PriorConfig priors;
  /// Half-Cauchy scale of each site's residual sd.
  double residual_scale = 1.0;
  /// Hold every residual variance at this value instead of sampling it.
  std::optional<double> fixed_residual_variance;
};

/// The sampler's hierarchical model: parameters are the treatment-free terms
/// ("beta:<term>") followed by the psi labels. Rank-deficient site designs
/// enter through the same dropped-column algebra as stage one.
HierarchicalModel build_one_stage_model(const OneStageModel& model);

/// Posterior whose psi accessors address the blip block; beta and residual
/// columns are also stored.
PooledPosterior run_onestage(const OneStageModel& model, const SamplerControl& control);

}  // namespace blipmeta

#endif  // BLIPMETA_ONE_STAGE_HPP_
