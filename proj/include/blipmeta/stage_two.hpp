#ifndef BLIPMETA_STAGE_TWO_HPP_
#define BLIPMETA_STAGE_TWO_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blipmeta/federation.hpp"
#include "blipmeta/hierarchy.hpp"
#include "blipmeta/posterior.hpp"

namespace blipmeta {

/// Coordinator-side priors. Defaults: normal(0, 10000) means and
/// half-Cauchy(0, 1) between-site sds.
struct PriorConfig {
  double mean_variance = 1e4;
  double variance_prior_scale = 1.0;
  /// Horseshoe on every treatment-covariate interaction; main effects keep
  /// normal(0, mean_variance).
  bool horseshoe_interactions = false;
  /// Per-label overrides, e.g. a truncated prior on "a2".
  std::map<std::string, MeanPrior> overrides;
  /// Hold every between-site sd at this value instead of sampling it.
  std::optional<double> fixed_between_sd;

  std::vector<MeanPrior> mean_priors(const std::vector<std::string>& psi_labels) const;
  std::vector<SpreadPrior> spread_priors(std::size_t count) const;
};

/// A psi label without an interaction (":") is a main effect ("a", "a2").
bool is_main_effect_label(const std::string& label);

/// Reparametrized normal likelihood over the common psi.
struct LikelihoodGraph {
  std::vector<std::string> psi_labels;
  std::vector<SiteBlock> sites;
  /// psi indices with no likelihood node; their posteriors are their priors.
  std::vector<int> prior_only;
};

/// One node per transmitted entry; site effects only for psi with a nonzero
/// map weight at that site. Summaries are ordered by site id. Throws
/// Error(degenerate_sd) for sd <= 0 and Error(protocol_error) for duplicate
/// sites or disagreeing psi labels.
LikelihoodGraph assemble_likelihood(std::vector<SiteSummary> summaries);
/// Prior-only graph (no sites).
LikelihoodGraph empty_likelihood(std::vector<std::string> psi_labels);

PooledPosterior run_mcmc(const LikelihoodGraph& graph, const PriorConfig& priors,
                         const SamplerControl& control);

/// Interactions whose equal-tailed `level` credible interval excludes zero.
/// Main effects are never candidates.
std::vector<int> select_interactions(const PooledPosterior& posterior, double level = 0.95);

/// Point estimates of the common psi: posterior means (or medians), with
/// interactions outside `selected` set to zero when `selected` is given.
std::vector<double> point_estimates(const PooledPosterior& posterior, bool use_median,
                                    const std::optional<std::vector<int>>& selected = {});

/// Summary document: mean, sd, median, 2.5%, 97.5%, R-hat, ESS per common
/// parameter and variance component, plus selected interactions.
std::string posterior_summary_json(const PooledPosterior& posterior,
                                   const std::vector<int>& selected);
/// Draws as CSV (header of parameter names, one row per kept draw).
std::string posterior_draws_csv(const PooledPosterior& posterior);

/// Largest rank-normalized split-R-hat over every stored parameter.
double max_rhat(const PooledPosterior& posterior);

}  // namespace blipmeta

#endif  // BLIPMETA_STAGE_TWO_HPP_
