#include "blipmeta/stage_two.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "blipmeta/csv.hpp"
#include "blipmeta/error.hpp"
#include "json.hpp"

namespace blipmeta {

bool is_main_effect_label(const std::string& label) {
  return label.find(':') == std::string::npos;
}

std::vector<MeanPrior> PriorConfig::mean_priors(const std::vector<std::string>& psi_labels) const {
  std::vector<MeanPrior> priors;
  for (const auto& label : psi_labels) {
    auto it = overrides.find(label);
    if (it != overrides.end()) {
      priors.push_back(it->second);
    } else if (horseshoe_interactions && !is_main_effect_label(label)) {
      priors.push_back(MeanPrior::horseshoe());
    } else {
      priors.push_back(MeanPrior::normal(mean_variance));
    }
  }
  return priors;
}

std::vector<SpreadPrior> PriorConfig::spread_priors(std::size_t count) const {
  SpreadPrior spread;
  spread.scale = variance_prior_scale;
  spread.fixed = fixed_between_sd;
  return std::vector<SpreadPrior>(count, spread);
}

LikelihoodGraph empty_likelihood(std::vector<std::string> psi_labels) {
  LikelihoodGraph graph;
  graph.psi_labels = std::move(psi_labels);
  for (int t = 0; t < static_cast<int>(graph.psi_labels.size()); ++t) graph.prior_only.push_back(t);
  return graph;
}

LikelihoodGraph assemble_likelihood(std::vector<SiteSummary> summaries) {
  if (summaries.empty()) {
    throw Error(ErrorCode::invalid_argument, "no site summaries to pool");
  }
  std::sort(summaries.begin(), summaries.end(),
            [](const SiteSummary& a, const SiteSummary& b) { return a.site_id < b.site_id; });
  LikelihoodGraph graph;
  graph.psi_labels = summaries.front().psi_labels;
  const int psi_count = static_cast<int>(graph.psi_labels.size());
  std::set<std::string> seen;
  for (const auto& raw : summaries) {
    const SiteSummary summary = canonicalize(raw);
    if (!seen.insert(summary.site_id).second) {
      throw Error(ErrorCode::protocol_error, "duplicate site '" + summary.site_id + "'");
    }
    if (summary.psi_labels != graph.psi_labels) {
      throw Error(ErrorCode::protocol_error,
                  "site '" + summary.site_id + "' uses a different psi layout");
    }
    std::set<int> touched_set;
    for (const auto& entry : summary.entries) {
      if (!(entry.sd > 0.0) || !std::isfinite(entry.sd)) {
        throw Error(ErrorCode::degenerate_sd,
                    "site '" + summary.site_id + "' entry '" + entry.label + "' has sd " +
                        format_double(entry.sd));
      }
      for (const auto& w : entry.map_row) {
        if (w.psi_index < 0 || w.psi_index >= psi_count) {
          throw Error(ErrorCode::protocol_error, "map row references an unknown psi index");
        }
        if (w.weight != 0.0) touched_set.insert(w.psi_index);
      }
    }
    std::vector<int> touched(touched_set.begin(), touched_set.end());
    const auto rows = static_cast<Eigen::Index>(summary.entries.size());
    Eigen::MatrixXd map = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(touched.size()));
    Eigen::VectorXd estimate(rows);
    Eigen::VectorXd variance(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& entry = summary.entries[static_cast<std::size_t>(r)];
      estimate[r] = entry.estimate;
      variance[r] = entry.sd * entry.sd;
      for (const auto& w : entry.map_row) {
        const auto col = std::lower_bound(touched.begin(), touched.end(), w.psi_index) - touched.begin();
        if (w.weight != 0.0) map(r, col) += w.weight;
      }
    }
    graph.sites.push_back(make_site_block(summary.site_id, std::move(touched), std::move(map),
                                          std::move(estimate), variance.asDiagonal()));
  }
  std::set<int> covered;
  for (const auto& block : graph.sites) covered.insert(block.touched.begin(), block.touched.end());
  for (int t = 0; t < psi_count; ++t) {
    if (!covered.count(t)) graph.prior_only.push_back(t);
  }
  return graph;
}

PooledPosterior run_mcmc(const LikelihoodGraph& graph, const PriorConfig& priors,
                         const SamplerControl& control) {
  HierarchicalModel model;
  model.names = graph.psi_labels;
  model.mean_priors = priors.mean_priors(graph.psi_labels);
  model.spread_priors = priors.spread_priors(graph.psi_labels.size());
  model.sites = graph.sites;
  return run_gibbs(model, control);
}

std::vector<int> select_interactions(const PooledPosterior& posterior, double level) {
  const double tail = 0.5 * (1.0 - level);
  std::vector<int> selected;
  for (std::size_t t = 0; t < posterior.psi_columns.size(); ++t) {
    if (is_main_effect_label(posterior.psi_labels[t])) continue;
    const int col = posterior.psi_columns[t];
    const double lo = posterior.quantile(col, tail);
    const double hi = posterior.quantile(col, 1.0 - tail);
    if (lo > 0.0 || hi < 0.0) selected.push_back(static_cast<int>(t));
  }
  return selected;
}

std::vector<double> point_estimates(const PooledPosterior& posterior, bool use_median,
                                    const std::optional<std::vector<int>>& selected) {
  std::vector<double> psi;
  for (std::size_t t = 0; t < posterior.psi_columns.size(); ++t) {
    const int col = posterior.psi_columns[t];
    double value = use_median ? posterior.median(col) : posterior.psi_mean(static_cast<int>(t));
    if (selected && !is_main_effect_label(posterior.psi_labels[t]) &&
        std::find(selected->begin(), selected->end(), static_cast<int>(t)) == selected->end()) {
      value = 0.0;
    }
    psi.push_back(value);
  }
  return psi;
}

namespace {

nlohmann::json parameter_summary(const PooledPosterior& posterior, int col) {
  return {{"mean", posterior.mean(col)},     {"sd", posterior.sd(col)},
          {"median", posterior.median(col)}, {"q2.5", posterior.quantile(col, 0.025)},
          {"q97.5", posterior.quantile(col, 0.975)}, {"rhat", posterior.rank_rhat(col)},
          {"ess", posterior.ess(col)}};
}

}  // namespace

std::string posterior_summary_json(const PooledPosterior& posterior,
                                   const std::vector<int>& selected) {
  nlohmann::json doc;
  nlohmann::json psi = nlohmann::json::object();
  for (std::size_t t = 0; t < posterior.psi_columns.size(); ++t) {
    auto entry = parameter_summary(posterior, posterior.psi_columns[t]);
    entry["rb_mean"] = posterior.psi_mean(static_cast<int>(t));
    entry["rb_sd"] = posterior.psi_sd(static_cast<int>(t));
    psi[posterior.psi_labels[t]] = entry;
  }
  doc["psi"] = psi;
  nlohmann::json other = nlohmann::json::object();
  for (int col = 0; col < static_cast<int>(posterior.names.size()); ++col) {
    const auto& name = posterior.names[static_cast<std::size_t>(col)];
    if (name.rfind("sd(", 0) == 0 || name.rfind("lambda(", 0) == 0 || name == "tau") {
      other[name] = parameter_summary(posterior, col);
    }
  }
  doc["variance_components"] = other;
  nlohmann::json chosen = nlohmann::json::array();
  for (int t : selected) chosen.push_back(posterior.psi_labels[static_cast<std::size_t>(t)]);
  doc["selected"] = chosen;
  doc["chains"] = {{"n_chains", posterior.info.n_chains},
                   {"n_warmup", posterior.info.n_warmup},
                   {"n_kept", posterior.info.n_kept},
                   {"seed", posterior.info.seed}};
  doc["max_rhat"] = max_rhat(posterior);
  return doc.dump(2) + "\n";
}

std::string posterior_draws_csv(const PooledPosterior& posterior) {
  return format_numeric_csv({posterior.names, posterior.draws});
}

double max_rhat(const PooledPosterior& posterior) {
  double worst = 1.0;
  for (int col = 0; col < static_cast<int>(posterior.names.size()); ++col) {
    const double r = posterior.rank_rhat(col);
    if (std::isfinite(r)) worst = std::max(worst, r);
  }
  return worst;
}

}  // namespace blipmeta
