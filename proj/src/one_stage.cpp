#include "blipmeta/one_stage.hpp"

#include "blipmeta/error.hpp"
#include "blipmeta/sparsity_map.hpp"
#include "blipmeta/stage_one.hpp"

namespace blipmeta {

HierarchicalModel build_one_stage_model(const OneStageModel& model) {
  const ModelSpec& spec = model.spec;
  HierarchicalModel h;
  for (const auto& term : spec.treatment_free()) h.names.push_back("beta:" + term.label());
  std::vector<std::string> psi_labels;
  for (int t = 0; t < spec.psi_count(); ++t) psi_labels.push_back(spec.psi_label(t));
  h.names.insert(h.names.end(), psi_labels.begin(), psi_labels.end());

  h.mean_priors.assign(spec.treatment_free().size(), MeanPrior::normal(model.priors.mean_variance));
  const auto psi_priors = model.priors.mean_priors(psi_labels);
  h.mean_priors.insert(h.mean_priors.end(), psi_priors.begin(), psi_priors.end());
  h.spread_priors = model.priors.spread_priors(h.names.size());
  h.residual_scale = model.residual_scale;

  for (const auto& data : model.datasets) {
    const SiteAnalysis site = analyze_site(spec, data);
    const Eigen::MatrixXd full = derive_parameter_map(site.design, site.estimable);
    std::vector<int> touched;
    for (Eigen::Index c = 0; c < full.cols(); ++c) {
      if (!full.col(c).isZero(0.0)) touched.push_back(static_cast<int>(c));
    }
    Eigen::MatrixXd map(full.rows(), static_cast<Eigen::Index>(touched.size()));
    for (std::size_t k = 0; k < touched.size(); ++k) map.col(static_cast<Eigen::Index>(k)) = full.col(touched[k]);

    Eigen::MatrixXd covariance = site.fit.xtx_inverse;
    if (model.fixed_residual_variance) covariance *= *model.fixed_residual_variance;
    SiteBlock block = make_site_block(data.site_id, std::move(touched), std::move(map),
                                      site.fit.coefficients, std::move(covariance));
    if (!model.fixed_residual_variance) {
      block.residual_variance = true;
      block.sse = site.fit.sse;
      block.n_obs = site.fit.n_obs;
    }
    h.sites.push_back(std::move(block));
  }
  return h;
}

PooledPosterior run_onestage(const OneStageModel& model, const SamplerControl& control) {
  const HierarchicalModel h = build_one_stage_model(model);
  PooledPosterior post = run_gibbs(h, control);
  const int offset = model.spec.treatment_free_count();
  const int psi_count = model.spec.psi_count();
  post.psi_columns.clear();
  post.psi_labels.clear();
  for (int t = 0; t < psi_count; ++t) {
    post.psi_columns.push_back(offset + t);
    post.psi_labels.push_back(model.spec.psi_label(t));
  }
  post.rb_mean = post.rb_mean.middleCols(offset, psi_count).eval();
  post.rb_variance = post.rb_variance.middleCols(offset, psi_count).eval();
  return post;
}

}  // namespace blipmeta
