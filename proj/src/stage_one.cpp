#include "blipmeta/stage_one.hpp"

#include <numeric>

#include "blipmeta/error.hpp"

namespace blipmeta {

EstimableSet detect_estimable(const Eigen::MatrixXd& design, double tolerance) {
  if (design.rows() < 1) {
    throw Error(ErrorCode::invalid_argument, "design has no rows");
  }
  const Eigen::Index n = design.rows();
  EstimableSet result;
  // Orthonormal basis of the retained columns, grown in canonical order.
  Eigen::MatrixXd basis(n, 0);
  for (int j = 0; j < design.cols(); ++j) {
    const Eigen::VectorXd column = design.col(j);
    const double norm = column.norm();
    if (norm == 0.0) {
      result.dropped.push_back(j);
      continue;
    }
    Eigen::VectorXd residual = column;
    // Two passes of classical Gram-Schmidt keep the residual orthogonal.
    for (int pass = 0; pass < 2 && basis.cols() > 0; ++pass) {
      residual -= basis * (basis.transpose() * residual);
    }
    const double residual_norm = residual.norm();
    if (residual_norm <= tolerance * norm) {
      result.dropped.push_back(j);
      continue;
    }
    basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
    basis.col(basis.cols() - 1) = residual / residual_norm;
    result.retained.push_back(j);
  }
  if (result.retained.empty()) {
    throw Error(ErrorCode::degenerate_site, "every design column is zero");
  }

  const auto k = static_cast<Eigen::Index>(result.retained.size());
  Eigen::MatrixXd retained(n, k);
  for (Eigen::Index c = 0; c < k; ++c) retained.col(c) = design.col(result.retained[c]);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(retained);
  result.dependencies.resize(static_cast<Eigen::Index>(result.dropped.size()), k);
  for (std::size_t d = 0; d < result.dropped.size(); ++d) {
    const Eigen::VectorXd column = design.col(result.dropped[d]);
    if (column.isZero(0.0)) {
      result.dependencies.row(static_cast<Eigen::Index>(d)).setZero();
    } else {
      result.dependencies.row(static_cast<Eigen::Index>(d)) =
          qr.solve(column).transpose();
    }
  }
  return result;
}

SiteFit fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& outcome,
                std::vector<int> columns) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (outcome.size() != n) {
    throw Error(ErrorCode::invalid_argument, "outcome length does not match design");
  }
  if (n - k < 1) {
    throw Error(ErrorCode::saturated_fit,
                "n = " + std::to_string(n) + " with " + std::to_string(k) +
                    " columns leaves no residual degrees of freedom");
  }
  if (columns.empty()) {
    columns.resize(static_cast<std::size_t>(k));
    std::iota(columns.begin(), columns.end(), 0);
  }

  SiteFit fit;
  fit.estimable_columns = std::move(columns);
  fit.n_obs = static_cast<int>(n);
  fit.dof = static_cast<int>(n - k);

  Eigen::HouseholderQR<Eigen::MatrixXd> qr(design);
  fit.coefficients = qr.solve(outcome);
  const Eigen::MatrixXd r =
      qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inverse =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  fit.xtx_inverse = r_inverse * r_inverse.transpose();
  fit.xtx = design.transpose() * design;

  const Eigen::VectorXd residual = outcome - design * fit.coefficients;
  fit.sse = residual.squaredNorm();
  fit.residual_variance = fit.sse / fit.dof;
  fit.coefficient_sds =
      (fit.residual_variance * fit.xtx_inverse.diagonal().array()).sqrt().matrix();
  return fit;
}

SiteSummary summarize_site(const ModelSpec& spec, const std::string& site_id,
                           const DesignMatrix& design, const SiteFit& fit,
                           const ReparamMap& map) {
  SiteSummary summary;
  summary.site_id = site_id;
  summary.model_fingerprint = spec.fingerprint();
  for (int t = 0; t < spec.psi_count(); ++t) summary.psi_labels.push_back(spec.psi_label(t));
  summary.n_obs = fit.n_obs;
  summary.dof = fit.dof;
  for (const auto& row : map.rows) {
    auto it = std::find(fit.estimable_columns.begin(), fit.estimable_columns.end(), row.column);
    if (it == fit.estimable_columns.end()) {
      throw Error(ErrorCode::invalid_argument,
                  "map row '" + row.label + "' refers to a column the fit did not retain");
    }
    const auto k = it - fit.estimable_columns.begin();
    summary.entries.push_back(
        {design.labels[static_cast<std::size_t>(row.column)], fit.coefficients[k],
         fit.coefficient_sds[k], row.weights});
  }
  return canonicalize(std::move(summary));
}

SiteAnalysis analyze_site(const ModelSpec& spec, const SiteDataset& data, double tolerance) {
  SiteAnalysis analysis;
  analysis.design = build_design_matrix(spec, data);
  analysis.estimable = detect_estimable(analysis.design.x, tolerance);
  analysis.map = derive_reparam(spec, analysis.design, analysis.estimable);

  const auto& retained = analysis.estimable.retained;
  Eigen::MatrixXd x(analysis.design.rows(), static_cast<Eigen::Index>(retained.size()));
  for (std::size_t c = 0; c < retained.size(); ++c) {
    x.col(static_cast<Eigen::Index>(c)) = analysis.design.x.col(retained[c]);
  }
  analysis.fit = fit_ols(x, data.outcome, retained);
  analysis.summary =
      summarize_site(spec, data.site_id, analysis.design, analysis.fit, analysis.map);
  return analysis;
}

}  // namespace blipmeta
