#include "blipmeta/itr.hpp"

#include <algorithm>
#include <cmath>

#include "blipmeta/error.hpp"

namespace blipmeta {

Rule Rule::from_spec(const ModelSpec& spec, const std::vector<double>& psi) {
  if (static_cast<int>(psi.size()) != spec.psi_count()) {
    throw Error(ErrorCode::invalid_argument, "rule needs " + std::to_string(spec.psi_count()) +
                                                 " psi values, got " + std::to_string(psi.size()));
  }
  Rule rule;
  rule.kind = spec.treatment_kind();
  rule.linear_terms = spec.blip_linear();
  rule.quadratic_terms = spec.blip_quadratic();
  const auto q1 = static_cast<Eigen::Index>(rule.linear_terms.size());
  const Eigen::Map<const Eigen::VectorXd> all(psi.data(), static_cast<Eigen::Index>(psi.size()));
  rule.psi_linear = all.head(q1);
  rule.psi_quadratic = all.tail(all.size() - q1);
  return rule;
}

int decide_binary(const Rule& rule, std::span<const double> row,
                  const std::vector<std::string>& columns) {
  if (rule.kind != TreatmentKind::binary) {
    throw Error(ErrorCode::invalid_argument, "decide_binary needs a binary rule");
  }
  return term_values(rule.linear_terms, columns, row).dot(rule.psi_linear) > 0.0 ? 1 : 0;
}

DoseDecision decide_dose(const Rule& rule, std::span<const double> row,
                         const std::vector<std::string>& columns, double lo, double hi) {
  if (rule.kind != TreatmentKind::continuous_quadratic) {
    throw Error(ErrorCode::invalid_argument, "decide_dose needs a continuous rule");
  }
  if (!(lo < hi)) throw Error(ErrorCode::invalid_argument, "dose bounds need lo < hi");
  const double c1 = term_values(rule.linear_terms, columns, row).dot(rule.psi_linear);
  const double c2 = term_values(rule.quadratic_terms, columns, row).dot(rule.psi_quadratic);
  if (c1 == 0.0 && c2 == 0.0) {
    throw Error(ErrorCode::undefined_rule, "both blip blocks vanish at this covariate row");
  }
  DoseDecision decision;
  if (c2 < 0.0) {
    const double peak = -0.5 * c1 / c2;
    decision.dose = std::clamp(peak, lo, hi);
    decision.clipped = decision.dose != peak;
    return decision;
  }
  decision.not_concave = true;
  const double at_lo = lo * c1 + lo * lo * c2;
  const double at_hi = hi * c1 + hi * hi * c2;
  decision.dose = at_hi > at_lo ? hi : lo;
  return decision;
}

Eigen::VectorXd apply_rule(const Rule& rule, const Eigen::MatrixXd& cohort,
                           const std::vector<std::string>& columns, double lo, double hi,
                           int* clipped, int* not_concave) {
  Eigen::VectorXd a(cohort.rows());
  const Eigen::MatrixXd rows = cohort.transpose();  // contiguous rows
  int n_clipped = 0, n_not_concave = 0;
  for (Eigen::Index r = 0; r < cohort.rows(); ++r) {
    const std::span<const double> row(rows.col(r).data(), static_cast<std::size_t>(rows.rows()));
    if (rule.kind == TreatmentKind::binary) {
      a[r] = decide_binary(rule, row, columns);
    } else {
      const DoseDecision d = decide_dose(rule, row, columns, lo, hi);
      a[r] = d.dose;
      n_clipped += d.clipped;
      n_not_concave += d.not_concave;
    }
  }
  if (clipped) *clipped = n_clipped;
  if (not_concave) *not_concave = n_not_concave;
  return a;
}

RuleEvaluation evaluate_rule_on(const Rule& estimate, const Scenario& truth,
                                const Eigen::MatrixXd& cohort) {
  const ModelSpec spec = scenario_model(truth);
  const auto columns = covariate_names(truth);
  const TrueParameters theta = true_parameters(truth);
  const std::vector<double> psi(theta.psi.data(), theta.psi.data() + theta.psi.size());
  const Rule optimal = Rule::from_spec(spec, psi);

  RuleEvaluation out;
  out.cohort_size = static_cast<int>(cohort.rows());
  const Eigen::VectorXd a_est = apply_rule(estimate, cohort, columns, truth.dose_lo, truth.dose_hi,
                                           &out.clipped_rows, &out.not_concave_rows);
  const Eigen::VectorXd a_opt = apply_rule(optimal, cohort, columns, truth.dose_lo, truth.dose_hi);
  const Eigen::VectorXd v_est = outcome_mean(truth, theta, cohort, a_est);
  const Eigen::VectorXd v_opt = outcome_mean(truth, theta, cohort, a_opt);
  out.value_estimate = v_est.mean();
  out.value_true = v_opt.mean();
  // Differences row by row keep the shared treatment-free part out of the sum.
  out.dvf = (v_opt - v_est).mean();
  return out;
}

RuleEvaluation evaluate_rule(const Rule& estimate, const Scenario& truth, int cohort_size,
                             std::uint64_t seed) {
  RuleEvaluation out = evaluate_rule_on(estimate, truth, draw_cohort(truth, cohort_size, seed));
  out.seed = seed;
  return out;
}

}  // namespace blipmeta
