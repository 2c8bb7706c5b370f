#ifndef BLIPMETA_ITR_HPP_
#define BLIPMETA_ITR_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blipmeta/model.hpp"
#include "blipmeta/simgen.hpp"

namespace blipmeta {

/// Point-estimated treatment rule over the blip terms of a model.
struct Rule {
  TreatmentKind kind = TreatmentKind::binary;
  std::vector<Term> linear_terms;
  std::vector<Term> quadratic_terms;
  Eigen::VectorXd psi_linear;
  Eigen::VectorXd psi_quadratic;

  /// `psi` in global psi order (linear block, then quadratic block).
  static Rule from_spec(const ModelSpec& spec, const std::vector<double>& psi);
};

/// 1 iff psi' x > 0; ties do not treat. `row` is laid out as `columns`.
int decide_binary(const Rule& rule, std::span<const double> row,
                  const std::vector<std::string>& columns);

struct DoseDecision {
  double dose = 0.0;
  bool clipped = false;
  /// The blip is not concave at this row; the better bound was returned.
  bool not_concave = false;
};

/// argmax over [lo, hi] of a psi1'x + a^2 psi2'x. Throws Error(undefined_rule)
/// when both blocks vanish at x and Error(invalid_argument) unless lo < hi.
DoseDecision decide_dose(const Rule& rule, std::span<const double> row,
                         const std::vector<std::string>& columns, double lo, double hi);

struct RuleEvaluation {
  double value_estimate = 0.0;
  double value_true = 0.0;
  double dvf = 0.0;
  int cohort_size = 0;
  std::uint64_t seed = 0;
  int clipped_rows = 0;
  int not_concave_rows = 0;
};

/// Treatment each cohort row receives under `rule` (0/1 or dose).
Eigen::VectorXd apply_rule(const Rule& rule, const Eigen::MatrixXd& cohort,
                           const std::vector<std::string>& columns, double lo, double hi,
                           int* clipped = nullptr, int* not_concave = nullptr);

/// Value of the estimated and true rules on one cohort drawn from the
/// scenario's covariate mixture, using the noiseless true conditional mean
/// at the common parameters; dvf = V(d_true) - V(d_est).
RuleEvaluation evaluate_rule(const Rule& estimate, const Scenario& truth, int cohort_size,
                             std::uint64_t seed);
/// Same, on a cohort supplied by the caller (reused across replicates).
RuleEvaluation evaluate_rule_on(const Rule& estimate, const Scenario& truth,
                                const Eigen::MatrixXd& cohort);

}  // namespace blipmeta

#endif  // BLIPMETA_ITR_HPP_
