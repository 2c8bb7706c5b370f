#ifndef BLIPMETA_MODEL_HPP_
#define BLIPMETA_MODEL_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace blipmeta {

enum class TreatmentKind { binary, continuous_quadratic };

enum class TermKind { intercept, numeric, indicator };

/// A single model term: the intercept, a numeric covariate column, or a
/// pre-expanded categorical indicator column.
struct Term {
  TermKind kind = TermKind::intercept;
  std::string column;

  static Term intercept() { return {TermKind::intercept, {}}; }
  static Term numeric(std::string name) { return {TermKind::numeric, std::move(name)}; }
  static Term indicator(std::string name) {
    return {TermKind::indicator, std::move(name)};
  }

  bool is_intercept() const { return kind == TermKind::intercept; }
  /// "1" for the intercept, the column name otherwise.
  std::string label() const { return is_intercept() ? "1" : column; }

  friend bool operator==(const Term&, const Term&) = default;
};

enum class CoefficientKind { treatment_free, blip_linear, blip_quadratic };

struct CoefficientIndex {
  CoefficientKind kind = CoefficientKind::treatment_free;
  int position = 0;

  friend bool operator==(const CoefficientIndex&, const CoefficientIndex&) = default;
};

/// Names the predictive (treatment-free) and prescriptive (blip) terms of the
/// outcome model E(Y | x, a) = beta' x_beta + a psi1' x_psi1 + a^2 psi2' x_psi2.
///
/// Global blip parameter indices run over the linear block first and then the
/// quadratic block; index 0 is always the main treatment effect.
class ModelSpec {
 public:
  /// Validates every invariant; throws Error(invalid_model) on violation.
  ModelSpec(TreatmentKind kind, std::vector<Term> treatment_free,
            std::vector<Term> blip_linear, std::vector<Term> blip_quadratic = {},
            std::string treatment_column = "a", std::string outcome_column = "y");

  TreatmentKind treatment_kind() const { return kind_; }
  const std::vector<Term>& treatment_free() const { return treatment_free_; }
  const std::vector<Term>& blip_linear() const { return blip_linear_; }
  const std::vector<Term>& blip_quadratic() const { return blip_quadratic_; }
  const std::string& treatment_column() const { return treatment_column_; }
  const std::string& outcome_column() const { return outcome_column_; }

  int treatment_free_count() const { return static_cast<int>(treatment_free_.size()); }
  int psi_count() const {
    return static_cast<int>(blip_linear_.size() + blip_quadratic_.size());
  }
  int column_count() const { return treatment_free_count() + psi_count(); }

  /// Global psi index of a blip coefficient; -1 for treatment-free entries.
  int psi_index(CoefficientIndex index) const;
  CoefficientIndex psi_coefficient(int psi_index) const;
  /// "a", "a:x1", "a2", "a2:x1".
  std::string psi_label(int psi_index) const;
  std::string coefficient_label(CoefficientIndex index) const;
  /// True for the main effect of a or a^2 (the intercept of each blip block).
  bool is_main_effect(int psi_index) const;

  /// Distinct covariate columns referenced by any term, in first-use order.
  std::vector<std::string> covariate_columns() const;
  bool is_indicator_column(const std::string& name) const;

  /// Canonical JSON text used for fingerprinting (sorted keys, no spaces).
  std::string canonical_json() const;
  /// 16 hex digits of the FNV-1a 64-bit hash of canonical_json().
  std::string fingerprint() const;

 private:
  TreatmentKind kind_;
  std::vector<Term> treatment_free_;
  std::vector<Term> blip_linear_;
  std::vector<Term> blip_quadratic_;
  std::string treatment_column_;
  std::string outcome_column_;
};

std::string fnv1a64_hex(std::string_view bytes);

/// One site's individual-level data. Covariate columns are named; categorical
/// covariates arrive already expanded into 0/1 indicator columns.
struct SiteDataset {
  std::string site_id;
  std::vector<std::string> column_names;
  Eigen::MatrixXd covariates;  // n x p
  Eigen::VectorXd treatment;
  Eigen::VectorXd outcome;

  int rows() const { return static_cast<int>(outcome.size()); }
  std::optional<int> column(const std::string& name) const;
};

/// Checks finiteness, n >= 1, shape agreement, {0,1} indicator columns and
/// binary treatment coding against `spec`.
void validate_dataset(const ModelSpec& spec, const SiteDataset& data);

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<CoefficientIndex> columns;
  std::vector<std::string> labels;

  int cols() const { return static_cast<int>(columns.size()); }
  int rows() const { return static_cast<int>(x.rows()); }
};

/// Columns are [treatment-free | a * blip linear | a^2 * blip quadratic].
DesignMatrix build_design_matrix(const ModelSpec& spec, const SiteDataset& data);

/// Values of `terms` for one covariate row laid out as `columns`.
Eigen::VectorXd term_values(const std::vector<Term>& terms,
                            const std::vector<std::string>& columns,
                            std::span<const double> row);

/// Reads a site CSV (header row, numeric cells). The treatment and outcome
/// columns named by `spec` are split out; every other column is a covariate.
SiteDataset read_site_csv(const std::string& path, const ModelSpec& spec,
                          std::string site_id);
void write_site_csv(const std::string& path, const ModelSpec& spec,
                    const SiteDataset& data);

}  // namespace blipmeta

#endif  // BLIPMETA_MODEL_HPP_
