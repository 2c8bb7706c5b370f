#include "blipmeta/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "blipmeta/csv.hpp"
#include "blipmeta/error.hpp"
#include "json.hpp"

namespace blipmeta {

namespace {

std::string term_token(const Term& term) {
  switch (term.kind) {
    case TermKind::intercept:
      return "1";
    case TermKind::numeric:
      return "num:" + term.column;
    case TermKind::indicator:
      return "ind:" + term.column;
  }
  return {};
}

void require_unique(const std::vector<Term>& terms, const char* list) {
  std::set<std::string> seen;
  for (const auto& term : terms) {
    if (!seen.insert(term.label()).second) {
      throw Error(ErrorCode::invalid_model,
                  std::string("duplicate term '") + term.label() + "' in " + list);
    }
  }
}

void require_intercept_first(const std::vector<Term>& terms, const char* list) {
  if (terms.empty() || !terms.front().is_intercept()) {
    throw Error(ErrorCode::invalid_model,
                std::string(list) + " must start with the intercept");
  }
}

}  // namespace

ModelSpec::ModelSpec(TreatmentKind kind, std::vector<Term> treatment_free,
                     std::vector<Term> blip_linear, std::vector<Term> blip_quadratic,
                     std::string treatment_column, std::string outcome_column)
    : kind_(kind),
      treatment_free_(std::move(treatment_free)),
      blip_linear_(std::move(blip_linear)),
      blip_quadratic_(std::move(blip_quadratic)),
      treatment_column_(std::move(treatment_column)),
      outcome_column_(std::move(outcome_column)) {
  require_unique(treatment_free_, "treatment-free terms");
  require_unique(blip_linear_, "linear blip terms");
  require_unique(blip_quadratic_, "quadratic blip terms");
  require_intercept_first(blip_linear_, "linear blip terms");

  if (kind_ == TreatmentKind::binary && !blip_quadratic_.empty()) {
    throw Error(ErrorCode::invalid_model,
                "binary treatment models have no quadratic blip block");
  }
  if (kind_ == TreatmentKind::continuous_quadratic) {
    require_intercept_first(blip_quadratic_, "quadratic blip terms");
  }

  // Prescriptive terms must be a subset of the predictive ones.
  auto in_treatment_free = [&](const Term& term) {
    return std::find(treatment_free_.begin(), treatment_free_.end(), term) !=
           treatment_free_.end();
  };
  for (const auto* block : {&blip_linear_, &blip_quadratic_}) {
    for (const auto& term : *block) {
      if (!in_treatment_free(term)) {
        throw Error(ErrorCode::invalid_model,
                    "blip term '" + term.label() + "' missing from treatment-free terms");
      }
    }
  }

  // A column must keep one kind across lists.
  std::set<std::string> numeric, indicator;
  for (const auto* block : {&treatment_free_, &blip_linear_, &blip_quadratic_}) {
    for (const auto& term : *block) {
      if (term.kind == TermKind::numeric) numeric.insert(term.column);
      if (term.kind == TermKind::indicator) indicator.insert(term.column);
      if (!term.is_intercept() && term.column.empty()) {
        throw Error(ErrorCode::invalid_model, "covariate term without a column name");
      }
    }
  }
  for (const auto& name : numeric) {
    if (indicator.count(name)) {
      throw Error(ErrorCode::invalid_model,
                  "column '" + name + "' declared both numeric and indicator");
    }
  }
  if (treatment_column_.empty() || outcome_column_.empty() ||
      treatment_column_ == outcome_column_) {
    throw Error(ErrorCode::invalid_model, "treatment and outcome columns must differ");
  }
  for (const auto& name : covariate_columns()) {
    if (name == treatment_column_ || name == outcome_column_) {
      throw Error(ErrorCode::invalid_model,
                  "covariate '" + name + "' collides with the treatment/outcome column");
    }
  }
}

int ModelSpec::psi_index(CoefficientIndex index) const {
  switch (index.kind) {
    case CoefficientKind::treatment_free:
      return -1;
    case CoefficientKind::blip_linear:
      return index.position;
    case CoefficientKind::blip_quadratic:
      return static_cast<int>(blip_linear_.size()) + index.position;
  }
  return -1;
}

CoefficientIndex ModelSpec::psi_coefficient(int psi) const {
  const int q = static_cast<int>(blip_linear_.size());
  if (psi < 0 || psi >= psi_count()) {
    throw Error(ErrorCode::invalid_argument, "psi index out of range");
  }
  if (psi < q) return {CoefficientKind::blip_linear, psi};
  return {CoefficientKind::blip_quadratic, psi - q};
}

std::string ModelSpec::coefficient_label(CoefficientIndex index) const {
  switch (index.kind) {
    case CoefficientKind::treatment_free:
      return treatment_free_.at(index.position).label();
    case CoefficientKind::blip_linear: {
      const auto& term = blip_linear_.at(index.position);
      return term.is_intercept() ? "a" : "a:" + term.column;
    }
    case CoefficientKind::blip_quadratic: {
      const auto& term = blip_quadratic_.at(index.position);
      return term.is_intercept() ? "a2" : "a2:" + term.column;
    }
  }
  return {};
}

std::string ModelSpec::psi_label(int psi) const {
  return coefficient_label(psi_coefficient(psi));
}

bool ModelSpec::is_main_effect(int psi) const {
  const auto coef = psi_coefficient(psi);
  return coef.position == 0;
}

std::vector<std::string> ModelSpec::covariate_columns() const {
  std::vector<std::string> names;
  for (const auto* block : {&treatment_free_, &blip_linear_, &blip_quadratic_}) {
    for (const auto& term : *block) {
      if (term.is_intercept()) continue;
      if (std::find(names.begin(), names.end(), term.column) == names.end()) {
        names.push_back(term.column);
      }
    }
  }
  return names;
}

bool ModelSpec::is_indicator_column(const std::string& name) const {
  return std::any_of(treatment_free_.begin(), treatment_free_.end(), [&](const Term& t) {
    return t.kind == TermKind::indicator && t.column == name;
  });
}

std::string ModelSpec::canonical_json() const {
  auto tokens = [](const std::vector<Term>& terms) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& term : terms) list.push_back(term_token(term));
    return list;
  };
  nlohmann::json doc;
  doc["treatment_kind"] =
      kind_ == TreatmentKind::binary ? "binary" : "continuous_quadratic";
  doc["treatment_free"] = tokens(treatment_free_);
  doc["blip_linear"] = tokens(blip_linear_);
  doc["blip_quadratic"] = tokens(blip_quadratic_);
  doc["treatment_column"] = treatment_column_;
  doc["outcome_column"] = outcome_column_;
  return doc.dump();
}

std::string ModelSpec::fingerprint() const { return fnv1a64_hex(canonical_json()); }

std::string fnv1a64_hex(std::string_view bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[hash & 0xF];
    hash >>= 4;
  }
  return out;
}

std::optional<int> SiteDataset::column(const std::string& name) const {
  auto it = std::find(column_names.begin(), column_names.end(), name);
  if (it == column_names.end()) return std::nullopt;
  return static_cast<int>(it - column_names.begin());
}

void validate_dataset(const ModelSpec& spec, const SiteDataset& data) {
  const Eigen::Index n = data.outcome.size();
  if (n < 1) throw Error(ErrorCode::invalid_argument, "site '" + data.site_id + "' has no rows");
  if (data.treatment.size() != n || data.covariates.rows() != n ||
      data.covariates.cols() != static_cast<Eigen::Index>(data.column_names.size())) {
    throw Error(ErrorCode::invalid_argument, "site '" + data.site_id + "' has ragged columns");
  }
  if (!data.outcome.allFinite()) {
    throw Error(ErrorCode::non_finite_value, "non-finite outcome at site '" + data.site_id + "'");
  }
  if (!data.treatment.allFinite()) {
    throw Error(ErrorCode::non_finite_value,
                "non-finite treatment at site '" + data.site_id + "'");
  }
  if (spec.treatment_kind() == TreatmentKind::binary) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const double a = data.treatment[r];
      if (a != 0.0 && a != 1.0) {
        throw Error(ErrorCode::invalid_argument,
                    "binary treatment must be coded 0/1 at site '" + data.site_id + "'");
      }
    }
  }
  for (const auto& name : spec.covariate_columns()) {
    auto col = data.column(name);
    if (!col) {
      throw Error(ErrorCode::missing_column,
                  "column '" + name + "' absent at site '" + data.site_id + "'");
    }
    const auto values = data.covariates.col(*col);
    if (!values.allFinite()) {
      throw Error(ErrorCode::non_finite_value,
                  "non-finite values in '" + name + "' at site '" + data.site_id + "'");
    }
    if (spec.is_indicator_column(name)) {
      for (Eigen::Index r = 0; r < n; ++r) {
        if (values[r] != 0.0 && values[r] != 1.0) {
          throw Error(ErrorCode::invalid_indicator,
                      "indicator '" + name + "' holds a value other than 0/1");
        }
      }
    }
  }
}

DesignMatrix build_design_matrix(const ModelSpec& spec, const SiteDataset& data) {
  validate_dataset(spec, data);
  const Eigen::Index n = data.rows();

  DesignMatrix design;
  design.x.resize(n, spec.column_count());

  auto term_column = [&](const Term& term) -> Eigen::VectorXd {
    if (term.is_intercept()) return Eigen::VectorXd::Ones(n);
    return data.covariates.col(*data.column(term.column));
  };

  int c = 0;
  for (int s = 0; s < spec.treatment_free_count(); ++s, ++c) {
    design.x.col(c) = term_column(spec.treatment_free()[s]);
    design.columns.push_back({CoefficientKind::treatment_free, s});
  }
  const Eigen::VectorXd a = data.treatment;
  for (int t = 0; t < static_cast<int>(spec.blip_linear().size()); ++t, ++c) {
    design.x.col(c) = a.cwiseProduct(term_column(spec.blip_linear()[t]));
    design.columns.push_back({CoefficientKind::blip_linear, t});
  }
  const Eigen::VectorXd a2 = a.cwiseAbs2();
  for (int t = 0; t < static_cast<int>(spec.blip_quadratic().size()); ++t, ++c) {
    design.x.col(c) = a2.cwiseProduct(term_column(spec.blip_quadratic()[t]));
    design.columns.push_back({CoefficientKind::blip_quadratic, t});
  }
  for (const auto& index : design.columns) {
    design.labels.push_back(spec.coefficient_label(index));
  }
  return design;
}

Eigen::VectorXd term_values(const std::vector<Term>& terms,
                            const std::vector<std::string>& columns,
                            std::span<const double> row) {
  Eigen::VectorXd values(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k].is_intercept()) {
      values[k] = 1.0;
      continue;
    }
    auto it = std::find(columns.begin(), columns.end(), terms[k].column);
    if (it == columns.end()) {
      throw Error(ErrorCode::missing_column, "column '" + terms[k].column + "' absent");
    }
    values[k] = row[static_cast<std::size_t>(it - columns.begin())];
  }
  return values;
}

SiteDataset read_site_csv(const std::string& path, const ModelSpec& spec,
                          std::string site_id) {
  const NumericTable table = read_numeric_csv(path);
  SiteDataset data;
  data.site_id = std::move(site_id);
  const auto find = [&](const std::string& name) -> std::optional<int> {
    auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) return std::nullopt;
    return static_cast<int>(it - table.header.begin());
  };
  const auto a_col = find(spec.treatment_column());
  const auto y_col = find(spec.outcome_column());
  if (!a_col || !y_col) {
    throw Error(ErrorCode::missing_column,
                path + ": needs columns '" + spec.treatment_column() + "' and '" +
                    spec.outcome_column() + "'");
  }
  data.treatment = table.values.col(*a_col);
  data.outcome = table.values.col(*y_col);
  std::vector<int> keep;
  for (int c = 0; c < static_cast<int>(table.header.size()); ++c) {
    if (c == *a_col || c == *y_col) continue;
    keep.push_back(c);
    data.column_names.push_back(table.header[c]);
  }
  data.covariates.resize(table.values.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    data.covariates.col(static_cast<Eigen::Index>(k)) = table.values.col(keep[k]);
  }
  return data;
}

void write_site_csv(const std::string& path, const ModelSpec& spec,
                    const SiteDataset& data) {
  NumericTable table;
  table.header = data.column_names;
  table.header.push_back(spec.treatment_column());
  table.header.push_back(spec.outcome_column());
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.covariates.cols();
  table.values.resize(n, p + 2);
  table.values.leftCols(p) = data.covariates;
  table.values.col(p) = data.treatment;
  table.values.col(p + 1) = data.outcome;
  write_numeric_csv(path, table);
}

}  // namespace blipmeta
