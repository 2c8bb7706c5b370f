#include "blipmeta/sparsity_map.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "blipmeta/error.hpp"
#include "blipmeta/stage_one.hpp"

namespace blipmeta {

namespace {

constexpr double kSnapTolerance = 1e-8;

// Dependency weights come out of a QR solve; indicator algebra yields
// integers up to rounding, so snap those back.
double snap(double w) {
  if (std::abs(w) < kSnapTolerance) return 0.0;
  const double nearest = std::round(w);
  if (std::abs(w - nearest) < kSnapTolerance * std::max(1.0, std::abs(w))) return nearest;
  return w;
}

// Treatment-free design column that carries the same term as a blip column.
int covariate_column(const ModelSpec& spec, const DesignMatrix& design, int column) {
  const auto& index = design.columns[static_cast<std::size_t>(column)];
  if (index.kind == CoefficientKind::treatment_free) return column;
  const auto& terms = index.kind == CoefficientKind::blip_linear ? spec.blip_linear()
                                                                 : spec.blip_quadratic();
  const Term& term = terms[static_cast<std::size_t>(index.position)];
  const auto& tf = spec.treatment_free();
  return static_cast<int>(std::find(tf.begin(), tf.end(), term) - tf.begin());
}

DroppedColumn describe_drop(const ModelSpec& spec, const DesignMatrix& design, int column) {
  DroppedColumn note;
  note.column = column;
  note.label = design.labels[static_cast<std::size_t>(column)];
  const auto values = design.x.col(covariate_column(spec, design, column));
  const double first = values[0];
  const bool constant = (values.array() == first).all();
  const auto& index = design.columns[static_cast<std::size_t>(column)];
  const Term* term = nullptr;
  if (index.kind == CoefficientKind::treatment_free) {
    term = &spec.treatment_free()[static_cast<std::size_t>(index.position)];
  } else if (index.kind == CoefficientKind::blip_linear) {
    term = &spec.blip_linear()[static_cast<std::size_t>(index.position)];
  } else {
    term = &spec.blip_quadratic()[static_cast<std::size_t>(index.position)];
  }
  if (constant && first == 0.0) {
    note.reason = term->kind == TermKind::indicator ? DropReason::absent_level
                                                    : DropReason::zero_column;
  } else if (constant) {
    note.reason = DropReason::constant;
    note.value = first;
  } else {
    note.reason = DropReason::linear_dependency;
  }
  return note;
}

}  // namespace

bool ReparamMap::is_identity(const ModelSpec& spec, const DesignMatrix& design) const {
  for (const auto& row : rows) {
    const int own = spec.psi_index(design.columns[static_cast<std::size_t>(row.column)]);
    if (row.weights.size() != 1 || row.weights[0].psi_index != own ||
        row.weights[0].weight != 1.0) {
      return false;
    }
  }
  return true;
}

ReparamMap derive_reparam(const ModelSpec& spec, const DesignMatrix& design,
                          const EstimableSet& estimable) {
  ReparamMap map;
  const auto& retained = estimable.retained;

  for (std::size_t d = 0; d < estimable.dropped.size(); ++d) {
    const int column = estimable.dropped[d];
    map.context.push_back(describe_drop(spec, design, column));
    const auto kind = design.columns[static_cast<std::size_t>(column)].kind;
    if (kind == CoefficientKind::treatment_free) continue;
    if (design.x.col(column).isZero(0.0) &&
        !design.x.col(covariate_column(spec, design, column)).isZero(0.0)) {
      throw Error(ErrorCode::unmappable_sparsity,
                  "blip column '" + design.labels[static_cast<std::size_t>(column)] +
                      "' is identically zero although its covariate varies "
                      "(no treated patients?)");
    }
    for (std::size_t k = 0; k < retained.size(); ++k) {
      const auto retained_kind = design.columns[static_cast<std::size_t>(retained[k])].kind;
      const double w = snap(estimable.dependencies(static_cast<Eigen::Index>(d),
                                                   static_cast<Eigen::Index>(k)));
      if (retained_kind == CoefficientKind::treatment_free && w != 0.0) {
        throw Error(ErrorCode::unmappable_sparsity,
                    "blip column '" + design.labels[static_cast<std::size_t>(column)] +
                        "' is confounded with treatment-free column '" +
                        design.labels[static_cast<std::size_t>(retained[k])] +
                        "' (is a treatment arm missing?)");
      }
    }
  }

  for (std::size_t k = 0; k < retained.size(); ++k) {
    const int column = retained[k];
    const auto& index = design.columns[static_cast<std::size_t>(column)];
    if (index.kind == CoefficientKind::treatment_free) continue;

    std::map<int, double> weights;
    weights[spec.psi_index(index)] += 1.0;
    for (std::size_t d = 0; d < estimable.dropped.size(); ++d) {
      const auto& dropped = design.columns[static_cast<std::size_t>(estimable.dropped[d])];
      if (dropped.kind == CoefficientKind::treatment_free) continue;
      const double w = snap(estimable.dependencies(static_cast<Eigen::Index>(d),
                                                   static_cast<Eigen::Index>(k)));
      if (w != 0.0) weights[spec.psi_index(dropped)] += w;
    }
    ReparamRow row;
    row.column = column;
    row.label = design.labels[static_cast<std::size_t>(column)];
    for (const auto& [psi, w] : weights) {
      if (w != 0.0) row.weights.push_back({psi, w});
    }
    if (row.weights.empty()) {
      throw Error(ErrorCode::unmappable_sparsity, "map row '" + row.label + "' is zero");
    }
    map.rows.push_back(std::move(row));
  }
  return map;
}

Eigen::MatrixXd derive_parameter_map(const DesignMatrix& design,
                                     const EstimableSet& estimable) {
  const auto k = static_cast<Eigen::Index>(estimable.retained.size());
  Eigen::MatrixXd map = Eigen::MatrixXd::Zero(k, design.cols());
  for (Eigen::Index r = 0; r < k; ++r) {
    map(r, estimable.retained[static_cast<std::size_t>(r)]) = 1.0;
    for (std::size_t d = 0; d < estimable.dropped.size(); ++d) {
      map(r, estimable.dropped[d]) += snap(estimable.dependencies(static_cast<Eigen::Index>(d), r));
    }
  }
  return map;
}

std::vector<int> validate_identifiability(const std::vector<SiteSummary>& summaries,
                                          int psi_count) {
  std::set<int> seen;
  for (const auto& summary : summaries) {
    for (const auto& entry : summary.entries) {
      for (const auto& w : entry.map_row) seen.insert(w.psi_index);
    }
  }
  std::vector<int> flagged;
  for (int t = 0; t < psi_count; ++t) {
    if (!seen.count(t)) flagged.push_back(t);
  }
  return flagged;
}

std::vector<int> validate_identifiability(const std::vector<ReparamMap>& maps,
                                          int psi_count) {
  std::set<int> seen;
  for (const auto& map : maps) {
    for (const auto& row : map.rows) {
      for (const auto& w : row.weights) seen.insert(w.psi_index);
    }
  }
  std::vector<int> flagged;
  for (int t = 0; t < psi_count; ++t) {
    if (!seen.count(t)) flagged.push_back(t);
  }
  return flagged;
}

}  // namespace blipmeta
