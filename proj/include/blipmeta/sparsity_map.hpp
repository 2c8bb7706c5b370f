#ifndef BLIPMETA_SPARSITY_MAP_HPP_
#define BLIPMETA_SPARSITY_MAP_HPP_

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "blipmeta/federation.hpp"
#include "blipmeta/model.hpp"

namespace blipmeta {

struct EstimableSet;

enum class DropReason { constant, absent_level, zero_column, linear_dependency };

/// Why a design column could not be estimated at a site. `value` holds the
/// constant for DropReason::constant.
struct DroppedColumn {
  int column = 0;
  std::string label;
  DropReason reason = DropReason::linear_dependency;
  double value = 0.0;
};

struct ReparamRow {
  int column = 0;  // design column of the estimable coefficient
  std::string label;
  std::vector<MapWeight> weights;  // sorted by psi index, nonzero
};

/// Linear map from a site's estimable blip coefficients to global psi.
struct ReparamMap {
  std::vector<ReparamRow> rows;
  std::vector<DroppedColumn> context;

  /// True when every row is a single unit weight on its own psi index.
  bool is_identity(const ModelSpec& spec, const DesignMatrix& design) const;
};

/// Expands each retained blip coefficient into the psi combination it
/// estimates. Throws Error(unmappable_sparsity) when a dropped blip column
/// depends on treatment-free columns (e.g. one treatment arm is absent).
ReparamMap derive_reparam(const ModelSpec& spec, const DesignMatrix& design,
                          const EstimableSet& estimable);

/// The same algebra over all parameters: rows are retained design columns,
/// columns are all design columns (beta block then psi block).
Eigen::MatrixXd derive_parameter_map(const DesignMatrix& design,
                                     const EstimableSet& estimable);

/// psi indices that appear in no row of any site map; their posteriors are
/// prior-only.
std::vector<int> validate_identifiability(const std::vector<SiteSummary>& summaries,
                                          int psi_count);
std::vector<int> validate_identifiability(const std::vector<ReparamMap>& maps,
                                          int psi_count);

}  // namespace blipmeta

#endif  // BLIPMETA_SPARSITY_MAP_HPP_
