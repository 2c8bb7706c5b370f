#ifndef BLIPMETA_STUDY_HPP_
#define BLIPMETA_STUDY_HPP_

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "blipmeta/config.hpp"
#include "blipmeta/simgen.hpp"

namespace blipmeta {

/// One fitted replicate for one method ("two_stage" or "one_stage").
struct ReplicateOutcome {
  int replicate = 0;
  std::string method;
  bool ok = false;
  std::string error;
  std::vector<double> psi_hat;
  /// 1 where the interaction was selected; main effects always 1.
  std::vector<int> selected;
  double dvf = 0.0;
  double value_estimate = 0.0;
  double value_true = 0.0;
  double max_rhat = 0.0;
  std::string worst_parameter;
};

struct StudyResult {
  Scenario scenario;
  std::vector<std::string> psi_labels;
  Eigen::VectorXd truth;
  bool selection = false;
  std::vector<ReplicateOutcome> outcomes;  // replicate-major, two-stage first
  std::vector<std::vector<Propensity>> propensities;  // per replicate, per site
  int failures = 0;
};

/// Summary statistics over a set of replicates for one method.
struct MethodAggregate {
  std::string method;
  std::string set;  // "full" or "selected"
  int count = 0;
  std::vector<double> mean, bias, relative_bias, sd, selection;
  double dvf_mean = 0.0;
  double dvf_sd = 0.0;
  double dvf_zero_fraction = 0.0;
};

/// Replicates where every truly nonzero interaction was selected.
bool correctly_selected(const StudyResult& study, const ReplicateOutcome& outcome);
std::vector<MethodAggregate> aggregate(const StudyResult& study);

using ProgressFn = std::function<void(int done, int total)>;

/// simulate -> fit each site -> pool (and optionally one-stage) -> rule ->
/// evaluate on a cohort shared by every replicate. Failed replicates are
/// recorded and skipped; throws Error(study_aborted) when more than
/// `max_failure_rate` of them fail.
StudyResult run_study(const RunConfig& config, const ProgressFn& progress = {});

/// Long-format CSV: scenario,method,set,replicate,parameter,statistic,value.
/// Per-replicate rows carry the replicate index; aggregate rows use "all".
std::string metrics_csv(const StudyResult& study);

/// Aggregate rows of any number of metrics CSVs as
/// {scenario: {method: {set: {parameter: {statistic: value}}}}}.
std::string report_json(const std::vector<std::string>& metrics_documents);

/// Config echo, seeds, propensity draws and build versions.
std::string study_manifest(const RunConfig& config, const StudyResult& study);
std::string run_manifest(const std::string& command, const nlohmann::json& config_echo,
                         const nlohmann::json& extra = nlohmann::json::object());

inline constexpr const char* kToolVersion = "1.0.0";

}  // namespace blipmeta

#endif  // BLIPMETA_STUDY_HPP_
