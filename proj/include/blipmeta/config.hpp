#ifndef BLIPMETA_CONFIG_HPP_
#define BLIPMETA_CONFIG_HPP_

#include <optional>
#include <string>

#include "blipmeta/hierarchy.hpp"
#include "blipmeta/model.hpp"
#include "blipmeta/simgen.hpp"
#include "blipmeta/stage_two.hpp"
#include "json.hpp"

namespace blipmeta {

enum class ReportFormat { json, csv };

/// Simulation-study controls.
struct StudyOptions {
  int replicates = 200;
  int cohort_size = 100000;
  bool one_stage = false;
  /// Posterior medians instead of means for the rule.
  bool use_median = false;
  double selection_level = 0.95;
  int threads = 0;  // 0: hardware concurrency
  /// Replicate failure fraction that aborts the study.
  double max_failure_rate = 0.05;
};

/// Everything a subcommand may read from a config file. Blocks that are
/// absent keep their defaults; `document` is the parsed config echoed into
/// run manifests.
struct RunConfig {
  std::optional<ModelSpec> model;
  PriorConfig priors;
  SamplerControl mcmc;
  std::optional<Scenario> scenario;
  StudyOptions study;
  ReportFormat report_format = ReportFormat::json;
  nlohmann::json document = nlohmann::json::object();

  /// The explicit model block, else the scenario's analysis model. Throws
  /// Error(invalid_argument) when neither is configured.
  ModelSpec resolve_model() const;
};

/// Parses TOML, or JSON when the text starts with '{'. Throws
/// Error(parse_error) on syntax errors and Error(invalid_argument) on bad
/// values.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

ModelSpec model_from_json(const nlohmann::json& block);
nlohmann::json model_to_json(const ModelSpec& spec);
Scenario scenario_from_json(const nlohmann::json& block);
nlohmann::json scenario_to_json(const Scenario& scenario);
PriorConfig priors_from_json(const nlohmann::json& block);

}  // namespace blipmeta

#endif  // BLIPMETA_CONFIG_HPP_
