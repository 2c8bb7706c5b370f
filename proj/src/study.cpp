#include "blipmeta/study.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "blipmeta/error.hpp"
#include "blipmeta/csv.hpp"
#include "blipmeta/itr.hpp"
#include "blipmeta/one_stage.hpp"
#include "blipmeta/stage_one.hpp"
#include "blipmeta/stage_two.hpp"

namespace blipmeta {

namespace {

using nlohmann::json;
constexpr double kNaNValue = std::numeric_limits<double>::quiet_NaN();

ReplicateOutcome finish(const ModelSpec& spec, const Scenario& scenario, const PooledPosterior& post,
                        const StudyOptions& options, bool selection, const Eigen::MatrixXd& cohort) {
  ReplicateOutcome out;
  std::optional<std::vector<int>> chosen;
  if (selection) chosen = select_interactions(post, options.selection_level);
  out.psi_hat = point_estimates(post, options.use_median, chosen);
  out.selected.assign(out.psi_hat.size(), 1);
  if (chosen) {
    for (std::size_t t = 0; t < out.selected.size(); ++t) {
      if (is_main_effect_label(post.psi_labels[t])) continue;
      out.selected[t] = std::find(chosen->begin(), chosen->end(), static_cast<int>(t)) != chosen->end();
    }
  }
  const RuleEvaluation eval = evaluate_rule_on(Rule::from_spec(spec, out.psi_hat), scenario, cohort);
  out.dvf = eval.dvf;
  out.value_estimate = eval.value_estimate;
  out.value_true = eval.value_true;
  out.max_rhat = 1.0;
  for (int col = 0; col < static_cast<int>(post.names.size()); ++col) {
    const double r = post.rank_rhat(col);
    if (std::isfinite(r) && r > out.max_rhat) {
      out.max_rhat = r;
      out.worst_parameter = post.names[static_cast<std::size_t>(col)];
    }
  }
  out.ok = true;
  return out;
}

void run_replicate(const RunConfig& config, const ModelSpec& spec, const Scenario& scenario,
                   bool selection, const Eigen::MatrixXd& cohort, int r,
                   std::vector<ReplicateOutcome>& slots, std::vector<Propensity>& propensities) {
  const int methods = config.study.one_stage ? 2 : 1;
  SamplerControl control = config.mcmc;
  control.seed = derive_seed(config.mcmc.seed, {static_cast<std::uint64_t>(r)});
  control.parallel = false;
  control.store_site_effects = false;
  const char* names[] = {"two_stage", "one_stage"};
  for (int m = 0; m < methods; ++m) {
    slots[static_cast<std::size_t>(m)].replicate = r;
    slots[static_cast<std::size_t>(m)].method = names[m];
  }
  try {
    const SimulatedStudy sim = simulate_study(scenario, static_cast<std::uint64_t>(r));
    propensities = sim.propensities;
    std::vector<SiteSummary> summaries;
    for (const auto& site : sim.sites) summaries.push_back(analyze_site(spec, site).summary);
    const PooledPosterior pooled = run_mcmc(assemble_likelihood(std::move(summaries)), config.priors, control);
    slots[0] = finish(spec, scenario, pooled, config.study, selection, cohort);
    slots[0].replicate = r;
    slots[0].method = names[0];
    if (methods == 2) {
      OneStageModel model{spec, sim.sites, config.priors, 1.0, std::nullopt};
      const PooledPosterior joint = run_onestage(model, control);
      slots[1] = finish(spec, scenario, joint, config.study, selection, cohort);
      slots[1].replicate = r;
      slots[1].method = names[1];
    }
  } catch (const std::exception& e) {
    for (int m = 0; m < methods; ++m) {
      if (!slots[static_cast<std::size_t>(m)].ok) slots[static_cast<std::size_t>(m)].error = e.what();
    }
  }
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string cell(double v) { return std::isfinite(v) ? format_double(v) : "NA"; }

}  // namespace

bool correctly_selected(const StudyResult& study, const ReplicateOutcome& outcome) {
  for (std::size_t t = 0; t < study.psi_labels.size(); ++t) {
    if (is_main_effect_label(study.psi_labels[t])) continue;
    if (study.truth[static_cast<Eigen::Index>(t)] != 0.0 && !outcome.selected[t]) return false;
  }
  return true;
}

std::vector<MethodAggregate> aggregate(const StudyResult& study) {
  std::vector<std::string> methods;
  for (const auto& o : study.outcomes) {
    if (std::find(methods.begin(), methods.end(), o.method) == methods.end()) methods.push_back(o.method);
  }
  std::vector<MethodAggregate> rows;
  const std::size_t p = study.psi_labels.size();
  for (const auto& method : methods) {
    for (const std::string set : {"full", "selected"}) {
      if (set == "selected" && !study.selection) continue;
      std::vector<const ReplicateOutcome*> use;
      for (const auto& o : study.outcomes) {
        if (o.ok && o.method == method && (set == "full" || correctly_selected(study, o))) use.push_back(&o);
      }
      MethodAggregate agg;
      agg.method = method;
      agg.set = set;
      agg.count = static_cast<int>(use.size());
      const double n = static_cast<double>(use.size());
      for (std::size_t t = 0; t < p; ++t) {
        std::vector<double> values;
        double picked = 0.0;
        for (const auto* o : use) {
          values.push_back(o->psi_hat[t]);
          picked += o->selected[t];
        }
        double mean = kNaNValue;
        if (!values.empty()) {
          mean = 0.0;
          for (double v : values) mean += v;
          mean /= n;
        }
        const double truth = study.truth[static_cast<Eigen::Index>(t)];
        agg.mean.push_back(mean);
        agg.bias.push_back(mean - truth);
        agg.relative_bias.push_back(truth != 0.0 ? (mean - truth) / truth : kNaNValue);
        agg.sd.push_back(sample_sd(values));
        agg.selection.push_back(use.empty() ? kNaNValue : picked / n);
      }
      std::vector<double> dvf;
      int zero = 0;
      for (const auto* o : use) {
        dvf.push_back(o->dvf);
        zero += std::abs(o->dvf) < 1e-12;
      }
      agg.dvf_mean = kNaNValue;
      if (!dvf.empty()) {
        agg.dvf_mean = 0.0;
        for (double v : dvf) agg.dvf_mean += v;
        agg.dvf_mean /= n;
        agg.dvf_zero_fraction = zero / n;
      }
      agg.dvf_sd = sample_sd(dvf);
      rows.push_back(std::move(agg));
    }
  }
  return rows;
}

StudyResult run_study(const RunConfig& config, const ProgressFn& progress) {
  if (!config.scenario) throw Error(ErrorCode::invalid_argument, "run-study needs a [scenario] block");
  const Scenario& scenario = *config.scenario;
  const ModelSpec spec = config.resolve_model();
  const TrueParameters truth = true_parameters(scenario);

  StudyResult study;
  study.scenario = scenario;
  for (int t = 0; t < spec.psi_count(); ++t) study.psi_labels.push_back(spec.psi_label(t));
  study.truth = truth.psi;
  study.selection = config.priors.horseshoe_interactions;
  for (const auto& [label, prior] : config.priors.overrides) {
    if (prior.kind == MeanPriorKind::horseshoe) study.selection = true;
  }

  const int replicates = config.study.replicates;
  const int methods = config.study.one_stage ? 2 : 1;
  const Eigen::MatrixXd cohort = draw_cohort(
      scenario, config.study.cohort_size,
      derive_seed(scenario.seed, {static_cast<std::uint64_t>(StreamPurpose::cohort)}));

  study.outcomes.resize(static_cast<std::size_t>(replicates * methods));
  study.propensities.resize(static_cast<std::size_t>(replicates));
  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (int r = next++; r < replicates; r = next++) {
      std::vector<ReplicateOutcome> slots(static_cast<std::size_t>(methods));
      run_replicate(config, spec, scenario, study.selection, cohort, r, slots,
                    study.propensities[static_cast<std::size_t>(r)]);
      for (int m = 0; m < methods; ++m) {
        study.outcomes[static_cast<std::size_t>(r * methods + m)] = std::move(slots[static_cast<std::size_t>(m)]);
      }
      const int finished = ++done;
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(finished, replicates);
      }
    }
  };
  int threads = config.study.threads > 0 ? config.study.threads
                                         : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, replicates);
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (int r = 0; r < replicates; ++r) {
    bool failed = false;
    for (int m = 0; m < methods; ++m) failed |= !study.outcomes[static_cast<std::size_t>(r * methods + m)].ok;
    study.failures += failed;
  }
  if (study.failures > config.study.max_failure_rate * replicates) {
    std::string first;
    for (const auto& o : study.outcomes) {
      if (!o.ok) {
        first = o.error;
        break;
      }
    }
    throw Error(ErrorCode::study_aborted, std::to_string(study.failures) + " of " +
                                              std::to_string(replicates) +
                                              " replicates failed; first failure: " + first);
  }
  return study;
}

std::string metrics_csv(const StudyResult& study) {
  std::ostringstream out;
  out << "scenario,method,set,replicate,parameter,statistic,value\n";
  const std::string& name = study.scenario.name;
  auto row = [&](const std::string& method, const std::string& set, const std::string& rep,
                 const std::string& parameter, const std::string& statistic, const std::string& value) {
    out << name << ',' << method << ',' << set << ',' << rep << ',' << parameter << ',' << statistic << ','
        << value << '\n';
  };
  for (const auto& o : study.outcomes) {
    const std::string rep = std::to_string(o.replicate);
    if (!o.ok) {
      row(o.method, "full", rep, "replicate", "failed", "1");
      continue;
    }
    for (std::size_t t = 0; t < study.psi_labels.size(); ++t) {
      row(o.method, "full", rep, study.psi_labels[t], "estimate", cell(o.psi_hat[t]));
      if (study.selection && !is_main_effect_label(study.psi_labels[t])) {
        row(o.method, "full", rep, study.psi_labels[t], "selected", std::to_string(o.selected[t]));
      }
    }
    row(o.method, "full", rep, "dvf", "value", cell(o.dvf));
    row(o.method, "full", rep, "max_rhat", "value", cell(o.max_rhat));
  }
  for (const auto& agg : aggregate(study)) {
    for (std::size_t t = 0; t < study.psi_labels.size(); ++t) {
      const auto& label = study.psi_labels[t];
      row(agg.method, agg.set, "all", label, "truth", cell(study.truth[static_cast<Eigen::Index>(t)]));
      row(agg.method, agg.set, "all", label, "mean", cell(agg.mean[t]));
      row(agg.method, agg.set, "all", label, "bias", cell(agg.bias[t]));
      row(agg.method, agg.set, "all", label, "relative_bias", cell(agg.relative_bias[t]));
      row(agg.method, agg.set, "all", label, "sd", cell(agg.sd[t]));
      if (study.selection && !is_main_effect_label(label)) {
        row(agg.method, agg.set, "all", label, "selection_proportion", cell(agg.selection[t]));
      }
    }
    row(agg.method, agg.set, "all", "dvf", "mean", cell(agg.dvf_mean));
    row(agg.method, agg.set, "all", "dvf", "sd", cell(agg.dvf_sd));
    row(agg.method, agg.set, "all", "dvf", "zero_fraction", cell(agg.dvf_zero_fraction));
    row(agg.method, agg.set, "all", "replicates", "count", std::to_string(agg.count));
  }
  row("all", "full", "all", "replicates", "failed", std::to_string(study.failures));
  return out.str();
}

std::string report_json(const std::vector<std::string>& metrics_documents) {
  json report = json::object();
  for (const auto& document : metrics_documents) {
    std::istringstream in(document);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (header) {
        header = false;
        if (line != "scenario,method,set,replicate,parameter,statistic,value") {
          throw Error(ErrorCode::parse_error, "not a metrics CSV: unexpected header '" + line + "'");
        }
        continue;
      }
      std::vector<std::string> f;
      std::istringstream fields(line);
      for (std::string part; std::getline(fields, part, ',');) f.push_back(part);
      if (f.size() != 7) throw Error(ErrorCode::parse_error, "metrics row needs 7 fields: '" + line + "'");
      if (f[3] != "all") continue;
      json value = nullptr;
      if (f[6] != "NA") {
        try {
          value = std::stod(f[6]);
        } catch (const std::exception&) {
          throw Error(ErrorCode::parse_error, "bad metrics value '" + f[6] + "'");
        }
      }
      report[f[0]][f[1]][f[2]][f[4]][f[5]] = value;
    }
  }
  return report.dump(2) + "\n";
}

std::string run_manifest(const std::string& command, const json& config_echo, const json& extra) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = config_echo;
  manifest["versions"] = {{"blipmeta", kToolVersion},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                        std::to_string(EIGEN_MINOR_VERSION)},
                          {"boost", BOOST_LIB_VERSION},
                          {"protocol", kProtocolVersion}};
  for (const auto& item : extra.items()) manifest[item.key()] = item.value();
  return manifest.dump(2) + "\n";
}

std::string study_manifest(const RunConfig& config, const StudyResult& study) {
  json seeds = {{"scenario", study.scenario.seed}, {"mcmc", config.mcmc.seed}};
  json draws = json::array();
  for (std::size_t r = 0; r < study.propensities.size(); ++r) {
    json sites = json::array();
    for (const auto& p : study.propensities[r]) sites.push_back({p.alpha0, p.alpha1, p.alpha2});
    draws.push_back(sites);
  }
  json failures = json::array();
  for (const auto& o : study.outcomes) {
    if (!o.ok) failures.push_back({{"replicate", o.replicate}, {"method", o.method}, {"error", o.error}});
  }
  json slow = json::array();
  for (const auto& o : study.outcomes) {
    if (o.ok && o.max_rhat > 1.05) {
      slow.push_back({{"replicate", o.replicate}, {"method", o.method}, {"parameter", o.worst_parameter},
                      {"rhat", o.max_rhat}});
    }
  }
  return run_manifest("run-study", config.document,
                      {{"seeds", seeds},
                       {"rhat_above_1.05", slow},
                       {"scenario", scenario_to_json(study.scenario)},
                       {"propensity_draws", draws},
                       {"failures", failures}});
}

}  // namespace blipmeta
