#include <algorithm>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blipmeta/config.hpp"
#include "blipmeta/csv.hpp"
#include "blipmeta/error.hpp"
#include "blipmeta/federation.hpp"
#include "blipmeta/itr.hpp"
#include "blipmeta/one_stage.hpp"
#include "blipmeta/simgen.hpp"
#include "blipmeta/stage_one.hpp"
#include "blipmeta/stage_two.hpp"
#include "blipmeta/study.hpp"
#include "blipmeta/transport.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace blipmeta;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

RunConfig load(const Common& common) {
  RunConfig config = common.config.empty() ? RunConfig{} : load_config(common.config);
  if (common.seed) {
    config.mcmc.seed = *common.seed;
    if (config.scenario) config.scenario->seed = *common.seed;
    config.document["seed_override"] = *common.seed;
  }
  return config;
}

void add_common(CLI::App* cmd, Common& common, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", common.config, "TOML or JSON config file");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", common.seed, "Override the configured seeds");
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_pooled(const PooledPosterior& post, const RunConfig& config, const std::string& prefix,
                  const std::string& command, const json& extra) {
  std::vector<int> selected;
  if (config.priors.horseshoe_interactions) selected = select_interactions(post, config.study.selection_level);
  ensure_parent(prefix);
  write_text_file(prefix + ".summary.json", posterior_summary_json(post, selected));
  write_text_file(prefix + ".draws.csv", posterior_draws_csv(post));
  write_text_file(prefix + ".manifest.json", run_manifest(command, config.document, extra));
  const double worst = max_rhat(post);
  if (worst > 1.05) std::cerr << "warning: max R-hat " << worst << " exceeds 1.05\n";
}

json summary_files_json(const std::vector<SiteSummary>& summaries) {
  json sites = json::array();
  for (const auto& s : summaries) sites.push_back({{"site_id", s.site_id}, {"n_obs", s.n_obs}});
  return sites;
}

std::vector<SiteSummary> read_summary_stream(std::istream& in, const std::string& fingerprint) {
  std::vector<SiteSummary> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto check = validate_summary(line, fingerprint);
    if (!check.accepted()) {
      throw Error(ErrorCode::protocol_error, std::string(to_string(check.code)) + ": " + check.detail);
    }
    out.push_back(std::move(*check.summary));
  }
  return out;
}

// Point estimates recorded in a pooled summary document.
std::vector<double> estimates_from_summary(const std::string& path, const ModelSpec& spec,
                                           const RunConfig& config) {
  const json doc = json::parse(read_text_file(path));
  const auto& selected = doc.at("selected");
  std::vector<double> psi;
  for (int t = 0; t < spec.psi_count(); ++t) {
    const std::string label = spec.psi_label(t);
    if (!doc.at("psi").contains(label)) {
      throw Error(ErrorCode::invalid_argument, "summary has no parameter '" + label + "'");
    }
    const auto& entry = doc.at("psi").at(label);
    double value = config.study.use_median ? entry.at("median").get<double>() : entry.at("rb_mean").get<double>();
    if (config.priors.horseshoe_interactions && !is_main_effect_label(label) &&
        std::find(selected.begin(), selected.end(), label) == selected.end()) {
      value = 0.0;
    }
    psi.push_back(value);
  }
  return psi;
}

std::pair<std::string, int> split_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::invalid_argument, "endpoint must be HOST:PORT");
  return {endpoint.substr(0, colon), std::stoi(endpoint.substr(colon + 1))};
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& suffix) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multisite estimation of individualized treatment rules from site summaries"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  // simulate
  Common sim_common;
  std::string sim_out;
  std::uint64_t sim_replicate = 0;
  auto* sim = app.add_subcommand("simulate", "Write per-site CSVs for one replicate of a scenario");
  add_common(sim, sim_common, true);
  sim->add_option("-o,--out-dir", sim_out, "Output directory")->required();
  sim->add_option("--replicate", sim_replicate, "Replicate index");

  // fit-site
  Common fit_common;
  std::string fit_data, fit_site, fit_out;
  auto* fit = app.add_subcommand("fit-site", "Fit one site and write its summary");
  add_common(fit, fit_common, true);
  fit->add_option("-d,--data", fit_data, "Site CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--site-id", fit_site, "Site identifier (default: file stem)");
  fit->add_option("-o,--out", fit_out, "Summary JSON path")->required();

  // pool
  Common pool_common;
  std::string pool_in, pool_prefix, pool_fingerprint;
  auto* pool = app.add_subcommand("pool", "Pool site summaries with the hierarchical model");
  add_common(pool, pool_common, false);
  pool->add_option("-i,--summaries", pool_in, "Directory of *.summary.json, or - for stdin")->required();
  pool->add_option("-o,--out-prefix", pool_prefix, "Output path prefix")->required();
  pool->add_option("--fingerprint", pool_fingerprint, "Expected model fingerprint (default: config model)");

  // fit-pooled
  Common joint_common;
  std::string joint_dir, joint_prefix;
  auto* joint = app.add_subcommand("fit-pooled", "One-stage fit on every site's individual data");
  add_common(joint, joint_common, true);
  joint->add_option("-d,--data-dir", joint_dir, "Directory of site CSVs")->required()->check(CLI::ExistingDirectory);
  joint->add_option("-o,--out-prefix", joint_prefix, "Output path prefix")->required();

  // evaluate
  Common eval_common;
  std::string eval_summary, eval_out;
  int eval_cohort = 100000;
  auto* eval = app.add_subcommand("evaluate", "Value of the pooled rule against the scenario truth");
  add_common(eval, eval_common, true);
  eval->add_option("-s,--summary", eval_summary, "Pooled summary JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "Evaluation JSON path")->required();
  eval->add_option("--cohort-size", eval_cohort, "Evaluation cohort size");

  // recommend
  Common rec_common;
  std::string rec_summary, rec_covariates, rec_out;
  double rec_lo = -100.0, rec_hi = 100.0;
  auto* rec = app.add_subcommand("recommend", "Per-patient decisions or doses");
  add_common(rec, rec_common, true);
  rec->add_option("-s,--summary", rec_summary, "Pooled summary JSON")->required()->check(CLI::ExistingFile);
  rec->add_option("-x,--covariates", rec_covariates, "Covariate CSV")->required()->check(CLI::ExistingFile);
  rec->add_option("-o,--out", rec_out, "Output CSV (default stdout)");
  rec->add_option("--dose-lo", rec_lo, "Lower dose bound");
  rec->add_option("--dose-hi", rec_hi, "Upper dose bound");

  // serve-site
  std::string serve_endpoint, serve_fingerprint;
  std::vector<std::string> serve_files;
  double serve_timeout = 0.0;
  auto* serve = app.add_subcommand("serve-site", "Push site summaries to a coordinator");
  serve->add_option("--connect", serve_endpoint, "Coordinator HOST:PORT")->required();
  serve->add_option("--fingerprint", serve_fingerprint, "Model fingerprint (default: from the summary)");
  serve->add_option("--timeout", serve_timeout, "Seconds (default BLIPMETA_TIMEOUT_SECS or 30)");
  serve->add_option("summaries", serve_files, "Summary JSON files")->required()->check(CLI::ExistingFile);

  // collect
  Common col_common;
  CollectOptions col_opts;
  std::string col_prefix, col_archive, col_port_file;
  double col_timeout = 0.0;
  auto* col = app.add_subcommand("collect", "Receive site summaries over TCP and pool them");
  add_common(col, col_common, false);
  col->add_option("--expect", col_opts.expect, "Number of sites")->required();
  col->add_option("--fingerprint", col_opts.fingerprint, "Model fingerprint")->required();
  col->add_option("--host", col_opts.host, "Listen address");
  col->add_option("--port", col_opts.port, "Listen port (0 picks one)");
  col->add_option("--port-file", col_port_file, "Write the bound port here");
  col->add_option("--timeout", col_timeout, "Idle seconds (default BLIPMETA_TIMEOUT_SECS or 30)");
  col->add_flag("--allow-partial", col_opts.allow_partial, "Pool whatever arrived before the timeout");
  col->add_option("--archive", col_archive, "Keep received summaries in this directory");
  col->add_option("-o,--out-prefix", col_prefix, "Pool and write outputs with this prefix");

  // run-study
  Common study_common;
  std::string study_out;
  std::optional<int> study_reps, study_threads;
  bool study_full = false, study_quiet = false;
  auto* study = app.add_subcommand("run-study", "Replicated simulation study");
  add_common(study, study_common, true);
  study->add_option("-o,--out-dir", study_out, "Output directory")->required();
  study->add_option("--replicates", study_reps, "Override replicate count");
  study->add_option("--threads", study_threads, "Worker threads");
  study->add_flag("--full-scale", study_full, "Use 2000 replicates");
  study->add_flag("-q,--quiet", study_quiet, "No progress output");

  // report
  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Merge metrics CSVs into one JSON report");
  report->add_option("metrics", report_inputs, "Metrics CSV files")->check(CLI::ExistingFile);
  report->add_option("-o,--out", report_out, "Report path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      RunConfig config = load(sim_common);
      if (!config.scenario) throw Error(ErrorCode::invalid_argument, "simulate needs a [scenario] block");
      const ModelSpec spec = config.resolve_model();
      const SimulatedStudy study_data = simulate_study(*config.scenario, sim_replicate);
      fs::create_directories(sim_out);
      json sites = json::array();
      for (std::size_t i = 0; i < study_data.sites.size(); ++i) {
        const auto& site = study_data.sites[i];
        write_site_csv((fs::path(sim_out) / (site.site_id + ".csv")).string(), spec, site);
        const auto& p = study_data.propensities[i];
        sites.push_back({{"site_id", site.site_id}, {"n", site.rows()}, {"alpha", {p.alpha0, p.alpha1, p.alpha2}}});
      }
      write_text_file((fs::path(sim_out) / "manifest.json").string(),
                      run_manifest("simulate", config.document,
                                   {{"replicate", sim_replicate},
                                    {"scenario", scenario_to_json(*config.scenario)},
                                    {"fingerprint", spec.fingerprint()},
                                    {"sites", sites}}));
    } else if (*fit) {
      RunConfig config = load(fit_common);
      const ModelSpec spec = config.resolve_model();
      const std::string id = fit_site.empty() ? fs::path(fit_data).stem().string() : fit_site;
      const SiteAnalysis analysis = analyze_site(spec, read_site_csv(fit_data, spec, id));
      ensure_parent(fit_out);
      write_text_file(fit_out, encode_summary(analysis.summary));
    } else if (*pool) {
      RunConfig config = load(pool_common);
      std::string fingerprint = pool_fingerprint;
      if (fingerprint.empty()) fingerprint = config.resolve_model().fingerprint();
      std::vector<SiteSummary> summaries =
          pool_in == "-" ? read_summary_stream(std::cin, fingerprint)
                         : load_summary_directory(pool_in, fingerprint);
      const PooledPosterior post = run_mcmc(assemble_likelihood(summaries), config.priors, config.mcmc);
      write_pooled(post, config, pool_prefix, "pool",
                   {{"fingerprint", fingerprint}, {"sites", summary_files_json(summaries)}});
    } else if (*joint) {
      RunConfig config = load(joint_common);
      OneStageModel model{config.resolve_model(), {}, config.priors, 1.0, std::nullopt};
      for (const auto& file : sorted_files(joint_dir, ".csv")) {
        model.datasets.push_back(read_site_csv(file, model.spec, fs::path(file).stem().string()));
      }
      if (model.datasets.empty()) throw Error(ErrorCode::invalid_argument, "no CSV files in " + joint_dir);
      const PooledPosterior post = run_onestage(model, config.mcmc);
      write_pooled(post, config, joint_prefix, "fit-pooled", {{"fingerprint", model.spec.fingerprint()}});
    } else if (*eval) {
      RunConfig config = load(eval_common);
      if (!config.scenario) throw Error(ErrorCode::invalid_argument, "evaluate needs a [scenario] block");
      const ModelSpec spec = config.resolve_model();
      const Rule rule = Rule::from_spec(spec, estimates_from_summary(eval_summary, spec, config));
      const std::uint64_t seed =
          derive_seed(config.scenario->seed, {static_cast<std::uint64_t>(StreamPurpose::cohort)});
      const RuleEvaluation result = evaluate_rule(rule, *config.scenario, eval_cohort, seed);
      const json doc = {{"value_estimate", result.value_estimate}, {"value_true", result.value_true},
                        {"dvf", result.dvf},                       {"cohort_size", result.cohort_size},
                        {"seed", result.seed},                     {"clipped_rows", result.clipped_rows},
                        {"not_concave_rows", result.not_concave_rows}};
      ensure_parent(eval_out);
      write_text_file(eval_out, doc.dump(2) + "\n");
    } else if (*rec) {
      RunConfig config = load(rec_common);
      const ModelSpec spec = config.resolve_model();
      const Rule rule = Rule::from_spec(spec, estimates_from_summary(rec_summary, spec, config));
      const NumericTable table = read_numeric_csv(rec_covariates);
      int clipped = 0, not_concave = 0;
      const Eigen::VectorXd a = apply_rule(rule, table.values, table.header, rec_lo, rec_hi, &clipped, &not_concave);
      const std::string column = spec.treatment_kind() == TreatmentKind::binary ? "treat" : "dose";
      const std::string text = format_numeric_csv({{column}, a});
      if (rec_out.empty()) {
        std::cout << text;
      } else {
        ensure_parent(rec_out);
        write_text_file(rec_out, text);
      }
      if (clipped || not_concave) {
        std::cerr << clipped << " doses clipped to the bounds, " << not_concave
                  << " rows without a concave blip\n";
      }
    } else if (*serve) {
      std::vector<SiteSummary> summaries;
      for (const auto& file : serve_files) summaries.push_back(decode_summary(read_text_file(file)));
      std::string fingerprint = serve_fingerprint;
      if (fingerprint.empty()) fingerprint = summaries.front().model_fingerprint;
      const auto [host, port] = split_endpoint(serve_endpoint);
      const auto timeout = serve_timeout > 0.0
                               ? std::chrono::milliseconds(static_cast<long long>(serve_timeout * 1000))
                               : default_timeout();
      int refused = 0;
      for (const auto& outcome : send_summaries(host, port, fingerprint, summaries, timeout)) {
        std::cout << outcome.site_id << ' ' << (outcome.accepted ? "ACK" : "NACK " + outcome.code) << '\n';
        refused += !outcome.accepted;
      }
      return refused ? 3 : 0;
    } else if (*col) {
      RunConfig config = load(col_common);
      if (col_timeout > 0.0) col_opts.timeout = std::chrono::milliseconds(static_cast<long long>(col_timeout * 1000));
      Collector collector(col_opts);
      if (!col_port_file.empty()) write_text_file(col_port_file, std::to_string(collector.port()) + "\n");
      std::cerr << "listening on " << col_opts.host << ':' << collector.port() << '\n';
      const CollectResult got = collector.run();
      for (const auto& r : got.rejections) std::cerr << "rejected: " << r << '\n';
      if (got.missing > 0) std::cerr << "warning: " << got.missing << " sites missing; pooling the rest\n";
      if (!col_archive.empty()) {
        fs::create_directories(col_archive);
        for (const auto& s : got.summaries) {
          write_text_file((fs::path(col_archive) / (s.site_id + ".summary.json")).string(), encode_summary(s));
        }
      }
      if (!col_prefix.empty()) {
        if (got.summaries.empty()) throw Error(ErrorCode::timeout, "no summaries arrived");
        const PooledPosterior post = run_mcmc(assemble_likelihood(got.summaries), config.priors, config.mcmc);
        write_pooled(post, config, col_prefix, "collect",
                     {{"fingerprint", col_opts.fingerprint},
                      {"sites", summary_files_json(got.summaries)},
                      {"missing", got.missing}});
      }
    } else if (*study) {
      RunConfig config = load(study_common);
      if (study_full) config.study.replicates = 2000;
      if (study_reps) config.study.replicates = *study_reps;
      if (study_threads) config.study.threads = *study_threads;
      config.document["effective_replicates"] = config.study.replicates;
      ProgressFn progress;
      if (!study_quiet) {
        progress = [](int done, int total) {
          if (done == total || done % 10 == 0) std::cerr << "replicate " << done << '/' << total << '\n';
        };
      }
      const StudyResult result = run_study(config, progress);
      fs::create_directories(study_out);
      write_text_file((fs::path(study_out) / "metrics.csv").string(), metrics_csv(result));
      write_text_file((fs::path(study_out) / "manifest.json").string(), study_manifest(config, result));
      if (result.failures) std::cerr << result.failures << " replicates failed (see manifest)\n";
    } else if (*report) {
      std::vector<std::string> docs;
      for (const auto& file : report_inputs) docs.push_back(read_text_file(file));
      const std::string text = report_json(docs);
      if (report_out.empty()) {
        std::cout << text;
      } else {
        ensure_parent(report_out);
        write_text_file(report_out, text);
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
