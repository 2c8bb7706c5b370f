#include "blipmeta/config.hpp"

#include <algorithm>
#include <sstream>

#include "blipmeta/csv.hpp"
#include "blipmeta/error.hpp"
#include "toml.hpp"

namespace blipmeta {

namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& block, const char* key, T fallback) {
  if (!block.contains(key)) return fallback;
  try {
    return block.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown_keys(const json& block, std::initializer_list<const char*> known, const char* where) {
  for (const auto& item : block.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; })) {
      throw Error(ErrorCode::invalid_argument,
                  std::string("unknown key '") + item.key() + "' in [" + where + "]");
    }
  }
}

std::vector<Term> parse_terms(const json& block, const char* key,
                              const std::vector<std::string>& indicators) {
  std::vector<Term> terms;
  for (const auto& name : get_or<std::vector<std::string>>(block, key, {})) {
    if (name == "1") {
      terms.push_back(Term::intercept());
    } else if (std::find(indicators.begin(), indicators.end(), name) != indicators.end()) {
      terms.push_back(Term::indicator(name));
    } else {
      terms.push_back(Term::numeric(name));
    }
  }
  return terms;
}

json toml_to_json(std::string_view text) {
  try {
    const toml::table table = toml::parse(text);
    std::ostringstream out;
    out << toml::json_formatter{table};
    return json::parse(out.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream where;
    where << e.source().begin;
    throw Error(ErrorCode::parse_error, std::string(e.description()) + " at " + where.str());
  }
}

MeanPrior mean_prior_from_json(const json& block) {
  reject_unknown_keys(block, {"label", "kind", "variance", "sign"}, "priors.override");
  const auto kind = get_or<std::string>(block, "kind", "normal");
  const double variance = get_or(block, "variance", 1e4);
  if (kind == "flat") return MeanPrior::flat();
  if (kind == "normal") return MeanPrior::normal(variance);
  if (kind == "truncated_normal") return MeanPrior::truncated(variance, get_or(block, "sign", 1));
  if (kind == "horseshoe") return MeanPrior::horseshoe();
  throw Error(ErrorCode::invalid_argument, "unknown prior kind '" + kind + "'");
}

SamplerControl mcmc_from_json(const json& block) {
  reject_unknown_keys(block, {"chains", "warmup", "kept", "seed", "store_site_effects"}, "mcmc");
  SamplerControl control;
  control.n_chains = get_or(block, "chains", control.n_chains);
  control.n_warmup = get_or(block, "warmup", control.n_warmup);
  control.n_kept = get_or(block, "kept", control.n_kept);
  control.seed = get_or<std::uint64_t>(block, "seed", control.seed);
  control.store_site_effects = get_or(block, "store_site_effects", control.store_site_effects);
  if (control.n_chains < 1 || control.n_warmup < 0 || control.n_kept < 4) {
    throw Error(ErrorCode::invalid_argument, "mcmc needs chains >= 1, warmup >= 0 and kept >= 4");
  }
  return control;
}

StudyOptions study_from_json(const json& block) {
  reject_unknown_keys(block,
                      {"replicates", "cohort_size", "one_stage", "use_median", "selection_level",
                       "threads", "max_failure_rate", "full_scale"},
                      "study");
  StudyOptions study;
  study.replicates = get_or(block, "replicates", study.replicates);
  if (get_or(block, "full_scale", false)) study.replicates = 2000;
  study.cohort_size = get_or(block, "cohort_size", study.cohort_size);
  study.one_stage = get_or(block, "one_stage", study.one_stage);
  study.use_median = get_or(block, "use_median", study.use_median);
  study.selection_level = get_or(block, "selection_level", study.selection_level);
  study.threads = get_or(block, "threads", study.threads);
  study.max_failure_rate = get_or(block, "max_failure_rate", study.max_failure_rate);
  if (study.replicates < 1 || study.cohort_size < 1 || !(study.selection_level > 0.0) ||
      !(study.selection_level < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "invalid [study] block");
  }
  return study;
}

}  // namespace

ModelSpec model_from_json(const json& block) {
  reject_unknown_keys(block,
                      {"treatment", "treatment_free", "blip_linear", "blip_quadratic", "indicators",
                       "treatment_column", "outcome_column"},
                      "model");
  const auto kind_text = get_or<std::string>(block, "treatment", "binary");
  TreatmentKind kind;
  if (kind_text == "binary") {
    kind = TreatmentKind::binary;
  } else if (kind_text == "continuous" || kind_text == "continuous_quadratic") {
    kind = TreatmentKind::continuous_quadratic;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown treatment kind '" + kind_text + "'");
  }
  const auto indicators = get_or<std::vector<std::string>>(block, "indicators", {});
  return ModelSpec(kind, parse_terms(block, "treatment_free", indicators),
                   parse_terms(block, "blip_linear", indicators),
                   parse_terms(block, "blip_quadratic", indicators),
                   get_or<std::string>(block, "treatment_column", "a"),
                   get_or<std::string>(block, "outcome_column", "y"));
}

json model_to_json(const ModelSpec& spec) {
  std::vector<std::string> indicators;
  auto names = [&](const std::vector<Term>& terms) {
    std::vector<std::string> out;
    for (const auto& term : terms) {
      out.push_back(term.label());
      if (term.kind == TermKind::indicator &&
          std::find(indicators.begin(), indicators.end(), term.column) == indicators.end()) {
        indicators.push_back(term.column);
      }
    }
    return out;
  };
  json block;
  block["treatment"] = spec.treatment_kind() == TreatmentKind::binary ? "binary" : "continuous";
  block["treatment_free"] = names(spec.treatment_free());
  block["blip_linear"] = names(spec.blip_linear());
  block["blip_quadratic"] = names(spec.blip_quadratic());
  block["indicators"] = indicators;
  block["treatment_column"] = spec.treatment_column();
  block["outcome_column"] = spec.outcome_column();
  return block;
}

Scenario scenario_from_json(const json& block) {
  reject_unknown_keys(block,
                      {"name", "setting", "sites", "n", "confounding", "heterogeneity", "i2",
                       "sigma_eps2", "covariates", "beta", "psi", "dose_lo", "dose_hi", "seed"},
                      "scenario");
  Scenario s;
  s.name = get_or(block, "name", s.name);
  s.setting = parse_setting(get_or<std::string>(block, "setting", "binary"));
  s.sites = get_or(block, "sites", s.sites);
  s.n_mean = get_or(block, "n", s.n_mean);
  s.confounding = get_or(block, "confounding", s.confounding);
  s.heterogeneity = parse_heterogeneity(get_or<std::string>(block, "heterogeneity", "common_effect"));
  s.i2 = get_or(block, "i2", s.i2);
  s.sigma_eps2 = get_or(block, "sigma_eps2", s.sigma_eps2);
  s.covariates = get_or(block, "covariates", s.covariates);
  s.beta = get_or<std::vector<double>>(block, "beta", {});
  s.psi = get_or<std::vector<double>>(block, "psi", {});
  s.dose_lo = get_or(block, "dose_lo", s.dose_lo);
  s.dose_hi = get_or(block, "dose_hi", s.dose_hi);
  s.seed = get_or<std::uint64_t>(block, "seed", s.seed);
  if (s.sites < 1 || s.n_mean < 10 || s.confounding < 1 || s.confounding > 6) {
    throw Error(ErrorCode::invalid_argument, "invalid [scenario] block");
  }
  heterogeneity_variance(s.i2, s.sigma_eps2);
  return s;
}

json scenario_to_json(const Scenario& s) {
  return {{"name", s.name},
          {"setting", std::string(to_string(s.setting))},
          {"sites", s.sites},
          {"n", s.n_mean},
          {"confounding", s.confounding},
          {"heterogeneity", std::string(to_string(s.heterogeneity))},
          {"i2", s.i2},
          {"sigma_eps2", s.sigma_eps2},
          {"covariates", s.covariates},
          {"beta", s.beta},
          {"psi", s.psi},
          {"dose_lo", s.dose_lo},
          {"dose_hi", s.dose_hi},
          {"seed", s.seed}};
}

PriorConfig priors_from_json(const json& block) {
  reject_unknown_keys(block,
                      {"mean_variance", "variance_prior_scale", "horseshoe_interactions",
                       "fixed_between_sd", "override"},
                      "priors");
  PriorConfig priors;
  priors.mean_variance = get_or(block, "mean_variance", priors.mean_variance);
  priors.variance_prior_scale = get_or(block, "variance_prior_scale", priors.variance_prior_scale);
  priors.horseshoe_interactions = get_or(block, "horseshoe_interactions", false);
  if (block.contains("fixed_between_sd")) priors.fixed_between_sd = block.at("fixed_between_sd").get<double>();
  if (block.contains("override")) {
    for (const auto& item : block.at("override")) {
      priors.overrides[get_or<std::string>(item, "label", "")] = mean_prior_from_json(item);
    }
  }
  if (!(priors.mean_variance > 0.0) || !(priors.variance_prior_scale > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "prior scales must be positive");
  }
  return priors;
}

ModelSpec RunConfig::resolve_model() const {
  if (model) return *model;
  if (scenario) return scenario_model(*scenario);
  throw Error(ErrorCode::invalid_argument, "config has neither a [model] nor a [scenario] block");
}

RunConfig parse_config(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  json doc;
  if (first != std::string_view::npos && text[first] == '{') {
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, e.what());
    }
  } else {
    doc = toml_to_json(text);
  }
  reject_unknown_keys(doc, {"model", "priors", "mcmc", "scenario", "study", "report_format"}, "root");
  RunConfig config;
  config.document = doc;
  if (doc.contains("model")) config.model = model_from_json(doc.at("model"));
  if (doc.contains("priors")) config.priors = priors_from_json(doc.at("priors"));
  if (doc.contains("mcmc")) config.mcmc = mcmc_from_json(doc.at("mcmc"));
  if (doc.contains("scenario")) config.scenario = scenario_from_json(doc.at("scenario"));
  if (doc.contains("study")) config.study = study_from_json(doc.at("study"));
  const auto format = get_or<std::string>(doc, "report_format", "json");
  if (format == "csv") {
    config.report_format = ReportFormat::csv;
  } else if (format != "json") {
    throw Error(ErrorCode::invalid_argument, "report_format must be json or csv");
  }
  return config;
}

RunConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

}  // namespace blipmeta
