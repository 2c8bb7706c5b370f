#include "blipmeta/simgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "blipmeta/error.hpp"

namespace blipmeta {

namespace {

// Site groups share covariate laws: sites 3, 6, 9 / 1, 4, 7, 10 / 2, 5, 8.
enum class Group { a, b, c };

Group site_group(int site_id) {
  switch (site_id % 3) {
    case 0: return Group::a;
    case 1: return Group::b;
    default: return Group::c;
  }
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_site(const Scenario& scenario, int site_id) {
  if (site_id < 1 || site_id > scenario.sites) {
    throw Error(ErrorCode::invalid_argument, "site id " + std::to_string(site_id) + " outside 1.." +
                                                 std::to_string(scenario.sites));
  }
}

Eigen::MatrixXd term_matrix(const std::vector<Term>& terms, const std::vector<std::string>& names,
                            const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    if (terms[k].is_intercept()) {
      out.col(kk).setOnes();
      continue;
    }
    const auto it = std::find(names.begin(), names.end(), terms[k].column);
    if (it == names.end()) throw Error(ErrorCode::missing_column, "no column '" + terms[k].column + "'");
    out.col(kk) = x.col(it - names.begin());
  }
  return out;
}

}  // namespace

std::string_view to_string(Setting setting) {
  switch (setting) {
    case Setting::binary: return "binary";
    case Setting::continuous: return "continuous";
    case Setting::sparse: return "sparse";
    case Setting::many_covariates: return "many_covariates";
  }
  return "binary";
}

std::string_view to_string(Heterogeneity heterogeneity) {
  switch (heterogeneity) {
    case Heterogeneity::common_effect: return "common_effect";
    case Heterogeneity::common_rule: return "common_rule";
    case Heterogeneity::varying_effects: return "varying_effects";
  }
  return "common_effect";
}

Setting parse_setting(std::string_view text) {
  for (auto s : {Setting::binary, Setting::continuous, Setting::sparse, Setting::many_covariates}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorCode::invalid_argument, "unknown setting '" + std::string(text) + "'");
}

Heterogeneity parse_heterogeneity(std::string_view text) {
  for (auto h : {Heterogeneity::common_effect, Heterogeneity::common_rule,
                 Heterogeneity::varying_effects}) {
    if (to_string(h) == text) return h;
  }
  throw Error(ErrorCode::invalid_argument, "unknown heterogeneity '" + std::string(text) + "'");
}

double heterogeneity_variance(double i2, double sigma_eps2) {
  if (!(i2 >= 0.0) || !(i2 < 1.0)) {
    throw Error(ErrorCode::heterogeneity_out_of_range, "I^2 must lie in [0, 1)");
  }
  return i2 * sigma_eps2 / (1.0 - i2);
}

std::vector<std::string> covariate_names(const Scenario& scenario) {
  switch (scenario.setting) {
    case Setting::binary:
    case Setting::continuous: return {"x1", "x2"};
    case Setting::sparse: return {"x1", "x22", "x23"};
    case Setting::many_covariates: {
      std::vector<std::string> names;
      for (int j = 1; j <= scenario.covariates; ++j) names.push_back("x" + std::to_string(j));
      return names;
    }
  }
  return {};
}

ModelSpec scenario_model(const Scenario& scenario) {
  switch (scenario.setting) {
    case Setting::binary:
      return ModelSpec(TreatmentKind::binary,
                       {Term::intercept(), Term::numeric("x1"), Term::indicator("x2")},
                       {Term::intercept(), Term::numeric("x1")});
    case Setting::continuous:
      return ModelSpec(TreatmentKind::continuous_quadratic,
                       {Term::intercept(), Term::numeric("x1"), Term::indicator("x2")},
                       {Term::intercept(), Term::numeric("x1")}, {Term::intercept()});
    case Setting::sparse: {
      std::vector<Term> terms{Term::intercept(), Term::indicator("x1"), Term::indicator("x22"),
                              Term::indicator("x23")};
      return ModelSpec(TreatmentKind::binary, terms, terms);
    }
    case Setting::many_covariates: {
      if (scenario.covariates < 3) {
        throw Error(ErrorCode::invalid_argument, "many-covariates setting needs at least 3 covariates");
      }
      std::vector<Term> terms{Term::intercept()};
      for (const auto& name : covariate_names(scenario)) {
        terms.push_back(name == "x2" ? Term::indicator(name) : Term::numeric(name));
      }
      return ModelSpec(TreatmentKind::binary, terms, terms);
    }
  }
  throw Error(ErrorCode::invalid_argument, "unknown setting");
}

TrueParameters true_parameters(const Scenario& scenario) {
  TrueParameters truth;
  switch (scenario.setting) {
    case Setting::binary:
      truth.beta = Eigen::Vector3d(4, 1, 1);
      truth.psi = Eigen::Vector2d(2.5, -0.5);
      break;
    case Setting::continuous:
      truth.beta = Eigen::Vector3d(4, 1, 1);
      truth.psi = Eigen::Vector3d(1, 1, -2);  // a, a:x1, a2
      break;
    case Setting::sparse:
      truth.beta = Eigen::Vector4d(4, 1, 1, -1);
      truth.psi = Eigen::Vector4d(1, 1, -2.5, 2);
      break;
    case Setting::many_covariates: {
      const int p = scenario.covariates;
      truth.beta = Eigen::VectorXd::Ones(p + 1);
      truth.beta[0] = 4;
      truth.psi = Eigen::VectorXd::Zero(p + 1);
      truth.psi.head(4) << 2.5, -0.5, 2, -1;
      break;
    }
  }
  auto override_with = [](Eigen::VectorXd& target, const std::vector<double>& given, const char* what) {
    if (given.empty()) return;
    if (static_cast<Eigen::Index>(given.size()) != target.size()) {
      throw Error(ErrorCode::invalid_argument, std::string(what) + " has " + std::to_string(given.size()) +
                                                   " values, expected " + std::to_string(target.size()));
    }
    target = Eigen::Map<const Eigen::VectorXd>(given.data(), target.size());
  };
  override_with(truth.beta, scenario.beta, "beta");
  override_with(truth.psi, scenario.psi, "psi");
  return truth;
}

Propensity resolve_propensity(int confounding, int site_id, Rng& rng) {
  const bool odd = site_id % 2 == 1;
  switch (confounding) {
    case 1: return {0.1, 0.1, 0.1};
    case 2: return {0.01, 0.01, 0.01};
    case 3: {
      const double a0 = rng.uniform(0.06, 0.14);
      const double a1 = rng.uniform(0.06, 0.14);
      return {a0, a1, rng.uniform(0.06, 0.14)};
    }
    case 4: {
      const double a0 = rng.uniform(0.006, 0.014);
      const double a1 = rng.uniform(0.006, 0.014);
      return {a0, a1, rng.uniform(0.006, 0.014)};
    }
    case 5: {
      const double a0 = rng.uniform(0.3, 0.7);
      return odd ? Propensity{a0, 0.0, rng.uniform(0.3, 0.7)}
                 : Propensity{a0, rng.uniform(0.06, 0.14), 0.0};
    }
    case 6: {
      const double a0 = rng.uniform(0.03, 0.07);
      return odd ? Propensity{a0, 0.0, rng.uniform(0.03, 0.07)}
                 : Propensity{a0, rng.uniform(0.006, 0.014), 0.0};
    }
    default:
      throw Error(ErrorCode::invalid_argument, "confounding scenario must be 1-6");
  }
}

Eigen::MatrixXd gen_covariates(const Scenario& scenario, int site_id, int n, Rng& rng) {
  check_site(scenario, site_id);
  const Group group = site_group(site_id);
  const auto rows = static_cast<Eigen::Index>(n);

  auto x1_column = [&](Eigen::Ref<Eigen::VectorXd> col) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      switch (group) {
        case Group::a: col[r] = rng.normal(5.0, 1.0); break;
        case Group::b: col[r] = 6.0 * rng.beta(4.0, 4.0) + 2.0; break;
        case Group::c: col[r] = rng.uniform(2.0, 8.0); break;
      }
    }
  };
  auto x2_column = [&](Eigen::Ref<Eigen::VectorXd> col) {
    const double p = group == Group::a ? 0.5 : (group == Group::b ? 0.3 : 0.7);
    for (Eigen::Index r = 0; r < rows; ++r) col[r] = rng.bernoulli(p) ? 1.0 : 0.0;
  };

  switch (scenario.setting) {
    case Setting::binary:
    case Setting::continuous: {
      Eigen::MatrixXd x(rows, 2);
      x1_column(x.col(0));
      x2_column(x.col(1));
      return x;
    }
    case Setting::sparse: {
      Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, 3);
      std::array<double, 3> levels{};
      if (group == Group::a) levels = {0.0, 0.5, 0.5};
      if (group == Group::b) levels = {0.5, 0.0, 0.5};
      if (group == Group::c) levels = {1.0 / 3, 1.0 / 3, 1.0 / 3};
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (group == Group::a) x(r, 0) = 1.0;
        if (group == Group::c) x(r, 0) = rng.bernoulli(0.5) ? 1.0 : 0.0;
        const int level = rng.categorical(levels);
        if (level == 1) x(r, 1) = 1.0;
        if (level == 2) x(r, 2) = 1.0;
      }
      return x;
    }
    case Setting::many_covariates: {
      const int p = scenario.covariates;
      Eigen::MatrixXd x(rows, p);
      x1_column(x.col(0));
      x2_column(x.col(1));
      const double rate = group == Group::a ? 1.0 : (group == Group::b ? 1.7 : 0.7);
      for (Eigen::Index r = 0; r < rows; ++r) x(r, 2) = rng.exponential(rate);
      for (int j = 3; j < p; ++j) {
        for (Eigen::Index r = 0; r < rows; ++r) x(r, j) = rng.normal();
      }
      return x;
    }
  }
  return {};
}

double propensity_probability(const Propensity& propensity, double x1, double x2) {
  return logistic(propensity.alpha0 + propensity.alpha1 * x1 + propensity.alpha2 * x2);
}

Eigen::VectorXd gen_treatment(const Scenario& scenario, const Propensity& propensity,
                              const Eigen::MatrixXd& x, Rng& rng) {
  Eigen::VectorXd a(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    switch (scenario.setting) {
      case Setting::binary:
        a[r] = rng.bernoulli(propensity_probability(propensity, x(r, 0), x(r, 1))) ? 1.0 : 0.0;
        break;
      case Setting::continuous:
        a[r] = rng.normal(x(r, 0), 1.0);
        break;
      case Setting::sparse:
      case Setting::many_covariates:
        a[r] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        break;
    }
  }
  return a;
}

TrueParameters gen_site_parameters(const Scenario& scenario, const TrueParameters& truth,
                                   double sigma_b2, Rng& rng) {
  TrueParameters site = truth;
  if (scenario.heterogeneity == Heterogeneity::common_effect) return site;
  const double sd = std::sqrt(sigma_b2);
  for (Eigen::Index s = 0; s < site.beta.size(); ++s) site.beta[s] = rng.normal(truth.beta[s], sd);
  if (scenario.heterogeneity == Heterogeneity::varying_effects) {
    for (Eigen::Index t = 0; t < site.psi.size(); ++t) site.psi[t] = rng.normal(truth.psi[t], sd);
    return site;
  }
  if (scenario.setting != Setting::binary) {
    throw Error(ErrorCode::invalid_argument, "the common-rule structure is defined for the binary setting");
  }
  site.psi[1] = rng.normal(truth.psi[1], sd);
  site.psi[0] = -5.0 * site.psi[1];
  return site;
}

Eigen::VectorXd outcome_mean(const Scenario& scenario, const TrueParameters& theta,
                             const Eigen::MatrixXd& x, const Eigen::VectorXd& a) {
  const ModelSpec spec = scenario_model(scenario);
  const auto names = covariate_names(scenario);
  const Eigen::MatrixXd tf = term_matrix(spec.treatment_free(), names, x);
  const Eigen::MatrixXd lin = term_matrix(spec.blip_linear(), names, x);
  const auto q1 = static_cast<Eigen::Index>(spec.blip_linear().size());
  Eigen::VectorXd mean = tf * theta.beta;
  mean.array() += a.array() * (lin * theta.psi.head(q1)).array();
  if (!spec.blip_quadratic().empty()) {
    const Eigen::MatrixXd quad = term_matrix(spec.blip_quadratic(), names, x);
    mean.array() += a.array().square() * (quad * theta.psi.tail(theta.psi.size() - q1)).array();
  }
  return mean;
}

double true_blip(const Scenario& scenario, const Eigen::VectorXd& psi,
                 const Eigen::Ref<const Eigen::RowVectorXd>& x, double a) {
  const ModelSpec spec = scenario_model(scenario);
  const auto names = covariate_names(scenario);
  const std::vector<double> row(x.data(), x.data() + x.size());
  const Eigen::VectorXd lin = term_values(spec.blip_linear(), names, row);
  double blip = a * lin.dot(psi.head(lin.size()));
  if (!spec.blip_quadratic().empty()) {
    const Eigen::VectorXd quad = term_values(spec.blip_quadratic(), names, row);
    blip += a * a * quad.dot(psi.tail(quad.size()));
  }
  return blip;
}

Eigen::VectorXd gen_outcome(const Scenario& scenario, const TrueParameters& theta,
                            const Eigen::MatrixXd& x, const Eigen::VectorXd& a, Rng& rng) {
  Eigen::VectorXd y = outcome_mean(scenario, theta, x, a);
  const double sd = std::sqrt(scenario.sigma_eps2);
  for (Eigen::Index r = 0; r < y.size(); ++r) y[r] += sd * rng.normal();
  return y;
}

SimulatedStudy simulate_study(const Scenario& scenario, std::uint64_t replicate) {
  if (scenario.sites < 1 || scenario.n_mean < 1) {
    throw Error(ErrorCode::invalid_argument, "scenario needs at least one site and n >= 1");
  }
  const double sigma_b2 = heterogeneity_variance(scenario.i2, scenario.sigma_eps2);
  SimulatedStudy study;
  study.truth = true_parameters(scenario);
  const ModelSpec spec = scenario_model(scenario);
  const auto names = covariate_names(scenario);
  for (int site = 1; site <= scenario.sites; ++site) {
    const auto key = static_cast<std::uint64_t>(site);
    auto stream = [&](StreamPurpose purpose) {
      return Rng::substream(scenario.seed, replicate, key, purpose);
    };
    Rng size_rng = stream(StreamPurpose::site_size);
    const double n = scenario.n_mean;
    const int n_site = std::max(10, static_cast<int>(std::lround(size_rng.uniform(0.6 * n, 1.4 * n))));

    Rng param_rng = stream(StreamPurpose::site_parameters);
    TrueParameters theta = gen_site_parameters(scenario, study.truth, sigma_b2, param_rng);

    Propensity propensity{};
    if (scenario.setting == Setting::binary) {
      Rng prop_rng = stream(StreamPurpose::propensity);
      propensity = resolve_propensity(scenario.confounding, site, prop_rng);
    }
    Rng x_rng = stream(StreamPurpose::covariates);
    Rng a_rng = stream(StreamPurpose::treatment);
    Rng y_rng = stream(StreamPurpose::outcome);

    SiteDataset data;
    data.site_id = "site" + std::string(site < 10 ? "0" : "") + std::to_string(site);
    data.column_names = names;
    data.covariates = gen_covariates(scenario, site, n_site, x_rng);
    data.treatment = gen_treatment(scenario, propensity, data.covariates, a_rng);
    data.outcome = gen_outcome(scenario, theta, data.covariates, data.treatment, y_rng);
    validate_dataset(spec, data);

    study.sites.push_back(std::move(data));
    study.site_parameters.push_back(std::move(theta));
    study.propensities.push_back(propensity);
  }
  return study;
}

Eigen::MatrixXd draw_cohort(const Scenario& scenario, int size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(StreamPurpose::cohort)}));
  std::vector<int> counts(static_cast<std::size_t>(scenario.sites), 0);
  for (int r = 0; r < size; ++r) {
    const int site = std::min(scenario.sites - 1, static_cast<int>(rng.uniform() * scenario.sites));
    ++counts[static_cast<std::size_t>(site)];
  }
  Eigen::MatrixXd cohort(size, static_cast<Eigen::Index>(covariate_names(scenario).size()));
  Eigen::Index offset = 0;
  for (int site = 1; site <= scenario.sites; ++site) {
    const int n = counts[static_cast<std::size_t>(site - 1)];
    if (n == 0) continue;
    cohort.middleRows(offset, n) = gen_covariates(scenario, site, n, rng);
    offset += n;
  }
  return cohort;
}

}  // namespace blipmeta
