#include <cmath>

#include "blipmeta/error.hpp"
#include "blipmeta/federation.hpp"
#include "blipmeta/posterior.hpp"
#include "blipmeta/stage_two.hpp"
#include "conjugate_checks.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace blipmeta;

namespace {

SiteSummary summary(const std::string& id, double estimate, double sd) {
  SiteSummary s;
  s.site_id = id;
  s.model_fingerprint = "0000000000000000";
  s.psi_labels = {"a"};
  s.n_obs = 100;
  s.dof = 97;
  s.entries.push_back({"a", estimate, sd, {{0, 1.0}}});
  return s;
}

SamplerControl control(std::uint64_t seed, int warmup = 500, int kept = 2000) {
  SamplerControl c;
  c.seed = seed;
  c.n_warmup = warmup;
  c.n_kept = kept;
  c.parallel = false;
  return c;
}

}  // namespace

TEST_CASE("inverse-gamma full conditionals match quadrature") {
  for (const auto& check : checks::scale_conditionals(50000, 3)) {
    INFO(check.name);
    CHECK(check.z < 4.0);
  }
}

TEST_CASE("Gaussian full conditionals match covariance-form algebra") {
  for (const auto& check : checks::gaussian_conditionals(50000, 4)) {
    INFO(check.name);
    CHECK(check.z < 4.0);
  }
}

TEST_CASE("pinned sds fix site effects at the common mean") {
  const auto block = checks::example_block();
  const auto cond = site_effect_conditional(block, 1.0, Eigen::Vector2d(0.5, 0.1), Eigen::Vector2d(0.0, 0.3));
  CHECK(cond.mean[0] == 0.5);
  CHECK(cond.covariance(0, 0) == 0.0);
  CHECK(cond.covariance(1, 1) > 0.0);
}

TEST_CASE("fixed zero spread with a flat prior reproduces precision weighting") {
  auto graph = assemble_likelihood({summary("s1", 1.0, 1.0), summary("s2", 3.0, 1.0)});
  PriorConfig priors;
  priors.overrides["a"] = MeanPrior::flat();
  priors.fixed_between_sd = 0.0;
  const auto post = run_mcmc(graph, priors, control(7, 200, 5000));
  const int col = post.psi_columns[0];
  CHECK(std::abs(post.mean(col) - 2.0) < 3.0 * post.mcse(col));
  CHECK(std::abs(post.sd(col) / std::sqrt(0.5) - 1.0) < 0.05);
}

TEST_CASE("truncated priors keep the sign") {
  // Data favour a positive mean; the prior forbids it.
  auto graph = assemble_likelihood({summary("s1", 0.8, 0.5), summary("s2", 1.2, 0.5)});
  PriorConfig priors;
  priors.overrides["a"] = MeanPrior::truncated(100.0, -1);
  const auto post = run_mcmc(graph, priors, control(8));
  const int col = post.psi_columns[0];
  CHECK(post.draws.col(col).maxCoeff() <= 0.0);

  PriorConfig positive;
  positive.overrides["a"] = MeanPrior::truncated(100.0, 1);
  positive.fixed_between_sd = 0.0;
  auto single = assemble_likelihood({summary("s1", -0.3, 0.5)});
  const auto p2 = run_mcmc(single, positive, control(9, 200, 20000));
  const int c2 = p2.psi_columns[0];
  CHECK(p2.draws.col(c2).minCoeff() >= 0.0);
  // Closed-form mean of N(m, v) truncated to [0, inf), with the N(0, 100) prior.
  const double v = 1.0 / (1.0 / 0.25 + 1.0 / 100.0);
  const double m = v * (-0.3 / 0.25);
  const double s = std::sqrt(v);
  const double alpha = -m / s;
  const double phi = std::exp(-0.5 * alpha * alpha) / std::sqrt(2 * M_PI);
  const double expected = m + s * phi / (1.0 - oracle::normal_cdf(alpha));
  CHECK(std::abs(p2.mean(c2) - expected) < 4.0 * p2.mcse(c2));
}

TEST_CASE("truncated normal sampler matches its CDF") {
  Rng rng(derive_seed(21, {static_cast<std::uint64_t>(StreamPurpose::test)}));
  struct Case {
    double mean, sd, lo, hi;
  };
  for (const auto& c : {Case{0, 1, 0, INFINITY}, Case{-3, 0.5, 0, INFINITY}, Case{2, 1, -INFINITY, -1},
                        Case{0, 2, -0.5, 0.5}, Case{10, 1, -INFINITY, 0}}) {
    const auto x = oracle::sample(20000, [&] { return rng.truncated_normal(c.mean, c.sd, c.lo, c.hi); });
    const double flo = oracle::normal_cdf((c.lo - c.mean) / c.sd);
    const double fhi = oracle::normal_cdf((c.hi - c.mean) / c.sd);
    const auto cdf = [&](double v) { return (oracle::normal_cdf((v - c.mean) / c.sd) - flo) / (fhi - flo); };
    for (double v : x) {
      REQUIRE(v >= c.lo);
      REQUIRE(v <= c.hi);
    }
    CHECK(oracle::ks_statistic(x, cdf) < 1.63 / std::sqrt(20000.0));
  }
}

TEST_CASE("prior-only parameters return their prior") {
  const auto graph = empty_likelihood({"a", "a:x"});
  CHECK(graph.prior_only == std::vector<int>{0, 1});
  PriorConfig priors;
  priors.mean_variance = 4.0;
  const auto post = run_mcmc(graph, priors, control(10, 100, 4000));
  for (int t = 0; t < 2; ++t) {
    const int col = post.psi_columns[static_cast<std::size_t>(t)];
    std::vector<double> x(post.draws.col(col).data(), post.draws.col(col).data() + post.draw_count());
    const double d = oracle::ks_statistic(x, [](double v) { return oracle::normal_cdf(v / 2.0); });
    CHECK(d < 1.63 / std::sqrt(static_cast<double>(x.size())));
  }
}

TEST_CASE("flat prior with no data is improper") {
  auto graph = empty_likelihood({"a"});
  PriorConfig priors;
  priors.overrides["a"] = MeanPrior::flat();
  CHECK_THROWS_AS(run_mcmc(graph, priors, control(1, 10, 10)), Error);
}

TEST_CASE("assemble_likelihood rejects bad inputs") {
  auto dup = std::vector<SiteSummary>{summary("s1", 1, 1), summary("s1", 2, 1)};
  try {
    assemble_likelihood(dup);
    FAIL("duplicate accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::protocol_error);
  }
  try {
    assemble_likelihood({summary("s1", 1, 0.0)});
    FAIL("zero sd accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_sd);
  }
  auto other = summary("s2", 1, 1);
  other.psi_labels = {"b"};
  CHECK_THROWS_AS(assemble_likelihood({summary("s1", 1, 1), other}), Error);
}

TEST_CASE("sites touch only the psi their map rows name") {
  auto s = summary("s1", 1.0, 0.5);
  s.psi_labels = {"a", "a:x", "a:z"};
  s.entries[0].map_row = {{0, 1.0}, {2, 1.0}};
  const auto graph = assemble_likelihood({s});
  REQUIRE(graph.sites.size() == 1);
  CHECK(graph.sites[0].touched == std::vector<int>{0, 2});
  CHECK(graph.prior_only == std::vector<int>{1});
}

TEST_CASE("R-hat and ESS behave on known chains") {
  Rng rng(derive_seed(30, {static_cast<std::uint64_t>(StreamPurpose::test)}));
  const int n = 4000;
  std::vector<Eigen::VectorXd> iid(4, Eigen::VectorXd(n));
  for (auto& c : iid)
    for (int i = 0; i < n; ++i) c[i] = rng.normal();
  CHECK(split_rhat(iid) < 1.01);
  CHECK(rank_normalized_rhat(iid) < 1.01);
  CHECK(effective_sample_size(iid) == doctest::Approx(4.0 * n).epsilon(0.15));

  auto shifted = iid;
  shifted[0].array() += 1.0;
  CHECK(split_rhat(shifted) > 1.1);
  CHECK(rank_normalized_rhat(shifted) > 1.1);

  const double rho = 0.9;
  std::vector<Eigen::VectorXd> ar(4, Eigen::VectorXd(n));
  for (auto& c : ar) {
    c[0] = rng.normal() / std::sqrt(1 - rho * rho);
    for (int i = 1; i < n; ++i) c[i] = rho * c[i - 1] + rng.normal();
  }
  CHECK(effective_sample_size(ar) == doctest::Approx(4.0 * n * (1 - rho) / (1 + rho)).epsilon(0.3));

  // Rank normalization copes with draws that have no finite moments.
  std::vector<Eigen::VectorXd> cauchy(4, Eigen::VectorXd(n));
  for (auto& c : cauchy)
    for (int i = 0; i < n; ++i) c[i] = std::tan(M_PI * (rng.uniform() - 0.5));
  CHECK(rank_normalized_rhat(cauchy) < 1.01);
}

TEST_CASE("selection uses equal-tailed intervals and skips main effects") {
  PooledPosterior post;
  post.names = {"a", "a:x", "a:z"};
  post.psi_columns = {0, 1, 2};
  post.psi_labels = post.names;
  post.info = {1, 0, 1000, 1};
  post.draws.resize(1000, 3);
  for (int i = 0; i < 1000; ++i) {
    const double u = (i + 0.5) / 1000.0 - 0.5;
    post.draws(i, 0) = u;          // straddles zero but is a main effect
    post.draws(i, 1) = 1.0 + u;    // excludes zero
    post.draws(i, 2) = 0.3 + u;    // 2.5% quantile below zero
  }
  post.rb_mean = Eigen::MatrixXd::Constant(1000, 3, NAN);
  post.rb_variance = post.rb_mean;
  CHECK(select_interactions(post) == std::vector<int>{1});
  const auto est = point_estimates(post, false, select_interactions(post));
  CHECK(est[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(est[1] == doctest::Approx(1.0));
  CHECK(est[2] == 0.0);
  CHECK(post.quantile(1, 0.5) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("summary JSON is deterministic for a seed") {
  auto graph = assemble_likelihood({summary("s1", 1.0, 0.5), summary("s2", 1.5, 0.4), summary("s3", 0.7, 0.6)});
  PriorConfig priors;
  const auto a = posterior_summary_json(run_mcmc(graph, priors, control(5, 200, 300)), {});
  const auto b = posterior_summary_json(run_mcmc(graph, priors, control(5, 200, 300)), {});
  CHECK(a == b);
  auto threaded = control(5, 200, 300);
  threaded.parallel = true;
  CHECK(posterior_summary_json(run_mcmc(graph, priors, threaded), {}) == a);
  const auto doc = nlohmann::json::parse(a);
  CHECK(doc["psi"].contains("a"));
  CHECK(doc["variance_components"].contains("sd(a)"));
  CHECK(doc["max_rhat"].get<double>() < 1.05);
}

TEST_CASE("horseshoe shrinks null interactions and keeps a large one") {
  SiteSummary base;
  base.model_fingerprint = "0000000000000000";
  base.psi_labels = {"a", "a:x1", "a:x2", "a:x3"};
  base.n_obs = 200;
  base.dof = 190;
  std::vector<SiteSummary> sites;
  Rng rng(derive_seed(40, {static_cast<std::uint64_t>(StreamPurpose::test)}));
  for (int i = 0; i < 8; ++i) {
    auto s = base;
    s.site_id = "s" + std::to_string(i);
    const double truth[] = {2.0, 1.5, 0.0, 0.0};
    for (int t = 0; t < 4; ++t) {
      s.entries.push_back({base.psi_labels[static_cast<std::size_t>(t)], truth[t] + rng.normal(0.0, 0.1), 0.1, {{t, 1.0}}});
    }
    sites.push_back(s);
  }
  PriorConfig priors;
  priors.horseshoe_interactions = true;
  const auto post = run_mcmc(assemble_likelihood(sites), priors, control(11, 1000, 1000));
  CHECK(post.has("tau"));
  CHECK(post.has("lambda(a:x1)"));
  CHECK_FALSE(post.has("lambda(a)"));
  CHECK(select_interactions(post) == std::vector<int>{1});
  CHECK(std::abs(post.psi_mean(2)) < 0.05);
  CHECK(max_rhat(post) < 1.05);
}
