#include "blipmeta/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>
#include <numeric>

#include "blipmeta/error.hpp"

namespace blipmeta {

namespace {

double vector_mean(const Eigen::VectorXd& v) { return v.size() ? v.mean() : 0.0; }

double vector_variance(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

double autocovariance(const Eigen::VectorXd& v, double m, int lag) {
  const auto n = v.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i + lag < n; ++i) acc += (v[i] - m) * (v[i + lag] - m);
  return acc / static_cast<double>(n);
}

}  // namespace

double split_rhat(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> halves;
  for (const auto& chain : chains) {
    const auto half = chain.size() / 2;
    if (half < 2) return std::numeric_limits<double>::quiet_NaN();
    halves.push_back(chain.head(half));
    halves.push_back(chain.segment(chain.size() - half, half));
  }
  const auto m = static_cast<double>(halves.size());
  const auto n = static_cast<double>(halves.front().size());
  Eigen::VectorXd means(halves.size());
  double within = 0.0;
  for (std::size_t j = 0; j < halves.size(); ++j) {
    means[static_cast<Eigen::Index>(j)] = vector_mean(halves[j]);
    within += vector_variance(halves[j]);
  }
  within /= m;
  const double between = n * vector_variance(means);
  if (within <= 0.0) return between <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

namespace {

// Normal scores of the pooled ranks (average ranks for ties), split back
// into chains.
std::vector<Eigen::VectorXd> normal_scores(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
  const std::size_t s = pooled.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> rank(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> out;
  std::size_t offset = 0;
  for (const auto& c : chains) {
    Eigen::VectorXd z(c.size());
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      const double r = rank[offset + static_cast<std::size_t>(k)];
      z[k] = boost::math::quantile(normal, (r - 0.375) / (static_cast<double>(s) + 0.25));
    }
    offset += static_cast<std::size_t>(c.size());
    out.push_back(std::move(z));
  }
  return out;
}

}  // namespace

double rank_normalized_rhat(const std::vector<Eigen::VectorXd>& chains) {
  const double bulk = split_rhat(normal_scores(chains));
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.data(), c.data() + c.size());
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(pooled.size() / 2), pooled.end());
  const double median = pooled[pooled.size() / 2];
  std::vector<Eigen::VectorXd> folded;
  for (const auto& c : chains) folded.push_back((c.array() - median).abs().matrix());
  const double tail = split_rhat(normal_scores(folded));
  return std::max(bulk, tail);
}

double effective_sample_size(const std::vector<Eigen::VectorXd>& chains) {
  const auto m = static_cast<double>(chains.size());
  const auto n = static_cast<Eigen::Index>(chains.front().size());
  if (n < 4) return m * static_cast<double>(n);
  std::vector<double> means;
  double within = 0.0;
  for (const auto& chain : chains) {
    means.push_back(vector_mean(chain));
    within += vector_variance(chain);
  }
  within /= m;
  Eigen::VectorXd mv = Eigen::Map<Eigen::VectorXd>(means.data(), static_cast<Eigen::Index>(means.size()));
  const double between = chains.size() > 1 ? static_cast<double>(n) * vector_variance(mv) : 0.0;
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * within + between / nd;
  if (var_plus <= 0.0) return m * nd;

  auto rho = [&](int lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < chains.size(); ++c) acov += autocovariance(chains[c], means[c], lag);
    acov /= m;
    return 1.0 - (within - acov * nd / (nd - 1.0)) / var_plus;
  };

  // Geyer's initial positive, monotone sequence of paired autocorrelations.
  double tau = 0.0;
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, previous);
    previous = pair;
    tau += 2.0 * pair;
  }
  tau -= 1.0;
  tau = std::max(tau, 1.0 / std::log10(m * nd));
  return m * nd / tau;
}

int PooledPosterior::column(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorCode::invalid_argument, "no parameter '" + name + "'");
  return static_cast<int>(it - names.begin());
}

bool PooledPosterior::has(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

double PooledPosterior::mean(int col) const { return draws.col(col).mean(); }

double PooledPosterior::sd(int col) const { return std::sqrt(vector_variance(draws.col(col))); }

double PooledPosterior::quantile(int col, double p) const {
  std::vector<double> v(draws.col(col).data(), draws.col(col).data() + draws.rows());
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Eigen::VectorXd PooledPosterior::chain_column(int col, int chain) const {
  return draws.col(col).segment(static_cast<Eigen::Index>(chain) * info.n_kept, info.n_kept);
}

double PooledPosterior::rhat(int col) const {
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < info.n_chains; ++c) chains.push_back(chain_column(col, c));
  return split_rhat(chains);
}

double PooledPosterior::rank_rhat(int col) const {
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < info.n_chains; ++c) chains.push_back(chain_column(col, c));
  return rank_normalized_rhat(chains);
}

double PooledPosterior::ess(int col) const {
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < info.n_chains; ++c) chains.push_back(chain_column(col, c));
  return effective_sample_size(chains);
}

double PooledPosterior::mcse(int col) const { return sd(col) / std::sqrt(ess(col)); }

namespace {

bool rb_available(const Eigen::MatrixXd& rb, int t) {
  return rb.cols() > t && rb.rows() > 0 && rb.col(t).allFinite();
}

}  // namespace

double PooledPosterior::psi_mean(int t) const {
  if (rb_available(rb_mean, t)) return rb_mean.col(t).mean();
  return mean(psi_columns[static_cast<std::size_t>(t)]);
}

double PooledPosterior::psi_sd(int t) const {
  if (rb_available(rb_mean, t) && rb_available(rb_variance, t)) {
    const Eigen::VectorXd m = rb_mean.col(t);
    const double mean_of_var = rb_variance.col(t).mean();
    const double var_of_mean = (m.array() - m.mean()).square().mean();
    return std::sqrt(mean_of_var + var_of_mean);
  }
  return sd(psi_columns[static_cast<std::size_t>(t)]);
}

double PooledPosterior::psi_mcse(int t) const {
  if (!rb_available(rb_mean, t)) return mcse(psi_columns[static_cast<std::size_t>(t)]);
  std::vector<Eigen::VectorXd> chains;
  for (int c = 0; c < info.n_chains; ++c) {
    chains.push_back(rb_mean.col(t).segment(static_cast<Eigen::Index>(c) * info.n_kept, info.n_kept));
  }
  const double s = std::sqrt(vector_variance(rb_mean.col(t)));
  if (s == 0.0) return 0.0;
  return s / std::sqrt(effective_sample_size(chains));
}

}  // namespace blipmeta
