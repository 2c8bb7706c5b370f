#include "blipmeta/hierarchy.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "blipmeta/error.hpp"

namespace blipmeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kTargetAcceptance = 0.44;
constexpr int kAdaptBatch = 25;
constexpr int kMarginalSteps = 2;

double draw_inverse_gamma(Rng& rng, InverseGammaParams p) {
  return rng.inverse_gamma(p.shape, p.scale);
}

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::not_positive_definite, std::string(what) + " is not positive definite");
  }
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

double prior_precision_of(const MeanPrior& prior, double lambda2, double tau2) {
  switch (prior.kind) {
    case MeanPriorKind::flat: return 0.0;
    case MeanPriorKind::normal:
    case MeanPriorKind::truncated_normal: return 1.0 / prior.variance;
    case MeanPriorKind::horseshoe: return 1.0 / (lambda2 * tau2);
  }
  return 0.0;
}

// Where a global parameter enters a site block.
struct Touch {
  int site;
  int local;
};

struct Layout {
  std::vector<std::vector<Touch>> touches;  // per global
  std::vector<int> horseshoe;
  std::vector<int> sampled_spread;
  std::vector<int> residual_sites;
  bool any_truncated = false;
  int width = 0;
  std::vector<std::string> names;
  int spread_offset = 0, tau_offset = -1, lambda_offset = 0, effect_offset = 0, residual_offset = 0;
};

Layout make_layout(const HierarchicalModel& model, const SamplerControl& control) {
  Layout layout;
  const int p = model.size();
  layout.touches.resize(static_cast<std::size_t>(p));
  for (int i = 0; i < static_cast<int>(model.sites.size()); ++i) {
    const auto& block = model.sites[static_cast<std::size_t>(i)];
    for (int k = 0; k < static_cast<int>(block.touched.size()); ++k) {
      layout.touches[static_cast<std::size_t>(block.touched[static_cast<std::size_t>(k)])].push_back({i, k});
    }
    if (block.residual_variance) layout.residual_sites.push_back(i);
  }
  for (int t = 0; t < p; ++t) {
    const auto& prior = model.mean_priors[static_cast<std::size_t>(t)];
    if (prior.kind == MeanPriorKind::horseshoe) layout.horseshoe.push_back(t);
    if (prior.kind == MeanPriorKind::truncated_normal) layout.any_truncated = true;
    if (!model.spread_priors[static_cast<std::size_t>(t)].fixed) layout.sampled_spread.push_back(t);
  }

  layout.names = model.names;
  layout.spread_offset = static_cast<int>(layout.names.size());
  for (int t : layout.sampled_spread) layout.names.push_back("sd(" + model.names[static_cast<std::size_t>(t)] + ")");
  if (!layout.horseshoe.empty()) {
    layout.tau_offset = static_cast<int>(layout.names.size());
    layout.names.push_back("tau");
  }
  layout.lambda_offset = static_cast<int>(layout.names.size());
  for (int t : layout.horseshoe) layout.names.push_back("lambda(" + model.names[static_cast<std::size_t>(t)] + ")");
  layout.effect_offset = static_cast<int>(layout.names.size());
  if (control.store_site_effects) {
    for (const auto& block : model.sites) {
      for (int t : block.touched) layout.names.push_back(model.names[static_cast<std::size_t>(t)] + "@" + block.site_id);
    }
  }
  layout.residual_offset = static_cast<int>(layout.names.size());
  for (int i : layout.residual_sites) layout.names.push_back("sigma2@" + model.sites[static_cast<std::size_t>(i)].site_id);
  layout.width = static_cast<int>(layout.names.size());
  return layout;
}

void check_model(const HierarchicalModel& model) {
  const auto p = static_cast<std::size_t>(model.size());
  if (model.mean_priors.size() != p || model.spread_priors.size() != p) {
    throw Error(ErrorCode::invalid_argument, "prior lists must match the parameter list");
  }
  for (std::size_t t = 0; t < p; ++t) {
    const auto& prior = model.mean_priors[t];
    if ((prior.kind == MeanPriorKind::normal || prior.kind == MeanPriorKind::truncated_normal) &&
        !(prior.variance > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "prior variance must be positive");
    }
    if (prior.kind == MeanPriorKind::truncated_normal && prior.sign != 1 && prior.sign != -1) {
      throw Error(ErrorCode::invalid_argument, "truncation sign must be +1 or -1");
    }
    const auto& spread = model.spread_priors[t];
    if (spread.fixed ? !(*spread.fixed >= 0.0) : !(spread.scale > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "between-site sd prior is invalid");
    }
  }
  for (const auto& block : model.sites) {
    const auto rows = block.estimate.size();
    if (block.map.rows() != rows || block.map.cols() != static_cast<Eigen::Index>(block.touched.size()) ||
        block.covariance.rows() != rows || block.precision.rows() != rows) {
      throw Error(ErrorCode::invalid_argument, "site block '" + block.site_id + "' has inconsistent shapes");
    }
    for (int t : block.touched) {
      if (t < 0 || static_cast<std::size_t>(t) >= p) {
        throw Error(ErrorCode::invalid_argument, "site block touches an unknown parameter");
      }
    }
  }
}

struct ChainState {
  Eigen::VectorXd mu, sigma2, nu, lambda2, nu_local;
  double tau2 = 1.0, xi = 1.0;
  std::vector<Eigen::VectorXd> theta;
  Eigen::VectorXd residual, nu_residual;
};

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[idx[k]];
  return out;
}

class Chain {
 public:
  Chain(const HierarchicalModel& model, const SamplerControl& control, const Layout& layout,
        int chain)
      : model_(model),
        control_(control),
        layout_(layout),
        rng_(derive_seed(control.seed, {static_cast<std::uint64_t>(chain),
                                        static_cast<std::uint64_t>(StreamPurpose::mcmc_chain)})) {}

  void run(Eigen::Ref<Eigen::MatrixXd> out, Eigen::Ref<Eigen::MatrixXd> rb_mean,
           Eigen::Ref<Eigen::MatrixXd> rb_var, std::vector<double>& acceptance) {
    initialize();
    const int p = model_.size();
    step_ = Eigen::VectorXd::Constant(p, 1.0);
    shrink_step_ = Eigen::VectorXd::Constant(p + 1, 1.0);
    shrink_moves_ = Eigen::VectorXd::Zero(p + 1);
    Eigen::VectorXd accepted = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd kept_accepted = Eigen::VectorXd::Zero(p);
    int batch = 0;
    for (int iter = 0; iter < control_.n_warmup + control_.n_kept; ++iter) {
      const bool kept = iter >= control_.n_warmup;
      Eigen::VectorXd moves = Eigen::VectorXd::Zero(p);
      update_spread_marginal(moves);
      update_means();
      update_site_effects();
      update_spread_conjugate();
      update_shrinkage();
      update_residuals();

      if (!kept) {
        accepted += moves;
        if ((iter + 1) % kAdaptBatch == 0) {
          ++batch;
          const double gain = std::min(1.0, 3.0 / std::sqrt(static_cast<double>(batch)));
          for (int t = 0; t < p; ++t) {
            step_[t] *= std::exp(gain * (accepted[t] / kAdaptBatch - kTargetAcceptance));
          }
          for (int t = 0; t <= p; ++t) {
            shrink_step_[t] *= std::exp(gain * (shrink_moves_[t] / kAdaptBatch - kTargetAcceptance));
          }
          accepted.setZero();
          shrink_moves_.setZero();
        }
      } else {
        kept_accepted += moves;
        const int row = iter - control_.n_warmup;
        record(out.row(row));
        rb_mean.row(row) = rb_mean_.transpose();
        rb_var.row(row) = rb_var_.transpose();
      }
    }
    acceptance.assign(static_cast<std::size_t>(p), kNaN);
    for (int t : layout_.sampled_spread) {
      if (!layout_.touches[static_cast<std::size_t>(t)].empty()) {
        acceptance[static_cast<std::size_t>(t)] = kept_accepted[t] / control_.n_kept;
      }
    }
  }

 private:
  void initialize() {
    const int p = model_.size();
    s_.mu.resize(p);
    s_.sigma2.resize(p);
    s_.nu = Eigen::VectorXd::Ones(p);
    s_.lambda2 = Eigen::VectorXd::Ones(p);
    s_.nu_local = Eigen::VectorXd::Ones(p);
    for (int t = 0; t < p; ++t) {
      const auto& prior = model_.mean_priors[static_cast<std::size_t>(t)];
      double start = rng_.normal();
      if (prior.kind == MeanPriorKind::truncated_normal) start = prior.sign * std::abs(start);
      s_.mu[t] = start;
      const auto& spread = model_.spread_priors[static_cast<std::size_t>(t)];
      s_.sigma2[t] = spread.fixed ? (*spread.fixed) * (*spread.fixed) : std::pow(rng_.uniform(0.1, 1.0), 2);
    }
    s_.theta.clear();
    s_.residual = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model_.sites.size()));
    s_.nu_residual = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model_.sites.size()));
    for (std::size_t i = 0; i < model_.sites.size(); ++i) {
      const auto& block = model_.sites[i];
      s_.theta.push_back(gather(s_.mu, block.touched));
      if (block.residual_variance) {
        const double dof = std::max(1, block.n_obs - static_cast<int>(block.estimate.size()));
        const double base = block.sse > 0.0 ? block.sse / dof : 1.0;
        s_.residual[static_cast<Eigen::Index>(i)] = base * rng_.uniform(0.5, 2.0);
      }
    }
    rb_mean_ = Eigen::VectorXd::Constant(p, kNaN);
    rb_var_ = Eigen::VectorXd::Constant(p, kNaN);
  }

  Eigen::VectorXd prior_precision() const {
    const int p = model_.size();
    Eigen::VectorXd prec(p);
    for (int t = 0; t < p; ++t) {
      prec[t] = prior_precision_of(model_.mean_priors[static_cast<std::size_t>(t)], s_.lambda2[t], s_.tau2);
    }
    return prec;
  }

  Eigen::MatrixXd marginal_covariance(std::size_t i) const {
    const auto& block = model_.sites[i];
    const Eigen::VectorXd d = gather(s_.sigma2, block.touched);
    return s_.residual[static_cast<Eigen::Index>(i)] * block.covariance +
           block.map * d.asDiagonal() * block.map.transpose();
  }

  // Random-walk Metropolis on log sigma_t^2 with site effects integrated out,
  // using rank-one updates of each site's marginal precision.
  void update_spread_marginal(Eigen::VectorXd& moves) {
    const std::size_t k = model_.sites.size();
    std::vector<Eigen::MatrixXd> c_inv(k);
    std::vector<Eigen::VectorXd> resid(k);
    for (std::size_t i = 0; i < k; ++i) {
      const auto& block = model_.sites[i];
      c_inv[i] = inverse_spd(marginal_covariance(i), "marginal site covariance");
      resid[i] = block.estimate - block.map * gather(s_.mu, block.touched);
    }
    for (int t : layout_.sampled_spread) {
      if (layout_.touches[static_cast<std::size_t>(t)].empty()) continue;
      for (int step = 0; step < kMarginalSteps; ++step) {
        if (marginal_move(t, c_inv, resid)) moves[t] += 1.0 / kMarginalSteps;
      }
      // The move targets sigma^2 with nu integrated out, so nu is refreshed.
      s_.nu[t] = draw_inverse_gamma(rng_, spread_auxiliary_conditional(s_.sigma2[t], spread_scale(t)));
    }
  }

  double spread_scale(int t) const { return model_.spread_priors[static_cast<std::size_t>(t)].scale; }

  bool marginal_move(int t, std::vector<Eigen::MatrixXd>& c_inv, const std::vector<Eigen::VectorXd>& resid) {
    const auto& touches = layout_.touches[static_cast<std::size_t>(t)];
    const double current = s_.sigma2[t];
    const double proposal = current * std::exp(step_[t] * rng_.normal());
    const double delta = proposal - current;
    double log_ratio = 0.0;
    std::vector<Eigen::VectorXd> us;
    std::vector<double> denominators;
    for (const auto& touch : touches) {
      const auto si = static_cast<std::size_t>(touch.site);
      const Eigen::VectorXd a = model_.sites[si].map.col(touch.local);
      Eigen::VectorXd u = c_inv[si] * a;
      const double q = a.dot(u);
      const double w = u.dot(resid[si]);
      const double denom = 1.0 + delta * q;
      if (!(denom > 0.0)) return false;
      log_ratio += -0.5 * std::log(denom) + 0.5 * delta * w * w / denom;
      us.push_back(std::move(u));
      denominators.push_back(denom);
    }
    // Half-Cauchy(0, s) on sigma, expressed on the log sigma^2 scale.
    const double s2 = spread_scale(t) * spread_scale(t);
    log_ratio += 0.5 * std::log(proposal / current) - std::log1p(proposal / s2) + std::log1p(current / s2);
    if (!(std::log(rng_.uniform()) < log_ratio)) return false;
    s_.sigma2[t] = proposal;
    for (std::size_t j = 0; j < touches.size(); ++j) {
      const auto si = static_cast<std::size_t>(touches[j].site);
      c_inv[si] -= (delta / denominators[j]) * us[j] * us[j].transpose();
    }
    return true;
  }

  void update_means() {
    const int p = model_.size();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (std::size_t i = 0; i < model_.sites.size(); ++i) {
      const auto& block = model_.sites[i];
      const Eigen::MatrixXd c_inv = inverse_spd(marginal_covariance(i), "marginal site covariance");
      const Eigen::MatrixXd at_c = block.map.transpose() * c_inv;
      const Eigen::MatrixXd local_q = at_c * block.map;
      const Eigen::VectorXd local_b = at_c * block.estimate;
      for (std::size_t r = 0; r < block.touched.size(); ++r) {
        b[block.touched[r]] += local_b[static_cast<Eigen::Index>(r)];
        for (std::size_t c = 0; c < block.touched.size(); ++c) {
          q(block.touched[r], block.touched[c]) += local_q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
      }
    }
    if (!layout_.horseshoe.empty() && !layout_.any_truncated) update_shrinkage_collapsed(q, b);
    q.diagonal() += prior_precision();
    for (int t = 0; t < p; ++t) {
      if (!(q(t, t) > 0.0)) {
        throw Error(ErrorCode::improper_posterior,
                    "parameter '" + model_.names[static_cast<std::size_t>(t)] +
                        "' has a flat prior and no data");
      }
    }

    if (!layout_.any_truncated) {
      Eigen::LLT<Eigen::MatrixXd> llt(q);
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::not_positive_definite, "common-mean precision is not positive definite");
      }
      s_.mu = rng_.gaussian_from_precision(llt, b);
      rb_mean_ = llt.solve(b);
      rb_var_ = llt.solve(Eigen::MatrixXd::Identity(p, p)).diagonal();
      return;
    }
    for (int t = 0; t < p; ++t) {
      const double v = 1.0 / q(t, t);
      const double m = (b[t] - q.row(t).dot(s_.mu) + q(t, t) * s_.mu[t]) * v;
      const auto& prior = model_.mean_priors[static_cast<std::size_t>(t)];
      if (prior.kind == MeanPriorKind::truncated_normal) {
        const double inf = std::numeric_limits<double>::infinity();
        s_.mu[t] = prior.sign > 0 ? rng_.truncated_normal(m, std::sqrt(v), 0.0, inf)
                                  : rng_.truncated_normal(m, std::sqrt(v), -inf, 0.0);
        rb_mean_[t] = kNaN;
        rb_var_[t] = kNaN;
      } else {
        s_.mu[t] = m + std::sqrt(v) * rng_.normal();
        rb_mean_[t] = m;
        rb_var_[t] = v;
      }
    }
  }

  // log p(xi-hat | tau, lambda) with the common means integrated out, up to
  // terms free of the shrinkage scales. -inf when the precision is singular.
  double collapsed_log_marginal(const Eigen::MatrixXd& q_data, const Eigen::VectorXd& b) const {
    const Eigen::VectorXd prior = prior_precision();
    Eigen::MatrixXd q = q_data;
    q.diagonal() += prior;
    Eigen::LLT<Eigen::MatrixXd> llt(q);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    double log_det = 0.0;
    for (Eigen::Index k = 0; k < q.rows(); ++k) log_det += 2.0 * std::log(llt.matrixL()(k, k));
    double log_prior = 0.0;
    for (int t : layout_.horseshoe) log_prior += std::log(prior[t]);
    return 0.5 * log_prior - 0.5 * log_det + 0.5 * b.dot(llt.solve(b));
  }

  // Random-walk moves on log tau^2 and each log lambda_t^2 with the common
  // means and the auxiliary scales integrated out; auxiliaries are redrawn.
  void update_shrinkage_collapsed(const Eigen::MatrixXd& q_data, const Eigen::VectorXd& b) {
    const int p = model_.size();
    double current = collapsed_log_marginal(q_data, b);
    auto move = [&](double& scale2, double step, int slot) {
      const double old_value = scale2;
      const double proposal = old_value * std::exp(step * rng_.normal());
      scale2 = proposal;
      const double candidate = collapsed_log_marginal(q_data, b);
      // Half-Cauchy(0, 1) on the scale, on the log squared-scale.
      const double log_ratio = candidate - current + 0.5 * std::log(proposal / old_value) -
                               std::log1p(proposal) + std::log1p(old_value);
      if (std::log(rng_.uniform()) < log_ratio) {
        current = candidate;
        shrink_moves_[slot] += 1.0;
      } else {
        scale2 = old_value;
      }
    };
    move(s_.tau2, shrink_step_[p], p);
    s_.xi = rng_.inverse_gamma(1.0, 1.0 + 1.0 / s_.tau2);
    for (int t : layout_.horseshoe) {
      move(s_.lambda2[t], shrink_step_[t], t);
      s_.nu_local[t] = rng_.inverse_gamma(1.0, 1.0 + 1.0 / s_.lambda2[t]);
    }
  }

  void update_site_effects() {
    for (std::size_t i = 0; i < model_.sites.size(); ++i) {
      const auto& block = model_.sites[i];
      const Eigen::VectorXd common = gather(s_.mu, block.touched);
      const Eigen::VectorXd sd = gather(s_.sigma2, block.touched).cwiseSqrt();
      const GaussianDraw cond =
          site_effect_conditional(block, s_.residual[static_cast<Eigen::Index>(i)], common, sd);
      Eigen::VectorXd draw = cond.mean;
      std::vector<int> free;
      for (Eigen::Index k = 0; k < sd.size(); ++k) {
        if (sd[k] > 0.0) free.push_back(static_cast<int>(k));
      }
      if (!free.empty()) {
        Eigen::MatrixXd cov(free.size(), free.size());
        for (std::size_t r = 0; r < free.size(); ++r) {
          for (std::size_t c = 0; c < free.size(); ++c) cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cond.covariance(free[r], free[c]);
        }
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) {
          throw Error(ErrorCode::not_positive_definite, "site-effect covariance is not positive definite");
        }
        Eigen::VectorXd z(static_cast<Eigen::Index>(free.size()));
        for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = rng_.normal();
        const Eigen::VectorXd noise = llt.matrixL() * z;
        for (std::size_t r = 0; r < free.size(); ++r) draw[free[r]] += noise[static_cast<Eigen::Index>(r)];
      }
      s_.theta[i] = std::move(draw);
    }
  }

  void update_spread_conjugate() {
    for (int t : layout_.sampled_spread) {
      double ss = 0.0;
      const auto& touches = layout_.touches[static_cast<std::size_t>(t)];
      for (const auto& touch : touches) {
        const double d = s_.theta[static_cast<std::size_t>(touch.site)][touch.local] - s_.mu[t];
        ss += d * d;
      }
      s_.sigma2[t] = draw_inverse_gamma(rng_, spread_conditional(ss, static_cast<int>(touches.size()), s_.nu[t]));
      s_.nu[t] = draw_inverse_gamma(
          rng_, spread_auxiliary_conditional(s_.sigma2[t], model_.spread_priors[static_cast<std::size_t>(t)].scale));
    }
  }

  void update_shrinkage() {
    if (layout_.horseshoe.empty()) return;
    double weighted = 0.0;
    for (int t : layout_.horseshoe) {
      s_.lambda2[t] = draw_inverse_gamma(rng_, local_shrinkage_conditional(s_.mu[t], s_.tau2, s_.nu_local[t]));
      s_.nu_local[t] = rng_.inverse_gamma(1.0, 1.0 + 1.0 / s_.lambda2[t]);
      weighted += s_.mu[t] * s_.mu[t] / s_.lambda2[t];
    }
    s_.tau2 = draw_inverse_gamma(
        rng_, global_shrinkage_conditional(weighted, static_cast<int>(layout_.horseshoe.size()), s_.xi));
    s_.xi = rng_.inverse_gamma(1.0, 1.0 + 1.0 / s_.tau2);
  }

  void update_residuals() {
    for (int i : layout_.residual_sites) {
      const auto& block = model_.sites[static_cast<std::size_t>(i)];
      const Eigen::VectorXd diff = block.map * s_.theta[static_cast<std::size_t>(i)] - block.estimate;
      const double sse = block.sse + diff.dot(block.precision * diff);
      s_.residual[i] = draw_inverse_gamma(rng_, residual_conditional(sse, block.n_obs, s_.nu_residual[i]));
      s_.nu_residual[i] = draw_inverse_gamma(rng_, spread_auxiliary_conditional(s_.residual[i], model_.residual_scale));
    }
  }

  void record(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row) const {
    const int p = model_.size();
    for (int t = 0; t < p; ++t) row[t] = s_.mu[t];
    int col = layout_.spread_offset;
    for (int t : layout_.sampled_spread) row[col++] = std::sqrt(s_.sigma2[t]);
    if (layout_.tau_offset >= 0) row[layout_.tau_offset] = std::sqrt(s_.tau2);
    col = layout_.lambda_offset;
    for (int t : layout_.horseshoe) row[col++] = std::sqrt(s_.lambda2[t]);
    if (control_.store_site_effects) {
      col = layout_.effect_offset;
      for (const auto& theta : s_.theta) {
        for (Eigen::Index k = 0; k < theta.size(); ++k) row[col++] = theta[k];
      }
    }
    col = layout_.residual_offset;
    for (int i : layout_.residual_sites) row[col++] = s_.residual[i];
  }

  const HierarchicalModel& model_;
  const SamplerControl& control_;
  const Layout& layout_;
  Rng rng_;
  ChainState s_;
  Eigen::VectorXd step_;
  Eigen::VectorXd shrink_step_;
  Eigen::VectorXd shrink_moves_;
  Eigen::VectorXd rb_mean_, rb_var_;
};

}  // namespace

SiteBlock make_site_block(std::string site_id, std::vector<int> touched, Eigen::MatrixXd map,
                          Eigen::VectorXd estimate, Eigen::MatrixXd covariance) {
  SiteBlock block;
  block.site_id = std::move(site_id);
  block.touched = std::move(touched);
  block.map = std::move(map);
  block.estimate = std::move(estimate);
  block.covariance = std::move(covariance);
  if (block.map.rows() != block.estimate.size() ||
      block.map.cols() != static_cast<Eigen::Index>(block.touched.size()) ||
      block.covariance.rows() != block.estimate.size() ||
      block.covariance.cols() != block.estimate.size()) {
    throw Error(ErrorCode::invalid_argument, "site block '" + block.site_id + "' has inconsistent shapes");
  }
  block.precision = inverse_spd(block.covariance, "site sampling covariance");
  return block;
}

GaussianDraw site_effect_conditional(const SiteBlock& block, double residual_variance,
                                     const Eigen::VectorXd& common, const Eigen::VectorXd& sd) {
  const auto m = common.size();
  GaussianDraw out{common, Eigen::MatrixXd::Zero(m, m)};
  std::vector<Eigen::Index> free, pinned;
  for (Eigen::Index k = 0; k < m; ++k) (sd[k] > 0.0 ? free : pinned).push_back(k);
  if (free.empty()) return out;

  const Eigen::MatrixXd data_precision = block.precision / residual_variance;
  Eigen::VectorXd target = block.estimate;
  for (auto k : pinned) target -= block.map.col(k) * common[k];
  Eigen::MatrixXd a_free(block.map.rows(), static_cast<Eigen::Index>(free.size()));
  for (std::size_t j = 0; j < free.size(); ++j) a_free.col(static_cast<Eigen::Index>(j)) = block.map.col(free[j]);

  Eigen::MatrixXd precision = a_free.transpose() * data_precision * a_free;
  Eigen::VectorXd rhs = a_free.transpose() * data_precision * target;
  for (std::size_t j = 0; j < free.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double prior_precision = 1.0 / (sd[free[j]] * sd[free[j]]);
    precision(jj, jj) += prior_precision;
    rhs[jj] += prior_precision * common[free[j]];
  }
  const Eigen::MatrixXd cov = inverse_spd(precision, "site-effect precision");
  const Eigen::VectorXd mean = cov * rhs;
  for (std::size_t r = 0; r < free.size(); ++r) {
    out.mean[free[r]] = mean[static_cast<Eigen::Index>(r)];
    for (std::size_t c = 0; c < free.size(); ++c) {
      out.covariance(free[r], free[c]) = cov(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

GaussianDraw common_mean_conditional(const std::vector<Eigen::VectorXd>& site_effects,
                                     const Eigen::VectorXd& sd,
                                     const Eigen::VectorXd& prior_precision) {
  const auto p = sd.size();
  GaussianDraw out{Eigen::VectorXd::Zero(p), Eigen::MatrixXd::Zero(p, p)};
  for (Eigen::Index t = 0; t < p; ++t) {
    double sum = 0.0;
    int count = 0;
    for (const auto& theta : site_effects) {
      if (std::isnan(theta[t])) continue;
      sum += theta[t];
      ++count;
    }
    const double precision = count / (sd[t] * sd[t]) + prior_precision[t];
    if (!(precision > 0.0)) {
      throw Error(ErrorCode::improper_posterior, "common mean has no information");
    }
    out.mean[t] = sum / (sd[t] * sd[t]) / precision;
    out.covariance(t, t) = 1.0 / precision;
  }
  return out;
}

GaussianDraw collapsed_mean_conditional(const HierarchicalModel& model,
                                        const Eigen::VectorXd& sd,
                                        const Eigen::VectorXd& residual_variance,
                                        const Eigen::VectorXd& prior_precision) {
  const int p = model.size();
  Eigen::MatrixXd q = prior_precision.asDiagonal();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < model.sites.size(); ++i) {
    const auto& block = model.sites[i];
    const Eigen::VectorXd d = gather(sd, block.touched).array().square();
    const Eigen::MatrixXd c = residual_variance[static_cast<Eigen::Index>(i)] * block.covariance +
                              block.map * d.asDiagonal() * block.map.transpose();
    const Eigen::MatrixXd at_c = block.map.transpose() * inverse_spd(c, "marginal site covariance");
    const Eigen::MatrixXd local_q = at_c * block.map;
    const Eigen::VectorXd local_b = at_c * block.estimate;
    for (std::size_t r = 0; r < block.touched.size(); ++r) {
      b[block.touched[r]] += local_b[static_cast<Eigen::Index>(r)];
      for (std::size_t cc = 0; cc < block.touched.size(); ++cc) {
        q(block.touched[r], block.touched[cc]) += local_q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cc));
      }
    }
  }
  const Eigen::MatrixXd cov = inverse_spd(q, "common-mean precision");
  return {cov * b, cov};
}

InverseGammaParams spread_conditional(double sum_squares, int count, double nu) {
  return {0.5 + 0.5 * count, 1.0 / nu + 0.5 * sum_squares};
}

InverseGammaParams spread_auxiliary_conditional(double sigma2, double scale) {
  return {1.0, 1.0 / (scale * scale) + 1.0 / sigma2};
}

InverseGammaParams local_shrinkage_conditional(double psi, double tau2, double nu) {
  return {1.0, 1.0 / nu + psi * psi / (2.0 * tau2)};
}

InverseGammaParams global_shrinkage_conditional(double weighted_sum_squares, int count,
                                                double xi) {
  return {0.5 * (count + 1), 1.0 / xi + 0.5 * weighted_sum_squares};
}

InverseGammaParams residual_conditional(double sse, int n_obs, double nu) {
  return {0.5 + 0.5 * n_obs, 1.0 / nu + 0.5 * sse};
}

PooledPosterior run_gibbs(const HierarchicalModel& model, const SamplerControl& control) {
  check_model(model);
  if (control.n_chains < 1 || control.n_kept < 1 || control.n_warmup < 0) {
    throw Error(ErrorCode::invalid_argument, "need at least one chain and one kept draw");
  }
  const Layout layout = make_layout(model, control);
  const int p = model.size();
  const Eigen::Index total = static_cast<Eigen::Index>(control.n_chains) * control.n_kept;

  PooledPosterior post;
  post.names = layout.names;
  post.info = {control.n_chains, control.n_warmup, control.n_kept, control.seed};
  post.draws.resize(total, layout.width);
  post.rb_mean.resize(total, p);
  post.rb_variance.resize(total, p);
  std::vector<std::vector<double>> acceptance(static_cast<std::size_t>(control.n_chains));
  std::vector<Eigen::MatrixXd> out(static_cast<std::size_t>(control.n_chains));
  std::vector<Eigen::MatrixXd> rbm(out.size()), rbv(out.size());
  std::vector<std::exception_ptr> errors(out.size());

  auto work = [&](int c) {
    try {
      const auto cc = static_cast<std::size_t>(c);
      out[cc].resize(control.n_kept, layout.width);
      rbm[cc].resize(control.n_kept, p);
      rbv[cc].resize(control.n_kept, p);
      Chain chain(model, control, layout, c);
      chain.run(out[cc], rbm[cc], rbv[cc], acceptance[cc]);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  if (control.parallel && control.n_chains > 1) {
    std::vector<std::thread> threads;
    for (int c = 0; c < control.n_chains; ++c) threads.emplace_back(work, c);
    for (auto& th : threads) th.join();
  } else {
    for (int c = 0; c < control.n_chains; ++c) work(c);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (int c = 0; c < control.n_chains; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    post.draws.middleRows(static_cast<Eigen::Index>(c) * control.n_kept, control.n_kept) = out[cc];
    post.rb_mean.middleRows(static_cast<Eigen::Index>(c) * control.n_kept, control.n_kept) = rbm[cc];
    post.rb_variance.middleRows(static_cast<Eigen::Index>(c) * control.n_kept, control.n_kept) = rbv[cc];
  }
  post.acceptance.assign(static_cast<std::size_t>(p), kNaN);
  for (int t = 0; t < p; ++t) {
    double sum = 0.0;
    int n = 0;
    for (const auto& a : acceptance) {
      if (!std::isnan(a[static_cast<std::size_t>(t)])) {
        sum += a[static_cast<std::size_t>(t)];
        ++n;
      }
    }
    if (n) post.acceptance[static_cast<std::size_t>(t)] = sum / n;
  }
  for (int t = 0; t < p; ++t) {
    post.psi_columns.push_back(t);
    post.psi_labels.push_back(model.names[static_cast<std::size_t>(t)]);
  }
  return post;
}

}  // namespace blipmeta
