#include "blipmeta/random.hpp"

#include <boost/random/beta_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <cmath>
#include <limits>

#include "blipmeta/error.hpp"

namespace blipmeta {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr int kMaxAttempts = 100000;

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t state = splitmix64(master);
  for (auto key : keys) state = splitmix64(state ^ splitmix64(key + 0x632be59bd9b4e019ULL));
  return state;
}

double Rng::uniform() {
  // 53 random bits, shifted off zero.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

double Rng::gamma(double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "gamma needs positive shape and scale");
  }
  boost::random::gamma_distribution<double> dist(shape, scale);
  return dist(engine_);
}

double Rng::beta(double a, double b) {
  boost::random::beta_distribution<double> dist(a, b);
  return dist(engine_);
}

double Rng::exponential(double rate) { return -std::log(uniform()) / rate; }

int Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform() * total;
  int last_positive = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    last_positive = static_cast<int>(k);
    if (u < weights[k]) return static_cast<int>(k);
    u -= weights[k];
  }
  return last_positive;
}

double Rng::standard_truncated(double lower, double upper) {
  if (!(lower < upper)) {
    throw Error(ErrorCode::invalid_argument, "truncated normal needs lower < upper");
  }
  // Upper tail: exponential proposal (Robert 1995), or a uniform proposal for
  // narrow windows.
  if (lower >= 0.4) {
    const double width = upper - lower;
    if (width < 1.0 / lower) {
      for (int i = 0; i < kMaxAttempts; ++i) {
        const double z = lower + width * uniform();
        if (uniform() <= std::exp(0.5 * (lower * lower - z * z))) return z;
      }
    } else {
      const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
      for (int i = 0; i < kMaxAttempts; ++i) {
        const double z = lower - std::log(uniform()) / rate;
        if (z > upper) continue;
        if (uniform() <= std::exp(-0.5 * (z - rate) * (z - rate))) return z;
      }
    }
    throw Error(ErrorCode::invalid_argument, "truncated normal sampler did not converge");
  }
  if (upper <= -0.4) return -standard_truncated(-upper, -lower);

  // The window touches the bulk of the distribution.
  if (upper - lower >= 1.0) {
    for (int i = 0; i < kMaxAttempts; ++i) {
      const double z = normal();
      if (z >= lower && z <= upper) return z;
    }
  } else {
    const double peak = lower > 0.0 ? lower : (upper < 0.0 ? upper : 0.0);
    for (int i = 0; i < kMaxAttempts; ++i) {
      const double z = lower + (upper - lower) * uniform();
      if (uniform() <= std::exp(0.5 * (peak * peak - z * z))) return z;
    }
  }
  throw Error(ErrorCode::invalid_argument, "truncated normal sampler did not converge");
}

double Rng::truncated_normal(double mean, double sd, double lower, double upper) {
  if (!(sd > 0.0)) throw Error(ErrorCode::invalid_argument, "truncated normal needs sd > 0");
  return mean + sd * standard_truncated((lower - mean) / sd, (upper - mean) / sd);
}

Eigen::VectorXd Rng::gaussian_from_precision(const Eigen::LLT<Eigen::MatrixXd>& precision,
                                             const Eigen::VectorXd& rhs) {
  // With P = L L', mean = P^-1 rhs and mean + L'^-1 z has covariance P^-1.
  Eigen::VectorXd mean = precision.solve(rhs);
  Eigen::VectorXd z(rhs.size());
  for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal();
  mean += precision.matrixU().solve(z);
  return mean;
}

}  // namespace blipmeta
