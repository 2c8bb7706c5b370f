#ifndef BLIPMETA_RANDOM_HPP_
#define BLIPMETA_RANDOM_HPP_

#include <Eigen/Dense>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace blipmeta {

/// Purposes for keyed substreams. Values are part of the reproducibility
/// contract; append, never renumber.
enum class StreamPurpose : std::uint64_t {
  site_size = 1,
  site_parameters = 2,
  propensity = 3,
  covariates = 4,
  treatment = 5,
  outcome = 6,
  cohort = 7,
  mcmc_chain = 8,
  test = 9,
};

/// SplitMix64 finalizer chained over the keys; used to derive independent
/// substream seeds from (master seed, replicate, site, purpose, ...).
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys);

/// Seeded generator with portable variate algorithms (Boost.Random
/// distributions over a 64-bit Mersenne twister), so draws are identical
/// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t master, std::uint64_t replicate, std::uint64_t site,
                       StreamPurpose purpose) {
    return Rng(derive_seed(master, {replicate, site, static_cast<std::uint64_t>(purpose)}));
  }

  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Gamma with the given shape and scale.
  double gamma(double shape, double scale = 1.0);
  /// Inverse-gamma with density proportional to x^(-shape-1) exp(-scale / x).
  double inverse_gamma(double shape, double scale) { return scale / gamma(shape, 1.0); }
  double beta(double a, double b);
  double exponential(double rate);
  bool bernoulli(double p) { return uniform() < p; }
  /// Index drawn with probability proportional to `weights`.
  int categorical(std::span<const double> weights);
  /// Normal(mean, sd^2) restricted to [lower, upper]; either bound may be
  /// infinite.
  double truncated_normal(double mean, double sd, double lower, double upper);
  /// Draw from N(precision^-1 * rhs, precision^-1) given the Cholesky factor
  /// of the precision.
  Eigen::VectorXd gaussian_from_precision(const Eigen::LLT<Eigen::MatrixXd>& precision,
                                          const Eigen::VectorXd& rhs);

  std::mt19937_64& engine() { return engine_; }

 private:
  double standard_truncated(double lower, double upper);

  std::mt19937_64 engine_;
};

}  // namespace blipmeta

#endif  // BLIPMETA_RANDOM_HPP_
