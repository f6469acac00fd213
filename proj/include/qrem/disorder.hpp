#pragma once

// Random energy model landscapes and their extreme-value statistics.
//
// A landscape assigns u(sigma) = sqrt(n) * g(sigma) to each of the M = 2^n
// spin configurations, with g i.i.d. standard normal. Energies are a pure
// function of (n, seed); only the summary {n, seed, j0, u0, u1} is ever
// serialized.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qrem/error.hpp"
#include "qrem/gaussian.hpp"
#include "qrem/random.hpp"

namespace qrem {

/// Conjectured QREM transition coupling 1/sqrt(2 ln 2).
inline const double kappa_c = 1.0 / std::sqrt(2.0 * std::numbers::ln2);

inline constexpr int max_spins = 24;

inline std::size_t dimension_of(int n) { return std::size_t{1} << n; }

class DisorderRealization {
 public:
  /// Validates length 2^n, finiteness and a strict unique minimum.
  DisorderRealization(int n, std::vector<double> energies, std::uint64_t seed = 0)
      : n_(n), seed_(seed), energies_(std::move(energies)) {
    if (n < 1 || n > max_spins) throw DomainError("spin count must lie in [1, 24], got " + std::to_string(n));
    if (energies_.size() != dimension_of(n)) {
      throw DimensionMismatch("landscape needs 2^" + std::to_string(n) + " energies, got " +
                              std::to_string(energies_.size()));
    }
    u0_ = std::numeric_limits<double>::infinity();
    u1_ = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < energies_.size(); ++i) {
      const double e = energies_[i];
      if (!std::isfinite(e)) throw DomainError("non-finite energy at index " + std::to_string(i));
      if (e < u0_) {
        u1_ = u0_;
        u0_ = e;
        j0_ = i;
      } else if (e < u1_) {
        u1_ = e;
      }
    }
    if (!(u0_ < u1_)) {
      throw DuplicateMinimum("landscape minimum " + std::to_string(u0_) + " is attained twice (seed " +
                             std::to_string(seed) + ")");
    }
  }

  int n() const noexcept { return n_; }
  std::size_t dim() const noexcept { return energies_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }
  std::span<const double> energies() const noexcept { return energies_; }
  double operator[](std::size_t i) const noexcept { return energies_[i]; }
  std::size_t j0() const noexcept { return j0_; }
  double u0() const noexcept { return u0_; }
  double u1() const noexcept { return u1_; }

 private:
  int n_;
  std::uint64_t seed_;
  std::vector<double> energies_;
  std::size_t j0_ = 0;
  double u0_ = 0.0;
  double u1_ = 0.0;
};

/// 2^n energies sqrt(n) * g(sigma), g drawn from a counter-based stream
/// keyed by (seed, sigma). Throws DuplicateMinimum on a tie; resampling with
/// a derived seed is left to the caller.
inline DisorderRealization sample_disorder(int n, std::uint64_t seed) {
  if (n < 1 || n > max_spins) throw DomainError("spin count must lie in [1, 24], got " + std::to_string(n));
  const CounterRng rng(hash_words({seed, static_cast<std::uint64_t>(n)}));
  const double scale = std::sqrt(static_cast<double>(n));
  std::vector<double> energies(dimension_of(n));
  for (std::size_t i = 0; i < energies.size(); ++i) energies[i] = scale * rng.normal(i);
  return DisorderRealization(n, std::move(energies), seed);
}

inline nlohmann::json to_json(const DisorderRealization& d) {
  return {{"n", d.n()}, {"seed", d.seed()}, {"j0", d.j0()}, {"u0", d.u0()}, {"u1", d.u1()}};
}

/// Rebuilds a realization from its JSON record by regenerating the energies.
inline DisorderRealization realization_from_json(const nlohmann::json& j) {
  auto d = sample_disorder(j.at("n").get<int>(), j.at("seed").get<std::uint64_t>());
  if (d.j0() != j.at("j0").get<std::size_t>()) throw InvariantViolation("regenerated landscape disagrees on j0");
  return d;
}

/// v with P(g >= v) = 2^-n e^-x. Needs x > -n ln 2 (tail probability < 1).
/// Bisection on the log-tail over [-40, 40] down to 1e-3, then Newton to
/// relative accuracy 1e-10.
inline double v_quantile(int n, double x) {
  const double log_target = -n * std::numbers::ln2 - x;
  if (!(log_target < 0.0)) {
    throw DomainError("v_quantile needs 2^-n e^-x < 1, i.e. x > -n ln 2; got n=" + std::to_string(n) +
                      ", x=" + std::to_string(x));
  }
  double lo = -40.0;
  double hi = 40.0;
  if (!(log_target > normal_log_upper_tail(hi))) {
    throw DomainError("v_quantile: tail probability underflows the bracket [-40, 40]");
  }
  if (!(log_target < normal_log_upper_tail(lo))) {
    throw DomainError("v_quantile: tail probability indistinguishable from 1");
  }
  // log Q is strictly decreasing.
  while (hi - lo > 1e-3) {
    const double mid = 0.5 * (lo + hi);
    if (normal_log_upper_tail(mid) > log_target) lo = mid;
    else hi = mid;
  }
  double v = 0.5 * (lo + hi);
  for (int it = 0; it < 50; ++it) {
    const double log_tail = normal_log_upper_tail(v);
    // d/dv log Q(v) = -phi(v)/Q(v)
    const double slope = -std::exp(normal_log_density(v) - log_tail);
    const double step = (log_tail - log_target) / slope;
    v -= step;
    if (std::abs(step) <= 1e-12 * std::max(1.0, std::abs(v))) break;
  }
  return v;
}

/// Explicit large-n expansion of v_quantile with the o(1) term dropped.
inline double asymptotic_v(int n, double x) {
  const double nn = static_cast<double>(n);
  return (nn / kappa_c + kappa_c * x - 0.5 * kappa_c * std::log(4.0 * std::numbers::pi * nn * std::numbers::ln2)) /
         std::sqrt(nn);
}

/// Exact finite-n law P(min u >= -sqrt(n) v_quantile(n, x)) = (1 - 2^-n e^-x)^(2^n).
inline double min_law_cdf_complement(int n, double x) {
  const double tail = std::exp(-n * std::numbers::ln2 - x);
  if (!(tail < 1.0)) throw DomainError("min_law_cdf_complement needs 2^-n e^-x < 1");
  return std::exp(std::ldexp(1.0, n) * std::log1p(-tail));
}

/// Gumbel limit e^{-e^{-x}} of min_law_cdf_complement.
inline double gumbel_limit(double x) { return std::exp(-std::exp(-x)); }

/// The x at which -sqrt(n) v_quantile(n, x) equals an observed minimum m:
/// x = -ln(2^n Q(-m/sqrt(n))).
inline double min_to_extreme_coordinate(int n, double m) {
  return -(n * std::numbers::ln2 + normal_log_upper_tail(-m / std::sqrt(static_cast<double>(n))));
}

/// Distribution function P(min u <= m) under the exact finite-n law.
inline double min_law_cdf(int n, double m) {
  const double log_tail = normal_log_upper_tail(-m / std::sqrt(static_cast<double>(n)));
  // 1 - (1 - Q)^M, with log1p/expm1 for accuracy at both ends.
  return -std::expm1(std::ldexp(1.0, n) * std::log1p(-std::exp(log_tail)));
}

/// Explicit rescaling tau(u) = u/kappa_c + n/kappa_c^2 - 1/2 ln(4 pi n ln 2).
inline double rescale_energy(int n, double u) {
  const double nn = static_cast<double>(n);
  return u / kappa_c + nn / (kappa_c * kappa_c) - 0.5 * std::log(4.0 * std::numbers::pi * nn * std::numbers::ln2);
}

inline std::vector<double> rescale_landscape(const DisorderRealization& d) {
  std::vector<double> out(d.dim());
  std::transform(d.energies().begin(), d.energies().end(), out.begin(),
                 [n = d.n()](double u) { return rescale_energy(n, u); });
  return out;
}

/// Exact finite-n version of the rescaled process, -v_n^{-1}(-g):
/// tau = n ln 2 + ln Phi(u/sqrt(n)). The number of points below t has mean
/// exactly e^t at every n; rescale_energy is its large-n expansion.
inline double exact_rescale_energy(int n, double u) {
  return n * std::numbers::ln2 + normal_log_upper_tail(-u / std::sqrt(static_cast<double>(n)));
}

inline std::vector<double> exact_rescale_landscape(const DisorderRealization& d) {
  std::vector<double> out(d.dim());
  std::transform(d.energies().begin(), d.energies().end(), out.begin(),
                 [n = d.n()](double u) { return exact_rescale_energy(n, u); });
  return out;
}

/// sigma_M(u) = sqrt(sum_k (u(k) - min u)^2) over a raw sequence. Summed in
/// sorted order, so the result is bit-identical under any permutation of u.
inline double sigma_m(std::span<const double> u) {
  if (u.empty()) throw DomainError("sigma_m of an empty sequence");
  std::vector<double> sorted(u.begin(), u.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  double acc = 0.0;
  for (double e : sorted) acc += (e - lo) * (e - lo);
  const double sigma = std::sqrt(acc);
  if (!(sigma > 0.0)) throw DomainError("sigma_m is zero: all energies are equal");
  return sigma;
}

inline double sup_norm(std::span<const double> u) {
  double m = 0.0;
  for (double e : u) m = std::max(m, std::abs(e));
  return m;
}

inline double sigma_m(const DisorderRealization& d) {
  const double sigma = sigma_m(d.energies());
  if (sigma > std::sqrt(static_cast<double>(d.dim())) * 2.0 * sup_norm(d.energies())) {
    throw InvariantViolation("sigma_M exceeds sqrt(M) * 2 ||u||_inf");
  }
  return sigma;
}

struct SupNorm {
  double value;
  /// Whether the high-probability event ||u||_inf <= 2n/kappa_c holds.
  bool within_extreme_bound;
  double threshold;
};

inline double sup_norm_threshold(int n) { return 2.0 * n / kappa_c; }

inline SupNorm sup_norm(const DisorderRealization& d) {
  const double value = sup_norm(d.energies());
  const double threshold = sup_norm_threshold(d.n());
  return {value, value <= threshold, threshold};
}

/// One-sample Kolmogorov-Smirnov distance of `samples` against a CDF.
template <class Cdf>
double ks_distance(std::vector<double> samples, Cdf&& cdf) {
  if (samples.empty()) throw DomainError("ks_distance of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double count = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, (i + 1) / count - f, f - i / count});
  }
  return std::clamp(d, 0.0, 1.0);
}

struct ExtremeSummary {
  int n = 0;
  std::size_t samples = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> minima;
  std::vector<double> rescaled;
  double ks_statistic = 0.0;
};

/// Samples `count` landscapes with seeds derived from (master_seed, n, i)
/// and compares the empirical law of min u with the exact finite-n law.
inline ExtremeSummary summarize_extremes(int n, std::size_t count, std::uint64_t master_seed) {
  ExtremeSummary s;
  s.n = n;
  s.samples = count;
  s.seeds.reserve(count);
  s.minima.reserve(count);
  s.rescaled.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t seed = hash_words({master_seed, static_cast<std::uint64_t>(n), i});
    const auto d = sample_disorder(n, seed);
    s.seeds.push_back(seed);
    s.minima.push_back(d.u0());
    s.rescaled.push_back(rescale_energy(n, d.u0()));
  }
  s.ks_statistic = ks_distance(s.minima, [n](double m) { return min_law_cdf(n, m); });
  return s;
}

}  // namespace qrem
