#pragma once

// Experiments over the scrambled ensemble {U_pi : pi in S_M}: the run-time
// lower bound, success fractions, the gap-fraction statement, permutation
// invariance, and the gap-closing scaling study over n.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrem/disorder.hpp"
#include "qrem/dynamics.hpp"
#include "qrem/error.hpp"
#include "qrem/operators.hpp"
#include "qrem/random.hpp"
#include "qrem/spectra.hpp"

namespace qrem {

struct RuntimeBound {
  double m = 0.0;
  double b = 0.0;
  double epsilon = 0.0;
  double sigma = 0.0;
  double numerator = 0.0;
  /// (eps^2 b (M-1) - 2 eps sqrt(2 eps (M-1))) / (16 sigma)
  double t_lower = 0.0;
  /// Numerator <= 0: the bound says nothing.
  bool vacuous = false;
  /// eps^2 M / (128 sigma), valid as a lower estimate of t_lower(1/2, eps)
  /// when M >= max(4, 128/eps).
  double simplified = 0.0;
  bool simplified_valid = false;
};

inline RuntimeBound runtime_lower_bound(double m, double b, double epsilon, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("runtime_lower_bound needs sigma > 0");
  if (!(b > 0.0 && b <= 1.0)) throw DomainError("runtime_lower_bound needs b in (0,1]");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw DomainError("runtime_lower_bound needs epsilon in (0,1]");
  if (!(m >= 2.0)) throw DomainError("runtime_lower_bound needs M >= 2");
  RuntimeBound r;
  r.m = m;
  r.b = b;
  r.epsilon = epsilon;
  r.sigma = sigma;
  r.numerator = epsilon * epsilon * b * (m - 1.0) - 2.0 * epsilon * std::sqrt(2.0 * epsilon * (m - 1.0));
  r.t_lower = r.numerator / (16.0 * sigma);
  r.vacuous = !(r.t_lower > 0.0);
  r.simplified = epsilon * epsilon * m / (128.0 * sigma);
  r.simplified_valid = m >= std::max(4.0, 128.0 / epsilon);
  return r;
}

struct ProportionInterval {
  double lower;
  double upper;
};

/// Wilson score interval at 95%.
inline ProportionInterval wilson_interval(std::size_t successes, std::size_t trials) {
  if (trials == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  const double nn = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / nn;
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, std::min(p, centre - half)), std::min(1.0, std::max(p, centre + half))};
}

/// sqrt(p(1-p)/N)
inline double binomial_standard_error(double p, std::size_t trials) {
  return trials == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

inline std::uint64_t permutation_seed(std::uint64_t master_seed, std::size_t index) {
  return hash_words({master_seed, 0x70695f73ULL, index});
}

struct PermutationRecord {
  std::uint64_t permutation_seed = 0;
  double success_probability = 0.0;
  std::optional<double> gamma_sharp;
};

struct ScrambleReport {
  std::size_t num_permutations = 0;
  double b = 0.0;
  double T = 0.0;
  std::size_t successes = 0;
  double fraction = 0.0;
  ProportionInterval binomial_ci{0.0, 1.0};
  std::size_t failures = 0;
  std::vector<PermutationRecord> per_pi_records;
};

struct ScrambleOptions {
  StepControl control{};
  /// Also compute gamma^#_min,pi from an s-scan for each permutation.
  bool with_gap_functional = false;
  ScanOptions scan{.coarse_points = 32};
};

/// Evolves one trajectory per given permutation and counts those in P_M(b).
/// Failed trajectories are counted in `failures` and excluded from the fraction.
inline ScrambleReport scramble_experiment(const DisorderRealization& d, double T, double b,
                                          std::span<const std::pair<std::uint64_t, Permutation>> permutations,
                                          const ScrambleOptions& opt = {}) {
  if (!(b >= 0.0 && b <= 1.0)) throw DomainError("success threshold b must lie in [0,1]");
  ScrambleReport rep;
  rep.b = b;
  rep.T = T;
  for (const auto& [seed, pi] : permutations) {
    PermutationRecord rec;
    rec.permutation_seed = seed;
    try {
      const auto r = evolve(d, pi, T, opt.control);
      rec.success_probability = success_probability(r, pi, d.j0());
      if (opt.with_gap_functional) {
        const auto scan = scan_gap(d, ScanParameter::S, 0.0, 1.0, opt.scan, &pi);
        rec.gamma_sharp = gap_functional(scan.gaps);
      }
    } catch (const Error&) {
      ++rep.failures;
      continue;
    }
    ++rep.num_permutations;
    if (rec.success_probability >= b) ++rep.successes;
    rep.per_pi_records.push_back(rec);
  }
  rep.fraction = rep.num_permutations == 0 ? 0.0 : static_cast<double>(rep.successes) / rep.num_permutations;
  rep.binomial_ci = wilson_interval(rep.successes, rep.num_permutations);
  return rep;
}

/// Uniformly random permutations from streams derived from master_seed.
inline ScrambleReport scramble_experiment(const DisorderRealization& d, double T, double b,
                                          std::size_t num_permutations, std::uint64_t master_seed,
                                          const ScrambleOptions& opt = {}) {
  if (d.n() > 8) throw DomainError("scramble_experiment is limited to n <= 8");
  if (num_permutations < 10) throw DomainError("scramble_experiment needs at least 10 permutations");
  std::vector<std::pair<std::uint64_t, Permutation>> perms;
  perms.reserve(num_permutations);
  for (std::size_t i = 0; i < num_permutations; ++i) {
    const std::uint64_t seed = permutation_seed(master_seed, i);
    perms.emplace_back(seed, Permutation::random(d.dim(), seed));
  }
  return scramble_experiment(d, T, b, perms, opt);
}

struct GapFractionRecord {
  std::uint64_t permutation_seed = 0;
  double min_gap = 0.0;
  double gamma_sharp = 0.0;
  bool above_threshold = false;
  /// Success probability at T = T_M(1/2, eps)/2, evaluated for permutations above threshold.
  std::optional<double> success_at_half_runtime;
  /// Infidelity at T = T_M(1/2, eps)/2 against n_M/(T gamma^#).
  std::optional<double> infidelity_at_half_runtime;
  std::optional<double> adiabatic_estimate;
};

struct GapFractionReport {
  double epsilon = 0.0;
  std::size_t num_permutations = 0;
  double n_m = 0.0;
  double sigma = 0.0;
  RuntimeBound runtime{};
  /// 2 sqrt(2) n_M / T_M(1/2, eps); +inf when T_M is vacuous.
  double threshold = std::numeric_limits<double>::infinity();
  /// max(||h||^3, ||h||^2): no gamma^# can exceed it.
  double gamma_sharp_ceiling = 0.0;
  std::size_t above_threshold = 0;
  double fraction = 0.0;
  ProportionInterval binomial_ci{0.0, 1.0};
  /// M >= max(4, 128/eps).
  bool premise_holds = false;
  /// Threshold above the ceiling: the statement cannot be tested at this size.
  bool vacuous = false;
  /// Permutations above threshold whose success at T_M/2 fell below 1/2.
  std::size_t implication_violations = 0;
  /// Permutations whose infidelity at T_M/2 exceeded n_M / (T gamma^#).
  std::size_t adiabatic_estimate_violations = 0;
  std::vector<GapFractionRecord> records;
};

struct GapFractionOptions {
  ScanOptions scan{.coarse_points = 32};
  StepControl control{};
  /// Also evolve every permutation at T_M/2 and check the adiabatic estimate.
  bool check_adiabatic_estimate = true;
};

inline GapFractionReport gap_fraction_experiment(const DisorderRealization& d, double epsilon,
                                                 std::size_t num_permutations, std::uint64_t master_seed,
                                                 const GapFractionOptions& opt = {}) {
  if (d.n() > 8) throw DomainError("gap_fraction_experiment is limited to n <= 8");
  if (num_permutations == 0) throw DomainError("gap_fraction_experiment needs at least one permutation");
  GapFractionReport rep;
  rep.epsilon = epsilon;
  rep.num_permutations = num_permutations;
  const auto rc = runtime_constant(d, false);
  rep.n_m = rc.n_m;
  rep.sigma = sigma_m(d);
  const double m = static_cast<double>(d.dim());
  rep.runtime = runtime_lower_bound(m, 0.5, epsilon, rep.sigma);
  rep.premise_holds = m >= std::max(4.0, 128.0 / epsilon);
  if (!rep.runtime.vacuous) rep.threshold = 2.0 * std::numbers::sqrt2 * rep.n_m / rep.runtime.t_lower;
  const double hnorm = std::max(2.0 * d.n(), sup_norm(d.energies()));
  rep.gamma_sharp_ceiling = std::max(hnorm * hnorm * hnorm, hnorm * hnorm);
  rep.vacuous = !(rep.threshold <= rep.gamma_sharp_ceiling);
  const double half_runtime = rep.runtime.vacuous ? 0.0 : 0.5 * rep.runtime.t_lower;

  for (std::size_t i = 0; i < num_permutations; ++i) {
    GapFractionRecord rec;
    rec.permutation_seed = permutation_seed(master_seed, i);
    const auto pi = Permutation::random(d.dim(), rec.permutation_seed);
    const auto scan = scan_gap(d, ScanParameter::S, 0.0, 1.0, opt.scan, &pi);
    rec.min_gap = scan.min_gap;
    rec.gamma_sharp = gap_functional(scan.gaps);
    if (rec.gamma_sharp > rep.gamma_sharp_ceiling) {
      throw InvariantViolation("gamma^# exceeds the operator-norm ceiling");
    }
    rec.above_threshold = rec.gamma_sharp >= rep.threshold;
    if (rec.above_threshold) ++rep.above_threshold;
    if (half_runtime > 0.0 && (rec.above_threshold || opt.check_adiabatic_estimate)) {
      const auto r = evolve(d, pi, half_runtime, opt.control);
      rec.infidelity_at_half_runtime = r.infidelity;
      rec.adiabatic_estimate = rep.n_m / (half_runtime * rec.gamma_sharp);
      if (r.infidelity > *rec.adiabatic_estimate + 1e-6) ++rep.adiabatic_estimate_violations;
      if (rec.above_threshold) {
        rec.success_at_half_runtime = r.success_probability;
        if (r.success_probability < 0.5) ++rep.implication_violations;
      }
    }
    rep.records.push_back(rec);
  }
  rep.fraction = static_cast<double>(rep.above_threshold) / static_cast<double>(num_permutations);
  rep.binomial_ci = wilson_interval(rep.above_threshold, num_permutations);
  return rep;
}

struct ScalingFit {
  std::vector<double> n_values;
  std::vector<double> median_min_gaps;
  /// d log2(gap) / dn
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Least-squares line through (n, log2 gap).
inline ScalingFit fit_log2_scaling(std::span<const double> n_values, std::span<const double> gaps) {
  if (n_values.size() != gaps.size()) throw DimensionMismatch("fit_log2_scaling needs matched sequences");
  if (n_values.size() < 2) throw DomainError("fit_log2_scaling needs at least two points");
  ScalingFit fit;
  fit.n_values.assign(n_values.begin(), n_values.end());
  fit.median_min_gaps.assign(gaps.begin(), gaps.end());
  const double k = static_cast<double>(n_values.size());
  double mx = 0.0, my = 0.0;
  std::vector<double> y(gaps.size());
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    if (!(gaps[i] > 0.0)) throw DomainError("fit_log2_scaling needs positive gaps");
    y[i] = std::log2(gaps[i]);
    mx += n_values[i];
    my += y[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sxx += (n_values[i] - mx) * (n_values[i] - mx);
    sxy += (n_values[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_log2_scaling needs at least two distinct n");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * n_values[i]);
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : (ss_res == 0.0 ? 1.0 : 0.0);
  return fit;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of an empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

/// Samples landscape `index` for spin count n, resampling with a derived seed
/// on the (probability-zero) event of a tied minimum.
inline DisorderRealization sample_task_disorder(std::uint64_t master_seed, int n, std::size_t index) {
  std::uint64_t seed = hash_words({master_seed, static_cast<std::uint64_t>(n), index});
  for (int attempt = 0;; ++attempt) {
    try {
      return sample_disorder(n, seed);
    } catch (const DuplicateMinimum&) {
      if (attempt > 8) throw;
      seed = hash_words({seed, 0x72657361ULL});
    }
  }
}

struct ScalingRecord {
  int n;
  std::uint64_t seed;
  double min_gap;
  double argmin_kappa;
  bool refined;
};

struct ScalingStudy {
  ScalingFit fit;
  std::vector<ScalingRecord> records;
  std::vector<double> median_argmin;
  /// Smallest C with median gap <= C n^5 2^(-n/6) at every n studied.
  double bound_constant = 0.0;
  bool strictly_decreasing = false;
  double variational_min_slack = std::numeric_limits<double>::infinity();
};

inline ScalingStudy summarize_scaling(std::span<const int> n_values, std::vector<ScalingRecord> records) {
  ScalingStudy out;
  std::vector<double> ns, medians;
  for (int n : n_values) {
    std::vector<double> gaps, args;
    for (const auto& r : records) {
      if (r.n == n) {
        gaps.push_back(r.min_gap);
        args.push_back(r.argmin_kappa);
      }
    }
    if (gaps.empty()) throw DomainError("no scaling records for n=" + std::to_string(n));
    ns.push_back(n);
    medians.push_back(median(gaps));
    out.median_argmin.push_back(median(args));
  }
  out.fit = fit_log2_scaling(ns, medians);
  out.strictly_decreasing = true;
  for (std::size_t i = 0; i < medians.size(); ++i) {
    if (i > 0 && !(medians[i] < medians[i - 1])) out.strictly_decreasing = false;
    out.bound_constant = std::max(out.bound_constant, medians[i] / (std::pow(ns[i], 5.0) * std::exp2(-ns[i] / 6.0)));
  }
  out.records = std::move(records);
  return out;
}

/// min_kappa Gamma over [kappa_lo, kappa_hi] for `seeds_per_n` landscapes at
/// each n, reduced to disorder medians and fitted in log2.
inline ScalingStudy gap_scaling_study(std::span<const int> n_values, std::size_t seeds_per_n, double kappa_lo,
                                      double kappa_hi, std::uint64_t master_seed, const ScanOptions& scan = {}) {
  if (seeds_per_n < 10) throw DomainError("gap_scaling_study needs at least 10 seeds per n");
  for (int n : n_values) {
    if (n < 6 || n > 16) throw DomainError("gap_scaling_study supports n in [6, 16]");
  }
  std::vector<ScalingRecord> records;
  double slack = std::numeric_limits<double>::infinity();
  for (int n : n_values) {
    for (std::size_t i = 0; i < seeds_per_n; ++i) {
      const auto d = sample_task_disorder(master_seed, n, i);
      const auto res = scan_gap(d, ScanParameter::Kappa, kappa_lo, kappa_hi, scan);
      slack = std::min(slack, res.variational_min_slack);
      records.push_back({n, d.seed(), res.min_gap, res.argmin, res.refined});
    }
  }
  auto out = summarize_scaling(n_values, std::move(records));
  out.variational_min_slack = slack;
  return out;
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value with Stephens' small-sample correction.
inline double ks_two_sample_pvalue(double d, std::size_t n1, std::size_t n2) {
  const double en = std::sqrt(static_cast<double>(n1) * static_cast<double>(n2) / static_cast<double>(n1 + n2));
  const double lambda = (en + 0.12 + 0.11 / en) * d;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline double ks_two_sample_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("two-sample KS needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

enum class InvariantStatistic { SigmaM, SupNorm, MinGap };

struct InvarianceReport {
  InvariantStatistic statistic;
  std::size_t num_permutations = 0;
  double reference = 0.0;
  /// Permutations whose statistic differed from the reference (exact comparison).
  std::size_t mismatches = 0;
  /// MinGap only: samples over permutations of the fixed landscape and over fresh landscapes.
  std::vector<double> permuted_samples;
  std::vector<double> fresh_samples;
  double ks_statistic = 0.0;
  double p_value = 1.0;
};

struct InvarianceOptions {
  ScanOptions scan{.coarse_points = 32};
  /// MinGap: draw a fresh landscape for every permutation as well, so both
  /// samples are i.i.d. from the marginal law (the identity the averaging
  /// step relies on). When false the landscape is held fixed.
  bool fresh_landscape_per_permutation = false;
};

/// Checks that sigma_M and ||u||_inf are exactly invariant under scrambling,
/// or compares min-gap samples over s for scrambled vs fresh landscapes.
inline InvarianceReport permutation_invariance_check(const DisorderRealization& d, InvariantStatistic statistic,
                                                     std::size_t num_permutations, std::uint64_t master_seed,
                                                     const InvarianceOptions& opt = {}) {
  InvarianceReport rep;
  rep.statistic = statistic;
  rep.num_permutations = num_permutations;
  if (statistic != InvariantStatistic::MinGap) {
    auto stat = [&](std::span<const double> u) {
      return statistic == InvariantStatistic::SigmaM ? sigma_m(u) : sup_norm(u);
    };
    rep.reference = stat(d.energies());
    for (std::size_t i = 0; i < num_permutations; ++i) {
      const auto pi = Permutation::random(d.dim(), permutation_seed(master_seed, i));
      const RealVector scrambled = scramble(d.energies(), pi);
      if (stat(scrambled) != rep.reference) ++rep.mismatches;
    }
    return rep;
  }
  if (d.n() > 6) throw DomainError("min-gap invariance check is limited to n <= 6");
  auto min_gap = [&](const DisorderRealization& land, const Permutation* pi) {
    return scan_gap(land, ScanParameter::S, 0.0, 1.0, opt.scan, pi).min_gap;
  };
  rep.reference = min_gap(d, nullptr);
  for (std::size_t i = 0; i < num_permutations; ++i) {
    const auto pi = Permutation::random(d.dim(), permutation_seed(master_seed, i));
    if (opt.fresh_landscape_per_permutation) {
      const auto land = sample_task_disorder(hash_words({master_seed, 0x7065726dULL}), d.n(), i);
      rep.permuted_samples.push_back(min_gap(land, &pi));
    } else {
      rep.permuted_samples.push_back(min_gap(d, &pi));
    }
    const auto fresh = sample_task_disorder(hash_words({master_seed, 0x66726573ULL}), d.n(), i);
    rep.fresh_samples.push_back(min_gap(fresh, nullptr));
  }
  rep.ks_statistic = ks_two_sample_statistic(rep.permuted_samples, rep.fresh_samples);
  rep.p_value = ks_two_sample_pvalue(rep.ks_statistic, rep.permuted_samples.size(), rep.fresh_samples.size());
  return rep;
}

}  // namespace qrem
