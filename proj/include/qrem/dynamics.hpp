#pragma once

// Adiabatic search dynamics i d/dt psi = h(t/T) psi with
// h(s) = -(1-s) Delta + s U_pi, started in the uniform state, plus the
// explicit adiabatic-theorem error bound and the run-time constant n_M.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qrem/disorder.hpp"
#include "qrem/error.hpp"
#include "qrem/operators.hpp"
#include "qrem/spectra.hpp"

namespace qrem {

/// -a Delta + b D applied to complex vectors.
struct DriverProblemPair {
  int n;
  std::span<const double> diag;

  void apply(double a, double b, std::span<const Complex> x, std::span<Complex> y) const {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (b * diag[i]) * x[i];
    if (a != 0.0) add_laplacian<Complex>(n, -a, x, y);
  }
};

struct KrylovStep {
  bool converged = false;
  std::size_t matvecs = 0;
  double error_estimate = 0.0;
};

/// psi <- exp(-i tau (-a Delta + b D)) psi by a Lanczos projection. The
/// projected exponential is unitary and the basis is kept orthonormal, so the
/// norm is preserved to rounding whatever the subspace size.
inline KrylovStep krylov_expm(const DriverProblemPair& h, double a, double b, double tau, StateVector& psi,
                              double tol, std::size_t max_dim) {
  const std::size_t dim = psi.size();
  const std::size_t mmax = std::min(max_dim, dim);
  double beta0 = 0.0;
  for (const auto& z : psi) beta0 += std::norm(z);
  beta0 = std::sqrt(beta0);
  KrylovStep out;
  if (beta0 == 0.0 || tau == 0.0) {
    out.converged = true;
    return out;
  }

  thread_local std::vector<StateVector> basis;
  if (basis.size() < mmax + 1) basis.resize(mmax + 1);
  for (std::size_t k = 0; k <= mmax; ++k) basis[k].resize(dim);
  std::vector<double> alpha, beta;
  for (std::size_t i = 0; i < dim; ++i) basis[0][i] = psi[i] / beta0;

  Eigen::VectorXcd coeffs;
  std::size_t m = 0;
  for (std::size_t j = 0; j < mmax; ++j) {
    StateVector& w = basis[j + 1];
    h.apply(a, b, basis[j], w);
    ++out.matvecs;
    // Full reorthogonalization; Krylov dimensions stay small.
    double aj = 0.0;
    for (std::size_t i = 0; i < dim; ++i) aj += std::real(std::conj(basis[j][i]) * w[i]);
    alpha.push_back(aj);
    for (std::size_t k = 0; k <= j; ++k) {
      Complex dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += std::conj(basis[k][i]) * w[i];
      for (std::size_t i = 0; i < dim; ++i) w[i] -= dot * basis[k][i];
    }
    for (std::size_t k = 0; k <= j; ++k) {
      Complex dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += std::conj(basis[k][i]) * w[i];
      for (std::size_t i = 0; i < dim; ++i) w[i] -= dot * basis[k][i];
    }
    double bj = 0.0;
    for (const auto& z : w) bj += std::norm(z);
    bj = std::sqrt(bj);
    m = j + 1;

    const auto mm = static_cast<Eigen::Index>(m);
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(mm, mm);
    for (Eigen::Index i = 0; i < mm; ++i) {
      t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < mm) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    const Eigen::MatrixXd& q = es.eigenvectors();
    Eigen::VectorXcd phase(mm);
    for (Eigen::Index i = 0; i < mm; ++i) phase[i] = std::exp(Complex(0.0, -tau * es.eigenvalues()[i])) * q(0, i);
    coeffs = q.cast<Complex>() * phase;
    const bool breakdown = bj <= 1e-13 * (std::abs(aj) + 1.0);
    out.error_estimate = breakdown ? 0.0 : beta0 * bj * std::abs(coeffs[mm - 1]);
    if (breakdown || (m >= 3 && out.error_estimate <= tol)) {
      out.converged = true;
      break;
    }
    beta.push_back(bj);
    for (auto& z : w) z /= bj;
  }
  if (!out.converged) return out;
  std::fill(psi.begin(), psi.end(), Complex{});
  for (std::size_t k = 0; k < m; ++k) {
    const Complex c = beta0 * coeffs[static_cast<Eigen::Index>(k)];
    for (std::size_t i = 0; i < dim; ++i) psi[i] += c * basis[k][i];
  }
  return out;
}

enum class Integrator {
  /// exp(-i dt h(t + dt/2)); second order.
  ExponentialMidpoint,
  /// Two-exponential commutator-free Magnus scheme on Gauss nodes; fourth order.
  CommutatorFree4,
};

inline int order_of(Integrator s) { return s == Integrator::ExponentialMidpoint ? 2 : 4; }

struct StepControl {
  Integrator scheme = Integrator::CommutatorFree4;
  /// Local error target per unit time (step-doubling estimate).
  double tol_per_unit_time = 1e-9;
  bool adaptive = true;
  /// Upper bound on the step; 0 means no bound beyond max_norm_step.
  double max_step = 0.0;
  /// Steps satisfy ||h|| dt <= max_norm_step. Very long adiabatic runs may
  /// raise it together with krylov_max; the step-doubling control still
  /// enforces tol_per_unit_time.
  double max_norm_step = 0.5;
  std::size_t krylov_max = 40;
  double norm_drift_limit = 1e-8;
  std::size_t max_steps = 20'000'000;
};

struct EvolutionResult {
  double t_final = 0.0;
  StateVector final_state;
  std::size_t target = 0;
  double success_probability = 0.0;
  double infidelity = 0.0;
  double norm_drift = 0.0;
  std::size_t steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t matvecs = 0;
};

inline StateVector uniform_state(std::size_t dim) {
  return StateVector(dim, Complex(1.0 / std::sqrt(static_cast<double>(dim)), 0.0));
}

namespace detail {

/// One step of the chosen scheme for h(s) = -(1-s) Delta + s D on [t, t+dt].
inline bool propagate_step(const DriverProblemPair& h, Integrator scheme, double t, double dt, double T,
                           StateVector& psi, double krylov_tol, std::size_t krylov_max, std::size_t& matvecs) {
  auto expo = [&](double s_weighted, double weight_sum, double tau) {
    // weight_sum * (-Delta) + s_weighted * (D + Delta): coefficient of -Delta is weight_sum - s_weighted.
    const auto r = krylov_expm(h, weight_sum - s_weighted, s_weighted, tau, psi, krylov_tol, krylov_max);
    matvecs += r.matvecs;
    return r.converged;
  };
  if (scheme == Integrator::ExponentialMidpoint) {
    const double s = (t + 0.5 * dt) / T;
    return expo(s, 1.0, dt);
  }
  const double r3 = std::sqrt(3.0);
  const double s1 = (t + (0.5 - r3 / 6.0) * dt) / T;
  const double s2 = (t + (0.5 + r3 / 6.0) * dt) / T;
  const double w1 = 0.25 + r3 / 6.0;
  const double w2 = 0.25 - r3 / 6.0;
  // exp(-i dt (w2 H1 + w1 H2)) exp(-i dt (w1 H1 + w2 H2)); each exponent has
  // total weight 1/2 and is linear in s because h is.
  if (!expo(w1 * s1 + w2 * s2, 0.5, dt)) return false;
  return expo(w2 * s1 + w1 * s2, 0.5, dt);
}

inline double distance(const StateVector& a, const StateVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a[i] - b[i]);
  return std::sqrt(s);
}

inline double norm(const StateVector& a) {
  double s = 0.0;
  for (const auto& z : a) s += std::norm(z);
  return std::sqrt(s);
}

}  // namespace detail

/// Evolves the uniform state under h(t/T) = -(1 - t/T) Delta + (t/T) D for
/// t in [0, T]. `target` is the basis index of the ground state of D.
inline EvolutionResult evolve_diagonal(std::span<const double> diag, std::size_t target, double T,
                                       const StepControl& control = {}) {
  const int n = spin_count_of(diag.size());
  if (!(T >= 0.0) || !std::isfinite(T)) throw DomainError("adiabatic time T must be finite and >= 0");
  if (target >= diag.size()) throw DomainError("target index out of range");
  const DriverProblemPair h{n, diag};
  EvolutionResult r;
  r.t_final = T;
  r.target = target;
  r.final_state = uniform_state(diag.size());
  StateVector& psi = r.final_state;

  const double hnorm = std::max({2.0 * n, sup_norm(diag), 1e-300});
  const double norm_cap = control.max_norm_step / hnorm;
  const double dt_cap = control.max_step > 0.0 ? std::min(control.max_step, norm_cap) : norm_cap;
  const int p = order_of(control.scheme);
  const double tol = control.tol_per_unit_time;

  double t = 0.0;
  double dt = dt_cap;
  if (!control.adaptive && T > 0.0) {
    const double steps = std::ceil(T / dt_cap - 1e-12);
    dt = T / steps;
  }
  StateVector big, small;
  while (t < T) {
    if (r.steps + r.rejected_steps >= control.max_steps) {
      throw ConvergenceError("step limit reached at t=" + std::to_string(t) + " of T=" + std::to_string(T));
    }
    const bool last = t + dt >= T * (1.0 - 1e-14);
    const double h_step = last ? T - t : dt;
    const double ktol = std::max(1e-15, 0.01 * tol * h_step);
    if (!control.adaptive) {
      if (!detail::propagate_step(h, control.scheme, t, h_step, T, psi, ktol, control.krylov_max, r.matvecs)) {
        throw ConvergenceError("Krylov exponential failed at t=" + std::to_string(t));
      }
      t = last ? T : t + h_step;
      ++r.steps;
    } else {
      big = psi;
      small = psi;
      const bool ok = detail::propagate_step(h, control.scheme, t, h_step, T, big, ktol, control.krylov_max, r.matvecs) &&
                      detail::propagate_step(h, control.scheme, t, 0.5 * h_step, T, small, ktol, control.krylov_max,
                                             r.matvecs) &&
                      detail::propagate_step(h, control.scheme, t + 0.5 * h_step, 0.5 * h_step, T, small, ktol,
                                             control.krylov_max, r.matvecs);
      const double err = ok ? detail::distance(big, small) / (std::ldexp(1.0, p) - 1.0)
                            : std::numeric_limits<double>::infinity();
      // The floor keeps rounding noise from rejecting a short final step.
      if (err <= std::max(tol * h_step, 1e-14)) {
        psi.swap(small);
        t = last ? T : t + h_step;
        ++r.steps;
        const double factor = err > 0.0 ? 0.9 * std::pow(tol * h_step / err, 1.0 / p) : 2.0;
        dt = std::min(dt_cap, h_step * std::clamp(factor, 0.2, 2.0));
      } else {
        ++r.rejected_steps;
        const double factor = std::isfinite(err) ? 0.9 * std::pow(tol * h_step / err, 1.0 / p) : 0.25;
        dt = h_step * std::clamp(factor, 0.1, 0.5);
        if (dt < 1e-14 * std::max(T, 1.0)) {
          throw ConvergenceError("step size underflow at t=" + std::to_string(t));
        }
      }
    }
    if (r.steps % 1024 == 0 && std::abs(detail::norm(psi) - 1.0) > control.norm_drift_limit) {
      throw ConvergenceError("norm drift above limit at t=" + std::to_string(t));
    }
  }
  r.norm_drift = std::abs(detail::norm(psi) - 1.0);
  if (r.norm_drift > control.norm_drift_limit) {
    throw ConvergenceError("norm drift " + std::to_string(r.norm_drift) + " above limit at t=T");
  }
  // T = 0 leaves the uniform state untouched; its overlap is 2^-n exactly.
  r.success_probability = T == 0.0 ? 1.0 / static_cast<double>(diag.size()) : std::min(1.0, std::norm(psi[target]));
  // Summing the off-target weight directly avoids the cancellation in 1 - p,
  // which would put a floor of sqrt(norm drift) under long adiabatic runs.
  double off = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (i != target) off += std::norm(psi[i]);
  }
  r.infidelity = T == 0.0 ? std::sqrt(1.0 - r.success_probability) : std::min(1.0, std::sqrt(off) / detail::norm(psi));
  return r;
}

/// Scrambled adiabatic search for landscape d under permutation pi.
inline EvolutionResult evolve(const DisorderRealization& d, const Permutation& pi, double T,
                              const StepControl& control = {}) {
  const RealVector diag = scramble(d.energies(), pi);
  return evolve_diagonal(diag, pi(d.j0()), T, control);
}

/// |psi(T)(pi(j0))|^2.
inline double success_probability(const EvolutionResult& r, const Permutation& pi, std::size_t j0) {
  if (j0 >= pi.size()) throw DomainError("minimizer index out of range");
  const std::size_t idx = pi(j0);
  if (idx >= r.final_state.size()) throw DomainError("success index out of range");
  return std::min(1.0, std::norm(r.final_state[idx]));
}

inline nlohmann::json evolution_record(const DisorderRealization& d, std::uint64_t permutation_seed,
                                       const EvolutionResult& r) {
  return {{"n", d.n()},
          {"seed", d.seed()},
          {"permutation_seed", permutation_seed},
          {"T", r.t_final},
          {"success_probability", r.success_probability},
          {"infidelity", r.infidelity},
          {"norm_drift", r.norm_drift},
          {"steps", r.steps}};
}

struct AdiabaticBound {
  double gamma0 = 0.0;
  double gamma1 = 0.0;
  double hprime_norm = 0.0;
  /// integral over [0,1] of 7 ||h'||^2 / gamma(s)^3 (the h'' term vanishes).
  double integral_term = 0.0;
  double T = 0.0;
  double rhs = 0.0;
  /// (s, gamma(s)) samples used, ascending in s.
  std::vector<std::pair<double, double>> gap_profile;

  /// rhs * T, the T-independent bracket.
  double numerator() const { return hprime_norm / (gamma0 * gamma0) + hprime_norm / (gamma1 * gamma1) + integral_term; }
  AdiabaticBound at(double other_T) const {
    if (!(other_T > 0.0)) throw DomainError("adiabatic bound needs T > 0");
    AdiabaticBound b = *this;
    b.T = other_T;
    b.rhs = numerator() / other_T;
    return b;
  }
};

/// Right-hand side of the adiabatic theorem for the linear schedule,
///   (1/T) [ ||h'||/gamma(0)^2 + ||h'||/gamma(1)^2 + int_0^1 7||h'||^2/gamma^3 ds ].
/// The integral is adaptive Simpson on 64 base panels with relative target
/// `rel_tol`; panels where gamma is within 2x of the running minimum get two
/// extra forced levels.
inline AdiabaticBound adiabatic_bound(const std::function<double(double)>& gap, double hprime, double T,
                                      double rel_tol = 1e-3) {
  if (!(T > 0.0)) throw DomainError("adiabatic bound needs T > 0");
  if (!(hprime >= 0.0)) throw DomainError("adiabatic bound needs ||h'|| >= 0");
  std::map<double, double> cache;
  double running_min = std::numeric_limits<double>::infinity();
  auto gamma = [&](double s) {
    auto it = cache.find(s);
    if (it != cache.end()) return it->second;
    const double g = gap(s);
    if (!(g > 0.0)) throw DomainError("adiabatic bound needs a strictly positive gap, got " + std::to_string(g) +
                                      " at s=" + std::to_string(s));
    cache.emplace(s, g);
    running_min = std::min(running_min, g);
    return g;
  };
  const double c7 = 7.0 * hprime * hprime;
  auto integrand = [&](double s) {
    const double g = gamma(s);
    return c7 / (g * g * g);
  };

  constexpr int panels = 64;
  std::vector<double> fa(panels + 1), fm(panels);
  for (int i = 0; i <= panels; ++i) fa[i] = integrand(static_cast<double>(i) / panels);
  double coarse_total = 0.0;
  for (int i = 0; i < panels; ++i) {
    const double a = static_cast<double>(i) / panels, b = static_cast<double>(i + 1) / panels;
    fm[i] = integrand(0.5 * (a + b));
    coarse_total += (b - a) / 6.0 * (fa[i] + 4.0 * fm[i] + fa[i + 1]);
  }
  const double abs_tol = rel_tol * std::abs(coarse_total);

  std::function<double(double, double, double, double, double, double, double, int, int)> refine =
      [&](double a, double b, double f_a, double f_m, double f_b, double whole, double eps, int depth, int forced) {
        const double m = 0.5 * (a + b);
        const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
        const double flm = integrand(lm), frm = integrand(rm);
        const double left = (m - a) / 6.0 * (f_a + 4.0 * flm + f_m);
        const double right = (b - m) / 6.0 * (f_m + 4.0 * frm + f_b);
        const double diff = left + right - whole;
        const bool near_min = std::min({gamma(a), gamma(m), gamma(b)}) <= 2.0 * running_min;
        if (depth >= 40 || (std::abs(diff) <= 15.0 * eps && forced <= 0 && !(near_min && forced > -2))) {
          return left + right + diff / 15.0;
        }
        const int next_forced = near_min ? forced - 1 : forced;
        return refine(a, m, f_a, flm, f_m, left, 0.5 * eps, depth + 1, next_forced) +
               refine(m, b, f_m, frm, f_b, right, 0.5 * eps, depth + 1, next_forced);
      };

  double integral = 0.0;
  for (int i = 0; i < panels; ++i) {
    const double a = static_cast<double>(i) / panels, b = static_cast<double>(i + 1) / panels;
    const double whole = (b - a) / 6.0 * (fa[i] + 4.0 * fm[i] + fa[i + 1]);
    integral += refine(a, b, fa[i], fm[i], fa[i + 1], whole, abs_tol / panels, 0, 0);
  }

  AdiabaticBound out;
  out.gamma0 = gamma(0.0);
  out.gamma1 = gamma(1.0);
  out.hprime_norm = hprime;
  out.integral_term = integral;
  out.T = T;
  out.rhs = out.numerator() / T;
  out.gap_profile.assign(cache.begin(), cache.end());
  return out;
}

/// Same bound from a sampled s-profile covering [0, 1]. On each cell the gap
/// is replaced by the smaller endpoint value, which never extrapolates below
/// the sampled minimum and over-estimates the integral.
inline AdiabaticBound adiabatic_bound(const GapScanResult& profile, double hprime, double T) {
  if (!(T > 0.0)) throw DomainError("adiabatic bound needs T > 0");
  if (profile.parameter != ScanParameter::S) throw DomainError("adiabatic bound needs an s-profile");
  if (profile.grid.size() < 2) throw DomainError("adiabatic bound needs a non-empty profile");
  if (profile.grid.front() != 0.0 || profile.grid.back() != 1.0) {
    throw DomainError("adiabatic bound profile must cover s in [0, 1]");
  }
  AdiabaticBound out;
  for (std::size_t i = 0; i < profile.grid.size(); ++i) {
    if (!(profile.gaps[i] > 0.0)) throw DomainError("adiabatic bound needs strictly positive gaps");
    out.gap_profile.emplace_back(profile.grid[i], profile.gaps[i]);
  }
  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < profile.grid.size(); ++i) {
    const double g = std::min(profile.gaps[i], profile.gaps[i + 1]);
    integral += (profile.grid[i + 1] - profile.grid[i]) * 7.0 * hprime * hprime / (g * g * g);
  }
  out.gamma0 = profile.gaps.front();
  out.gamma1 = profile.gaps.back();
  out.hprime_norm = hprime;
  out.integral_term = integral;
  out.T = T;
  out.rhs = out.numerator() / T;
  return out;
}

/// gamma(s) of h(s) = -(1-s) Delta + s D via lowest_two.
inline std::function<double(double)> interpolated_gap_function(RealVector diag, double tol = 1e-10) {
  auto shared = std::make_shared<const RealVector>(std::move(diag));
  return [shared, tol](double s) {
    SolverOptions so;
    so.tol = tol;
    return lowest_two(Operator::interpolated(*shared, s), so).gap;
  };
}

struct RuntimeConstant {
  /// 9 max(a, a^2) + max ||h''|| with a the chosen ||h'|| (h'' = 0 here).
  double n_m = 0.0;
  double hprime_norm = 0.0;
  /// 9 max(A, A^2) with A = 2n + ||u||_inf, independent of pi.
  double analytic_bound = 0.0;
};

inline double runtime_constant_of(double hprime) { return 9.0 * std::max(hprime, hprime * hprime); }

inline RuntimeConstant runtime_constant(std::span<const double> diag, bool use_numerical_norm) {
  const int n = spin_count_of(diag.size());
  const double analytic = 2.0 * n + sup_norm(diag);
  RuntimeConstant rc;
  rc.hprime_norm = use_numerical_norm ? derivative_norms(diag).numerical : analytic;
  rc.n_m = runtime_constant_of(rc.hprime_norm);
  rc.analytic_bound = runtime_constant_of(analytic);
  return rc;
}

inline RuntimeConstant runtime_constant(const DisorderRealization& d, bool use_numerical_norm,
                                        const Permutation* pi = nullptr) {
  if (pi == nullptr) return runtime_constant(d.energies(), use_numerical_norm);
  const RealVector diag = scramble(d.energies(), *pi);
  return runtime_constant(diag, use_numerical_norm);
}

}  // namespace qrem
