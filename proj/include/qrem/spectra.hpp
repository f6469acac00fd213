#pragma once

// Low-lying spectrum of the Hamming-cube operators: the two lowest
// eigenpairs, a dense oracle for small n, gap scans over s or kappa with
// golden-section refinement, and the diagnostics built on top of them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrem/disorder.hpp"
#include "qrem/error.hpp"
#include "qrem/lanczos.hpp"
#include "qrem/operators.hpp"

namespace qrem {

struct SpectralResult {
  double e0 = 0.0;
  double e1 = 0.0;
  double gap = 0.0;
  RealVector ground;
  double residual0 = 0.0;
  double residual1 = 0.0;
  /// sum_sigma |psi_0(sigma)|^4, between 2^-n and 1.
  double ipr = 0.0;
  /// gap < 10 tol: the two levels are not resolved from each other.
  bool near_degenerate = false;
  std::size_t matvecs = 0;
  bool restarted = false;
};

struct SolverOptions {
  double tol = 1e-10;
  std::size_t max_basis = 0;
  /// Optional warm start for the Krylov iteration.
  std::span<const double> start = {};
  /// When set, the first excited Ritz vector is returned here.
  RealVector* excited = nullptr;
};

inline double inverse_participation_ratio(std::span<const double> psi) {
  double s = 0.0;
  for (double a : psi) s += a * a * a * a;
  return s;
}

inline SpectralResult lowest_two(const Operator& op, const SolverOptions& opt = {}) {
  if (op.dim() < 2) throw DomainError("lowest_two needs dimension >= 2");
  if (!(opt.tol >= 1e-13 && opt.tol <= 1e-6)) throw DomainError("lowest_two tolerance must lie in [1e-13, 1e-6]");
  if (op.coefficients().first == 0.0) {
    // Purely diagonal (U_pi or h(1)): exact, and immune to the tied levels a
    // single Krylov sequence cannot resolve.
    const auto [a, b] = op.coefficients();
    const auto u = op.diagonal_values();
    std::vector<std::size_t> order(u.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + 2, order.end(),
                      [&](std::size_t i, std::size_t j) { return b * u[i] < b * u[j] || (b * u[i] == b * u[j] && i < j); });
    SpectralResult r;
    r.e0 = b * u[order[0]];
    r.e1 = b * u[order[1]];
    r.gap = r.e1 - r.e0;
    r.ground.assign(u.size(), 0.0);
    r.ground[order[0]] = 1.0;
    r.ipr = 1.0;
    r.near_degenerate = r.gap < 10.0 * opt.tol;
    if (opt.excited != nullptr) {
      opt.excited->assign(u.size(), 0.0);
      (*opt.excited)[order[1]] = 1.0;
    }
    return r;
  }
  LanczosOptions lo;
  lo.tol = opt.tol;
  lo.max_basis = opt.max_basis;
  lo.start = opt.start;
  const MatVec apply = [&op](std::span<const double> x, std::span<double> y) { op.apply<double>(x, y); };
  LanczosResult lr = lanczos_lowest_two(apply, op.dim(), lo);

  SpectralResult r;
  r.e0 = lr.e0;
  r.e1 = lr.e1;
  r.gap = lr.e1 - lr.e0;
  r.residual0 = lr.residual0;
  r.residual1 = lr.residual1;
  r.matvecs = lr.matvecs;
  r.restarted = lr.restarted;
  r.near_degenerate = r.gap < 10.0 * opt.tol;
  r.ground = std::move(lr.x0);
  double sum = 0.0;
  for (double a : r.ground) sum += a;
  if (sum < 0.0)
    for (double& a : r.ground) a = -a;
  r.ipr = inverse_participation_ratio(r.ground);
  if (opt.excited != nullptr) *opt.excited = std::move(lr.x1);
  return r;
}

inline constexpr int dense_max_spins = 10;

/// Materializes the operator column by column and diagonalizes it.
inline std::vector<double> dense_spectrum(const Operator& op) {
  if (op.n() > dense_max_spins) throw DomainError("dense_spectrum refuses n > 10");
  const auto dim = static_cast<Eigen::Index>(op.dim());
  Eigen::MatrixXd a(dim, dim);
  RealVector e(op.dim(), 0.0), col(op.dim());
  for (Eigen::Index j = 0; j < dim; ++j) {
    e[static_cast<std::size_t>(j)] = 1.0;
    op.apply<double>(e, col);
    e[static_cast<std::size_t>(j)] = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) a(i, j) = col[static_cast<std::size_t>(i)];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return std::vector<double>(ev.data(), ev.data() + dim);
}

struct GoldenResult {
  double x = 0.0;
  double fx = 0.0;
  bool converged = false;
  int evaluations = 0;
};

/// Golden-section minimization of a unimodal f on [a, b] whose endpoint
/// values are known. Stops once the bracket is narrower than x_tol and every
/// value in the bracket lies within f_rtol of the best one.
inline GoldenResult golden_section_minimize(const std::function<double(double)>& f, double a, double b, double fa,
                                            double fb, double x_tol, double f_rtol, int max_iterations = 200) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  GoldenResult out;
  out.evaluations = 2;
  for (int it = 0; it < max_iterations; ++it) {
    const double best = std::min({fa, fb, fc, fd});
    const double worst = std::max({fa, fb, fc, fd});
    if (b - a <= x_tol && worst - best <= f_rtol * std::abs(best)) {
      out.converged = true;
      break;
    }
    if (fc <= fd) {
      b = d;
      fb = fd;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      fa = fc;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
    ++out.evaluations;
  }
  out.x = a;
  out.fx = fa;
  for (auto [x, fx] : {std::pair{b, fb}, std::pair{c, fc}, std::pair{d, fd}}) {
    if (fx < out.fx) {
      out.x = x;
      out.fx = fx;
    }
  }
  return out;
}

enum class ScanParameter { S, Kappa };

inline const char* to_string(ScanParameter p) { return p == ScanParameter::S ? "s" : "kappa"; }

struct GapPoint {
  double parameter = 0.0;
  double e0 = 0.0;
  double e1 = 0.0;
  double gap = 0.0;
  double ipr = 0.0;
  bool near_degenerate = false;
};

struct GapScanResult {
  ScanParameter parameter = ScanParameter::Kappa;
  /// Every evaluated parameter value (coarse and refinement), ascending.
  std::vector<double> grid;
  std::vector<double> gaps;
  std::vector<GapPoint> points;
  double min_gap = 0.0;
  double argmin = 0.0;
  /// All golden-section refinements met their stopping rule.
  bool refined = false;
  /// Smallest slack of E1 >= kappa u1 and E0 <= n + kappa u0 over all
  /// kappa evaluations; +inf for s-scans.
  double variational_min_slack = std::numeric_limits<double>::infinity();
  std::size_t matvecs = 0;
};

struct ScanOptions {
  std::size_t coarse_points = 64;
  double tol = 1e-10;
  /// Bracket width at which refinement may stop; 0 selects 1e-4 for s and 1e-3 for kappa.
  double parameter_tol = 0.0;
  /// Refinement also requires the gap to be flat to this relative level on the bracket.
  double gap_rtol = 1e-5;
  int max_refine_iterations = 200;
  bool warm_start = true;
};

struct VariationalReport {
  /// E1 - kappa u1 (must be >= 0).
  double excited_slack;
  /// n + kappa u0 - E0 (must be >= 0).
  double ground_slack;
};

inline constexpr double variational_tolerance = 1e-8;

/// Elementary variational bounds E1(kappa) >= kappa u1, E0(kappa) <= n + kappa u0.
/// A violation signals a solver bug.
inline VariationalReport variational_check(int n, double u0, double u1, double kappa, double e0, double e1) {
  VariationalReport r{e1 - kappa * u1, n + kappa * u0 - e0};
  if (r.excited_slack < -variational_tolerance || r.ground_slack < -variational_tolerance) {
    throw InvariantViolation("variational bound violated at kappa=" + std::to_string(kappa) +
                             ": slacks " + std::to_string(r.excited_slack) + ", " + std::to_string(r.ground_slack));
  }
  return r;
}

inline VariationalReport variational_check(const DisorderRealization& d, double kappa, const SpectralResult& sr) {
  return variational_check(d.n(), d.u0(), d.u1(), kappa, sr.e0, sr.e1);
}

namespace detail {

inline std::pair<double, double> two_smallest(std::span<const double> u) {
  double a = std::numeric_limits<double>::infinity(), b = a;
  for (double e : u) {
    if (e < a) {
      b = a;
      a = e;
    } else if (e < b) {
      b = e;
    }
  }
  return {a, b};
}

}  // namespace detail

/// Gap profile of an Interpolated (s) or Qrem (kappa) family over [lo, hi].
/// The coarse grid is refined around every local minimum by golden-section
/// search; refinement points are merged into the returned grid.
inline GapScanResult scan_gap(const Operator& family, double lo, double hi, const ScanOptions& opt = {}) {
  ScanParameter parameter;
  if (family.kind() == OperatorKind::Interpolated) {
    parameter = ScanParameter::S;
    if (!(lo >= 0.0 && hi <= 1.0)) throw DomainError("s-scan range must lie in [0,1]");
  } else if (family.kind() == OperatorKind::Qrem) {
    parameter = ScanParameter::Kappa;
    if (!(lo >= 0.0)) throw DomainError("kappa-scan range must lie in [0, kappa_max]");
  } else {
    throw DomainError("scan_gap needs an interpolated or QREM operator family");
  }
  if (!(lo < hi)) throw DomainError("scan range must satisfy lo < hi");
  if (opt.coarse_points < 8) throw DomainError("scan_gap needs at least 8 coarse points");
  const double parameter_tol =
      opt.parameter_tol > 0.0 ? opt.parameter_tol : (parameter == ScanParameter::S ? 1e-4 : 1e-3);
  const auto [u0, u1] = detail::two_smallest(family.diagonal_values());

  GapScanResult out;
  out.parameter = parameter;

  struct Sample {
    GapPoint point;
    RealVector ground, excited;
  };

  auto evaluate = [&](double p, std::span<const double> start) {
    Sample s;
    SolverOptions so;
    so.tol = opt.tol;
    so.start = start;
    so.excited = &s.excited;
    SpectralResult sr;
    try {
      sr = lowest_two(family.with_parameter(p), so);
    } catch (const ConvergenceError& e) {
      throw ConvergenceError(std::string(e.what()) + " at " + to_string(parameter) + "=" + std::to_string(p));
    }
    out.matvecs += sr.matvecs;
    if (parameter == ScanParameter::Kappa) {
      const auto rep = variational_check(family.n(), u0, u1, p, sr.e0, sr.e1);
      out.variational_min_slack = std::min({out.variational_min_slack, rep.excited_slack, rep.ground_slack});
    } else if (p < 1.0 && !(sr.gap > 0.0)) {
      throw InvariantViolation("nonpositive gap at s=" + std::to_string(p) + " (ground state must be unique)");
    }
    s.point = {p, sr.e0, sr.e1, sr.gap, sr.ipr, sr.near_degenerate};
    s.ground = std::move(sr.ground);
    return s;
  };

  std::vector<GapPoint> points;
  std::vector<Sample> coarse;
  coarse.reserve(opt.coarse_points);
  for (std::size_t i = 0; i < opt.coarse_points; ++i) {
    const double p = i + 1 == opt.coarse_points
                         ? hi
                         : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(opt.coarse_points - 1);
    coarse.push_back(evaluate(p, {}));
    points.push_back(coarse.back().point);
  }

  out.refined = true;
  const std::size_t last = coarse.size() - 1;
  for (std::size_t i = 0; i <= last; ++i) {
    const double g = coarse[i].point.gap;
    const bool left_ok = i == 0 || g < coarse[i - 1].point.gap;
    const bool right_ok = i == last || g <= coarse[i + 1].point.gap;
    if (!(left_ok && right_ok)) continue;
    const std::size_t ia = i == 0 ? 0 : i - 1;
    const std::size_t ib = i == last ? last : i + 1;
    // Warm start from a mix of both low-lying states at the coarse minimum.
    RealVector warm;
    if (opt.warm_start) {
      warm = coarse[i].ground;
      for (std::size_t k = 0; k < warm.size(); ++k) warm[k] += coarse[i].excited[k];
    }
    auto f = [&](double p) {
      Sample s = evaluate(p, warm);
      points.push_back(s.point);
      return s.point.gap;
    };
    const auto gr = golden_section_minimize(f, coarse[ia].point.parameter, coarse[ib].point.parameter,
                                            coarse[ia].point.gap, coarse[ib].point.gap, parameter_tol, opt.gap_rtol,
                                            opt.max_refine_iterations);
    out.refined = out.refined && gr.converged;
  }

  std::sort(points.begin(), points.end(), [](const GapPoint& a, const GapPoint& b) { return a.parameter < b.parameter; });
  points.erase(std::unique(points.begin(), points.end(),
                           [](const GapPoint& a, const GapPoint& b) { return a.parameter == b.parameter; }),
               points.end());
  out.points = std::move(points);
  out.min_gap = std::numeric_limits<double>::infinity();
  for (const auto& pt : out.points) {
    out.grid.push_back(pt.parameter);
    out.gaps.push_back(pt.gap);
    if (pt.gap < out.min_gap) {
      out.min_gap = pt.gap;
      out.argmin = pt.parameter;
    }
  }
  return out;
}

inline GapScanResult scan_gap(const DisorderRealization& d, ScanParameter parameter, double lo, double hi,
                              const ScanOptions& opt = {}, const Permutation* pi = nullptr) {
  if (parameter == ScanParameter::S) return scan_gap(Operator::interpolated(d, lo, pi), lo, hi, opt);
  if (pi != nullptr) throw DomainError("kappa-scans act on the unscrambled landscape");
  return scan_gap(Operator::qrem(d, lo), lo, hi, opt);
}

/// min over the profile of min(gamma^3, gamma^2).
inline double gap_functional(std::span<const double> gaps) {
  if (gaps.empty()) throw DomainError("gap_functional of an empty profile");
  double out = std::numeric_limits<double>::infinity();
  for (double g : gaps) {
    if (!(g > 0.0)) throw DomainError("gap_functional needs strictly positive gaps, got " + std::to_string(g));
    out = std::min(out, std::min(g * g * g, g * g));
  }
  return out;
}

struct PhaseRow {
  double kappa;
  double e0;
  double gap;
  double ipr;
  /// |psi_0(j0)|^2
  double overlap_minimum;
  /// |<uniform, psi_0>|^2
  double overlap_uniform;
};

/// Localization diagnostics of the QREM ground state along a kappa grid.
inline std::vector<PhaseRow> phase_diagnostics(const DisorderRealization& d, std::span<const double> kappas,
                                               double tol = 1e-10) {
  std::vector<PhaseRow> rows;
  rows.reserve(kappas.size());
  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(d.dim()));
  for (double kappa : kappas) {
    if (!(kappa > 0.0)) throw DomainError("phase_diagnostics needs kappa > 0");
    SolverOptions so;
    so.tol = tol;
    const auto sr = lowest_two(Operator::qrem(d, kappa), so);
    variational_check(d, kappa, sr);
    double proj = 0.0;
    for (double a : sr.ground) proj += a;
    proj *= inv_sqrt_dim;
    const double at_min = sr.ground[d.j0()];
    rows.push_back({kappa, sr.e0, sr.gap, sr.ipr, at_min * at_min, proj * proj});
  }
  return rows;
}

}  // namespace qrem
