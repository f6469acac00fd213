#pragma once

// Lanczos iteration for the two lowest eigenpairs of a real symmetric,
// matrix-free operator. Full reorthogonalization (classical Gram-Schmidt
// with a conditional second pass) keeps the basis orthonormal to rounding,
// so Ritz residual estimates are trustworthy down to the tolerance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "qrem/error.hpp"
#include "qrem/random.hpp"

namespace qrem {

using MatVec = std::function<void(std::span<const double>, std::span<double>)>;

struct LanczosOptions {
  double tol = 1e-10;
  /// Krylov basis cap before the single restart; 0 means min(dim, 320).
  std::size_t max_basis = 0;
  std::uint64_t seed = 0x4c616e637a6f73ULL;
  /// Start vector is normalize(ones + noise * gaussian). All-ones alone is
  /// an exact eigenvector of the Laplacian and would hide the first excitation.
  double start_noise = 1e-3;
  /// Optional warm start; replaces the ones-vector but still gets the noise.
  std::span<const double> start = {};
  std::size_t check_every = 6;
};

struct LanczosResult {
  double e0 = 0.0;
  double e1 = 0.0;
  std::vector<double> x0;
  std::vector<double> x1;
  double residual0 = 0.0;
  double residual1 = 0.0;
  std::size_t matvecs = 0;
  bool restarted = false;
};

namespace detail {

/// Solves (T - shift) y = rhs for symmetric tridiagonal T by Gaussian
/// elimination with partial pivoting (LAPACK dgtsv scheme).
inline void tridiagonal_solve(std::span<const double> alpha, std::span<const double> beta, double shift,
                              std::vector<double>& rhs) {
  const std::size_t m = alpha.size();
  std::vector<double> dl(beta.begin(), beta.begin() + (m - 1));
  std::vector<double> du(beta.begin(), beta.begin() + (m - 1));
  std::vector<double> d(m);
  std::vector<double> du2(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) d[i] = alpha[i] - shift;
  const double tiny = std::numeric_limits<double>::min() * 1e4;
  for (std::size_t i = 0; i + 1 < m; ++i) {
    if (std::abs(d[i]) >= std::abs(dl[i])) {
      if (std::abs(d[i]) < tiny) d[i] = tiny;
      const double f = dl[i] / d[i];
      d[i + 1] -= f * du[i];
      rhs[i + 1] -= f * rhs[i];
      dl[i] = 0.0;
    } else {
      const double f = d[i] / dl[i];
      d[i] = dl[i];
      const double t = d[i + 1];
      d[i + 1] = du[i] - f * t;
      if (i + 2 < m) {
        du2[i] = du[i + 1];
        du[i + 1] = -f * du2[i];
      }
      du[i] = t;
      std::swap(rhs[i], rhs[i + 1]);
      rhs[i + 1] -= f * rhs[i];
    }
  }
  if (std::abs(d[m - 1]) < tiny) d[m - 1] = tiny;
  rhs[m - 1] /= d[m - 1];
  if (m > 1) rhs[m - 2] = (rhs[m - 2] - du[m - 2] * rhs[m - 1]) / d[m - 2];
  for (std::size_t ii = m - 2; ii-- > 0;) {
    rhs[ii] = (rhs[ii] - du[ii] * rhs[ii + 1] - du2[ii] * rhs[ii + 2]) / d[ii];
  }
}

struct TridiagonalPair {
  double theta0, theta1;
  std::vector<double> y0, y1;
};

/// Lowest two eigenpairs of a symmetric tridiagonal matrix: eigenvalues from
/// Eigen's implicit QR (values only), eigenvectors by shifted inverse
/// iteration, the second orthogonalized against the first.
inline TridiagonalPair lowest_two_tridiagonal(std::span<const double> alpha, std::span<const double> beta) {
  const std::size_t m = alpha.size();
  Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(m));
  Eigen::VectorXd sub(static_cast<Eigen::Index>(m - 1));
  for (std::size_t i = 0; i + 1 < m; ++i) sub[static_cast<Eigen::Index>(i)] = beta[i];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  TridiagonalPair out;
  out.theta0 = es.eigenvalues()[0];
  out.theta1 = es.eigenvalues()[1];
  double scale = 0.0;
  for (std::size_t i = 0; i < m; ++i) scale = std::max(scale, std::abs(alpha[i]) + (i + 1 < m ? std::abs(beta[i]) : 0.0));
  scale = std::max(scale, 1.0);

  auto invert = [&](double theta, const std::vector<double>* against) {
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = 1.0 + 0.01 * static_cast<double>((i * 7919) % 101) / 101.0;
    const double shift = theta - 8.0 * std::numeric_limits<double>::epsilon() * scale;
    for (int it = 0; it < 4; ++it) {
      if (against != nullptr) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += y[i] * (*against)[i];
        for (std::size_t i = 0; i < m; ++i) y[i] -= dot * (*against)[i];
      }
      tridiagonal_solve(alpha, beta, shift, y);
      if (against != nullptr) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += y[i] * (*against)[i];
        for (std::size_t i = 0; i < m; ++i) y[i] -= dot * (*against)[i];
      }
      double norm = 0.0;
      for (double e : y) norm += e * e;
      norm = std::sqrt(norm);
      for (double& e : y) e /= norm;
    }
    return y;
  };
  out.y0 = invert(out.theta0, nullptr);
  out.y1 = invert(out.theta1, &out.y0);
  return out;
}

}  // namespace detail

/// Two lowest eigenpairs of the symmetric operator `apply` on R^dim.
/// Converged when both explicit residuals ||A x - theta x|| are at most
/// max(tol, rounding floor); a Krylov breakdown means an invariant subspace
/// was found and its Ritz pairs are exact. Restarts once from x0 + x1 when
/// the basis cap is reached.
inline LanczosResult lanczos_lowest_two(const MatVec& apply, std::size_t dim, const LanczosOptions& opt = {}) {
  if (dim < 2) throw DomainError("lanczos needs dimension >= 2");
  const std::size_t cap = std::min(dim, opt.max_basis == 0 ? std::size_t{320} : opt.max_basis);
  if (cap < 2) throw DomainError("lanczos basis cap must be >= 2");

  thread_local Eigen::MatrixXd basis;
  if (basis.rows() != static_cast<Eigen::Index>(dim) || basis.cols() < static_cast<Eigen::Index>(cap)) {
    basis.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(cap));
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(dim));
  Eigen::VectorXd h(static_cast<Eigen::Index>(cap));
  std::vector<double> alpha, beta;
  alpha.reserve(cap);
  beta.reserve(cap);

  const CounterRng rng(opt.seed);
  std::uint64_t draw = 0;
  Eigen::VectorXd start(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) {
    const double base = opt.start.empty() ? 1.0 : opt.start[i];
    start[static_cast<Eigen::Index>(i)] = base + opt.start_noise * rng.normal(draw++);
  }

  LanczosResult result;
  auto matvec = [&](const double* in, double* out) {
    apply(std::span<const double>(in, dim), std::span<double>(out, dim));
    ++result.matvecs;
  };

  // Removes components along the first `k` basis columns; second pass only
  // when the first lost more than ~30% of the norm (Daniel-Gragg-Kaufman-Stewart).
  auto orthogonalize = [&](Eigen::VectorXd& v, Eigen::Index k) {
    if (k == 0) return;
    for (int pass = 0; pass < 2; ++pass) {
      const double before = v.norm();
      h.head(k).noalias() = basis.leftCols(k).transpose() * v;
      v.noalias() -= basis.leftCols(k) * h.head(k);
      if (v.norm() > 0.7 * before) break;
    }
  };

  Eigen::VectorXd x0v(static_cast<Eigen::Index>(dim)), x1v(static_cast<Eigen::Index>(dim));
  Eigen::VectorXd ax(static_cast<Eigen::Index>(dim));

  for (int attempt = 0; attempt < 2; ++attempt) {
    alpha.clear();
    beta.clear();
    basis.col(0) = start / start.norm();
    double anorm = 0.0;
    for (std::size_t k = 0; k < cap; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      matvec(basis.col(kk).data(), w.data());
      const double a = basis.col(kk).dot(w);
      alpha.push_back(a);
      w -= a * basis.col(kk);
      if (k > 0) w -= beta[k - 1] * basis.col(kk - 1);
      orthogonalize(w, kk + 1);
      double b = w.norm();
      anorm = std::max(anorm, std::abs(a) + b + (k > 0 ? beta[k - 1] : 0.0));
      const std::size_t m = k + 1;
      bool breakdown = b <= 1e-12 * std::max(anorm, 1.0);

      if (breakdown && m < 2) {
        // Invariant subspace of dimension one: continue from a fresh random direction.
        for (std::size_t i = 0; i < dim; ++i) w[static_cast<Eigen::Index>(i)] = rng.normal(draw++);
        orthogonalize(w, kk + 1);
        b = 0.0;
        beta.push_back(b);
        basis.col(kk + 1) = w / w.norm();
        continue;
      }
      beta.push_back(b);

      const bool check = m >= 2 && (breakdown || m == cap || m % opt.check_every == 0 || m < 8);
      if (check) {
        const auto tri = detail::lowest_two_tridiagonal(std::span<const double>(alpha),
                                                        std::span<const double>(beta).first(m - 1));
        const double est0 = breakdown ? 0.0 : b * std::abs(tri.y0[m - 1]);
        const double est1 = breakdown ? 0.0 : b * std::abs(tri.y1[m - 1]);
        const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(anorm, 1.0);
        const double accept = std::max(opt.tol, floor);
        if ((est0 <= 0.5 * accept && est1 <= 0.5 * accept) || breakdown || m == cap) {
          const Eigen::Map<const Eigen::VectorXd> y0(tri.y0.data(), kk + 1), y1(tri.y1.data(), kk + 1);
          x0v.noalias() = basis.leftCols(kk + 1) * y0;
          x1v.noalias() = basis.leftCols(kk + 1) * y1;
          x0v.normalize();
          x1v.normalize();
          matvec(x0v.data(), ax.data());
          const double r0 = (ax - tri.theta0 * x0v).norm();
          matvec(x1v.data(), ax.data());
          const double r1 = (ax - tri.theta1 * x1v).norm();
          if ((r0 <= accept && r1 <= accept) || breakdown) {
            result.e0 = tri.theta0;
            result.e1 = tri.theta1;
            result.residual0 = r0;
            result.residual1 = r1;
            result.x0.assign(x0v.data(), x0v.data() + dim);
            result.x1.assign(x1v.data(), x1v.data() + dim);
            result.restarted = attempt > 0;
            if (breakdown && (r0 > std::max(accept, 1e-8) || r1 > std::max(accept, 1e-8))) break;
            return result;
          }
        }
      }
      if (breakdown || m == cap) break;
      basis.col(kk + 1) = w / b;
    }
    if (attempt == 0) {
      // Restart from the current best pair, which keeps both directions alive.
      start = x0v + x1v;
    }
  }
  throw ConvergenceError("lanczos did not converge to tol " + std::to_string(opt.tol) + " within " +
                         std::to_string(result.matvecs) + " applications (dimension " + std::to_string(dim) + ")");
}

}  // namespace qrem
