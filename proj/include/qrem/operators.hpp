#pragma once

// Matrix-free Hermitian operators on the Hamming cube {0,1}^n.
//
// Configurations are integers in [0, 2^n); neighbours differ in one bit.
// All operators here are real symmetric, so apply() is templated on the
// scalar type and serves both the (real) eigen-solvers and the (complex)
// propagator. No matrix is ever materialized.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrem/disorder.hpp"
#include "qrem/error.hpp"
#include "qrem/random.hpp"

namespace qrem {

using Complex = std::complex<double>;
using StateVector = std::vector<Complex>;
using RealVector = std::vector<double>;

inline int spin_count_of(std::size_t dim) {
  if (dim < 2 || (dim & (dim - 1)) != 0) {
    throw DimensionMismatch("state length " + std::to_string(dim) + " is not 2^n with n >= 1");
  }
  return std::countr_zero(dim);
}

/// out += weight * (Delta psi), (Delta psi)(sigma) = sum_{sigma'~sigma} psi(sigma') - n psi(sigma).
/// Bit-by-bit half-swaps keep the inner loops contiguous.
template <class Scalar>
void add_laplacian(int n, double weight, std::span<const Scalar> psi, std::span<Scalar> out) {
  const std::size_t dim = dimension_of(n);
  if (psi.size() != dim || out.size() != dim) {
    throw DimensionMismatch("laplacian on n=" + std::to_string(n) + " needs length " + std::to_string(dim));
  }
  const double diag = -weight * n;
  for (std::size_t i = 0; i < dim; ++i) out[i] += diag * psi[i];
  for (int bit = 0; bit < n; ++bit) {
    const std::size_t stride = std::size_t{1} << bit;
    for (std::size_t base = 0; base < dim; base += 2 * stride) {
      const Scalar* lo = psi.data() + base;
      const Scalar* hi = lo + stride;
      Scalar* olo = out.data() + base;
      Scalar* ohi = olo + stride;
      for (std::size_t j = 0; j < stride; ++j) {
        olo[j] += weight * hi[j];
        ohi[j] += weight * lo[j];
      }
    }
  }
}

template <class Scalar>
std::vector<Scalar> apply_laplacian(int n, std::span<const Scalar> psi) {
  std::vector<Scalar> out(psi.size(), Scalar{});
  add_laplacian<Scalar>(n, 1.0, psi, out);
  return out;
}

class Permutation {
 public:
  /// `forward[k]` is pi(k). Rejects anything that is not a bijection.
  explicit Permutation(std::vector<std::uint32_t> forward) : forward_(std::move(forward)), inverse_(forward_.size()) {
    std::vector<bool> seen(forward_.size(), false);
    for (std::size_t k = 0; k < forward_.size(); ++k) {
      const std::uint32_t image = forward_[k];
      if (image >= forward_.size() || seen[image]) throw DomainError("permutation is not a bijection");
      seen[image] = true;
      inverse_[image] = static_cast<std::uint32_t>(k);
    }
  }

  static Permutation identity(std::size_t size) {
    std::vector<std::uint32_t> f(size);
    std::iota(f.begin(), f.end(), 0U);
    return Permutation(std::move(f));
  }

  /// Uniform over S_size via Fisher-Yates on a counter-based stream.
  static Permutation random(std::size_t size, std::uint64_t seed) {
    std::vector<std::uint32_t> f(size);
    std::iota(f.begin(), f.end(), 0U);
    CounterStream stream(hash_words({seed, 0x7065726dULL}));
    for (std::size_t i = size; i > 1; --i) {
      const std::size_t j = stream.below(i);
      std::swap(f[i - 1], f[j]);
    }
    return Permutation(std::move(f));
  }

  /// Swaps the images of a and b.
  static Permutation transposition(std::size_t size, std::size_t a, std::size_t b) {
    std::vector<std::uint32_t> f(size);
    std::iota(f.begin(), f.end(), 0U);
    std::swap(f.at(a), f.at(b));
    return Permutation(std::move(f));
  }

  std::size_t size() const noexcept { return forward_.size(); }
  std::size_t operator()(std::size_t k) const { return forward_[k]; }
  std::size_t inverse(std::size_t sigma) const { return inverse_[sigma]; }
  std::span<const std::uint32_t> forward() const noexcept { return forward_; }
  bool is_identity() const {
    for (std::size_t k = 0; k < forward_.size(); ++k)
      if (forward_[k] != k) return false;
    return true;
  }

 private:
  std::vector<std::uint32_t> forward_;
  std::vector<std::uint32_t> inverse_;
};

/// Scrambled diagonal: entry sigma is u(pi^{-1}(sigma)), so the minimum moves to pi(j0).
inline RealVector scramble(std::span<const double> u, const Permutation& pi) {
  if (pi.size() != u.size()) {
    throw DimensionMismatch("permutation of size " + std::to_string(pi.size()) + " applied to " +
                            std::to_string(u.size()) + " energies");
  }
  RealVector out(u.size());
  for (std::size_t sigma = 0; sigma < u.size(); ++sigma) out[sigma] = u[pi.inverse(sigma)];
  return out;
}

enum class OperatorKind { Laplacian, Diagonal, Interpolated, Qrem };

inline const char* to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::Laplacian: return "laplacian";
    case OperatorKind::Diagonal: return "diagonal";
    case OperatorKind::Interpolated: return "interpolated";
    case OperatorKind::Qrem: return "qrem";
  }
  return "?";
}

/// Immutable handle for one of
///   Laplacian      -Delta
///   Diagonal       U_pi
///   Interpolated   h_pi(s) = -(1-s) Delta + s U_pi,  s in [0,1]
///   Qrem           H(kappa) = -Delta + kappa U,      kappa >= 0
/// The diagonal is shared, so copies and re-parametrizations are cheap.
class Operator {
 public:
  static Operator laplacian(int n) {
    if (n < 1 || n > max_spins) throw DomainError("spin count must lie in [1, 24]");
    return Operator(OperatorKind::Laplacian, n, nullptr, 0.0);
  }

  /// Diagonal from a raw sequence; ties allowed (test-only landscapes).
  static Operator diagonal(RealVector values) {
    const int n = spin_count_of(values.size());
    return Operator(OperatorKind::Diagonal, n, std::make_shared<const RealVector>(std::move(values)), 0.0);
  }

  static Operator diagonal(const DisorderRealization& d, const Permutation* pi = nullptr) {
    return Operator(OperatorKind::Diagonal, d.n(), scrambled(d, pi), 0.0);
  }

  static Operator interpolated(const DisorderRealization& d, double s, const Permutation* pi = nullptr) {
    return interpolated_raw(d.n(), scrambled(d, pi), s);
  }

  static Operator interpolated(RealVector diag, double s) {
    const int n = spin_count_of(diag.size());
    return interpolated_raw(n, std::make_shared<const RealVector>(std::move(diag)), s);
  }

  static Operator qrem(const DisorderRealization& d, double kappa) {
    return qrem_raw(d.n(), std::make_shared<const RealVector>(d.energies().begin(), d.energies().end()), kappa);
  }

  static Operator qrem(RealVector diag, double kappa) {
    const int n = spin_count_of(diag.size());
    return qrem_raw(n, std::make_shared<const RealVector>(std::move(diag)), kappa);
  }

  /// Same kind and diagonal with a new s or kappa.
  Operator with_parameter(double p) const {
    switch (kind_) {
      case OperatorKind::Interpolated: return interpolated_raw(n_, diag_, p);
      case OperatorKind::Qrem: return qrem_raw(n_, diag_, p);
      default: throw DomainError(std::string("operator kind ") + to_string(kind_) + " has no parameter");
    }
  }

  OperatorKind kind() const noexcept { return kind_; }
  int n() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dimension_of(n_); }
  double parameter() const noexcept { return param_; }
  std::span<const double> diagonal_values() const {
    if (!diag_) throw DomainError(std::string("operator kind ") + to_string(kind_) + " has no diagonal");
    return *diag_;
  }

  /// Coefficients (a, b) with A = -a Delta + b U.
  std::pair<double, double> coefficients() const noexcept {
    switch (kind_) {
      case OperatorKind::Laplacian: return {1.0, 0.0};
      case OperatorKind::Diagonal: return {0.0, 1.0};
      case OperatorKind::Interpolated: return {1.0 - param_, param_};
      case OperatorKind::Qrem: return {1.0, param_};
    }
    return {0.0, 0.0};
  }

  template <class Scalar>
  void apply(std::span<const Scalar> psi, std::span<Scalar> out) const {
    if (psi.size() != dim() || out.size() != dim()) {
      throw DimensionMismatch("operator of dimension " + std::to_string(dim()) + " applied to length " +
                              std::to_string(psi.size()));
    }
    const auto [a, b] = coefficients();
    const double* u = diag_ ? diag_->data() : nullptr;
    if (u != nullptr && b != 0.0) {
      for (std::size_t i = 0; i < psi.size(); ++i) out[i] = (b * u[i]) * psi[i];
    } else {
      std::fill(out.begin(), out.end(), Scalar{});
    }
    if (a != 0.0) add_laplacian<Scalar>(n_, -a, psi, out);
  }

  template <class Scalar>
  std::vector<Scalar> operator()(std::span<const Scalar> psi) const {
    std::vector<Scalar> out(psi.size());
    apply<Scalar>(psi, out);
    return out;
  }

  template <class Scalar>
  std::vector<Scalar> operator()(const std::vector<Scalar>& psi) const {
    return (*this)(std::span<const Scalar>(psi));
  }

  /// Upper bound on the operator norm: a*2n + b*||u||_inf.
  double norm_bound() const {
    const auto [a, b] = coefficients();
    return std::abs(a) * 2.0 * n_ + (diag_ ? std::abs(b) * sup_norm(*diag_) : 0.0);
  }

 private:
  Operator(OperatorKind kind, int n, std::shared_ptr<const RealVector> diag, double param)
      : kind_(kind), n_(n), diag_(std::move(diag)), param_(param) {}

  static Operator interpolated_raw(int n, std::shared_ptr<const RealVector> diag, double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("interpolation parameter s must lie in [0,1]");
    return Operator(OperatorKind::Interpolated, n, std::move(diag), s);
  }

  static Operator qrem_raw(int n, std::shared_ptr<const RealVector> diag, double kappa) {
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw DomainError("QREM coupling kappa must be >= 0");
    return Operator(OperatorKind::Qrem, n, std::move(diag), kappa);
  }

  static std::shared_ptr<const RealVector> scrambled(const DisorderRealization& d, const Permutation* pi) {
    if (pi == nullptr) return std::make_shared<const RealVector>(d.energies().begin(), d.energies().end());
    return std::make_shared<const RealVector>(scramble(d.energies(), *pi));
  }

  OperatorKind kind_;
  int n_;
  std::shared_ptr<const RealVector> diag_;
  double param_;
};

struct DerivativeNorms {
  /// 2n + ||u||_inf, the triangle-inequality bound on ||Delta + U_pi||.
  double analytic_bound;
  /// Power-iteration estimate of ||Delta + U_pi|| (a lower bound on the true norm).
  double numerical;
  /// h'' vanishes for the linear schedule.
  double second_derivative = 0.0;
  int iterations = 0;
};

/// Spectral norm of Delta + diag by power iteration on (Delta + diag)^2.
/// Stops when the residual of the squared operator drops below tol times its
/// Rayleigh quotient, or when the quotient stalls at machine precision.
inline DerivativeNorms derivative_norms(std::span<const double> diag, double tol = 1e-6, int max_iterations = 200000) {
  const int n = spin_count_of(diag.size());
  const std::size_t dim = diag.size();
  auto apply_hprime = [&](std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < dim; ++i) y[i] = diag[i] * x[i];
    add_laplacian<double>(n, 1.0, x, y);
  };
  RealVector v(dim), w(dim), z(dim);
  const CounterRng rng(0x6e6f726dULL);
  for (std::size_t i = 0; i < dim; ++i) v[i] = rng.normal(i);
  auto normalize = [](RealVector& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    s = std::sqrt(s);
    for (double& e : x) e /= s;
  };
  normalize(v);
  double rho = 0.0;
  int it = 0;
  for (; it < max_iterations; ++it) {
    apply_hprime(v, w);
    apply_hprime(w, z);
    double rq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) rq += v[i] * z[i];
    double res = 0.0;
    for (std::size_t i = 0; i < dim; ++i) res += (z[i] - rq * v[i]) * (z[i] - rq * v[i]);
    res = std::sqrt(res);
    const double previous = rho;
    rho = rq;
    v = z;
    normalize(v);
    if (rq == 0.0 || res <= tol * rq || (it > 10 && std::abs(rho - previous) <= 1e-15 * rho)) break;
  }
  DerivativeNorms out;
  out.analytic_bound = 2.0 * n + sup_norm(diag);
  out.numerical = std::sqrt(std::max(0.0, rho));
  out.iterations = it + 1;
  return out;
}

inline DerivativeNorms derivative_norms(const DisorderRealization& d, const Permutation* pi = nullptr,
                                        double tol = 1e-6) {
  if (pi == nullptr) return derivative_norms(d.energies(), tol);
  const RealVector diag = scramble(d.energies(), *pi);
  return derivative_norms(diag, tol);
}

}  // namespace qrem
