#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "qrem/disorder.hpp"
#include "qrem/dynamics.hpp"
#include "qrem/ensemble.hpp"
#include "qrem/operators.hpp"
#include "qrem/spectra.hpp"

using Catch::Approx;
using namespace qrem;

namespace {

// Classical RK4 on i psi' = h(t/T) psi with an explicit dense h; step dt.
StateVector rk4_reference(const RealVector& diag, double T, double dt) {
  const std::size_t dim = diag.size();
  int n = 0;
  while ((std::size_t{1} << n) < dim) ++n;
  auto rhs = [&](double t, const StateVector& psi) {
    const double s = T > 0.0 ? t / T : 0.0;
    StateVector out(dim);
    for (std::size_t x = 0; x < dim; ++x) {
      Complex acc = (s * diag[x] + (1.0 - s) * n) * psi[x];
      for (int b = 0; b < n; ++b) acc -= (1.0 - s) * psi[x ^ (std::size_t{1} << b)];
      out[x] = Complex(0.0, -1.0) * acc;
    }
    return out;
  };
  StateVector psi(dim, Complex(1.0 / std::sqrt(static_cast<double>(dim)), 0.0));
  const auto steps = static_cast<long>(std::llround(T / dt));
  const double h = T / static_cast<double>(steps);
  StateVector tmp(dim);
  for (long k = 0; k < steps; ++k) {
    const double t = k * h;
    const auto k1 = rhs(t, psi);
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = psi[i] + 0.5 * h * k1[i];
    const auto k2 = rhs(t + 0.5 * h, tmp);
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = psi[i] + 0.5 * h * k2[i];
    const auto k3 = rhs(t + 0.5 * h, tmp);
    for (std::size_t i = 0; i < dim; ++i) tmp[i] = psi[i] + h * k3[i];
    const auto k4 = rhs(t + h, tmp);
    for (std::size_t i = 0; i < dim; ++i) psi[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return psi;
}

double distance(const StateVector& a, const StateVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("zero potential keeps the uniform state") {
  const RealVector zero(16, 0.0);
  const auto r = evolve_diagonal(zero, 0, 10.0);
  Complex overlap = 0.0;
  for (const auto& z : r.final_state) overlap += z / 4.0;
  CHECK(std::sqrt(std::max(0.0, 1.0 - std::norm(overlap))) <= 1e-8);
  CHECK(r.norm_drift <= 1e-8);
}

TEST_CASE("zero time leaves the uniform overlap") {
  for (int n : {1, 4, 7}) {
    const auto d = sample_disorder(n, 3);
    const auto pi = Permutation::random(d.dim(), 1);
    const auto r = evolve(d, pi, 0.0);
    CHECK(r.success_probability == std::exp2(-n));
    CHECK(success_probability(r, pi, d.j0()) == Approx(std::exp2(-n)).epsilon(1e-14));
    CHECK(r.steps == 0);
  }
  CHECK_THROWS_AS(evolve(sample_disorder(2, 1), Permutation::identity(4), -1.0), DomainError);
}

TEST_CASE("success probability of a basis state") {
  const auto d = sample_disorder(3, 9);
  const auto pi = Permutation::random(8, 4);
  EvolutionResult r;
  r.final_state.assign(8, Complex{});
  r.final_state[pi(d.j0())] = Complex(0.0, 1.0);
  CHECK(success_probability(r, pi, d.j0()) == 1.0);
  CHECK_THROWS_AS(success_probability(r, pi, pi.size()), DomainError);
}

TEST_CASE("two-level evolution matches fine-step rk4") {
  const RealVector u{0.0, 3.0};
  const auto r = evolve_diagonal(u, 0, 1.0);
  const auto ref = rk4_reference(u, 1.0, 1e-5);
  CHECK(distance(r.final_state, ref) <= 1e-6);
  CHECK(r.norm_drift <= 1e-8);
}

TEST_CASE("evolution matches rk4 for small cubes") {
  for (int n : {1, 2, 3, 4}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto d = sample_disorder(n, seed);
      const auto pi = Permutation::random(d.dim(), seed + 1);
      const RealVector diag = scramble(d.energies(), pi);
      for (double T : {0.5, 1.0, 5.0}) {
        const auto r = evolve(d, pi, T);
        const auto ref = rk4_reference(diag, T, 2e-4);
        INFO("n=" << n << " seed=" << seed << " T=" << T);
        CHECK(distance(r.final_state, ref) <= 1e-6);
        CHECK(r.norm_drift <= 1e-8);
        CHECK(r.success_probability >= 0.0);
        CHECK(r.success_probability <= 1.0);
        CHECK(r.infidelity >= 0.0);
        CHECK(r.infidelity <= 1.0);
      }
    }
  }
}

TEST_CASE("fixed-step error falls at the declared order") {
  const auto d = sample_disorder(3, 5);
  const RealVector diag(d.energies().begin(), d.energies().end());
  const double T = 2.0;
  const auto ref = rk4_reference(diag, T, 1e-4);
  for (auto scheme : {Integrator::ExponentialMidpoint, Integrator::CommutatorFree4}) {
    StepControl c;
    c.scheme = scheme;
    c.adaptive = false;
    c.max_norm_step = 100.0;
    c.krylov_max = 8;
    c.tol_per_unit_time = 1e-13;
    const double h = scheme == Integrator::ExponentialMidpoint ? 0.05 : 0.2;
    c.max_step = h;
    const double e1 = distance(evolve_diagonal(diag, d.j0(), T, c).final_state, ref);
    c.max_step = h / 2.0;
    const double e2 = distance(evolve_diagonal(diag, d.j0(), T, c).final_state, ref);
    const double expected = std::exp2(order_of(scheme));
    INFO("order " << order_of(scheme) << " errors " << e1 << " " << e2);
    CHECK(e1 / e2 >= 0.7 * expected);
    CHECK(e1 / e2 <= 1.3 * expected);
  }
}

TEST_CASE("norm is conserved over long runs") {
  const auto d = sample_disorder(5, 2);
  const auto r = evolve(d, Permutation::identity(d.dim()), 1000.0);
  CHECK(r.norm_drift <= 1e-8);
  CHECK(r.steps > 0);
}

TEST_CASE("adiabatic bound arithmetic") {
  const auto b = adiabatic_bound([](double) { return 1.0; }, 1.0, 1.0);
  CHECK(b.rhs == Approx(9.0).epsilon(1e-12));
  CHECK(b.gamma0 == 1.0);
  CHECK(b.gamma1 == 1.0);
  CHECK(b.integral_term == Approx(7.0).epsilon(1e-12));
  for (double T : {0.3, 1.0, 17.0}) {
    const auto x = b.at(T);
    const auto y = b.at(2.0 * T);
    CHECK(y.rhs * 2.0 == x.rhs);
  }
  // 7 int_0^1 (1 + s)^-3 ds = 7 * 3/8
  const auto c = adiabatic_bound([](double s) { return 1.0 + s; }, 1.0, 2.0);
  CHECK(c.integral_term == Approx(7.0 * 3.0 / 8.0).epsilon(1e-6));
  CHECK(c.rhs == Approx((1.0 + 0.25 + 7.0 * 3.0 / 8.0) / 2.0).epsilon(1e-6));
  CHECK_THROWS_AS(adiabatic_bound([](double) { return 0.0; }, 1.0, 1.0), DomainError);
  CHECK_THROWS_AS(adiabatic_bound([](double) { return 1.0; }, 1.0, 0.0), DomainError);
  CHECK_THROWS_AS(b.at(-1.0), DomainError);
}

TEST_CASE("quadrature resolves a narrow dip") {
  // gamma(s) = g + (s - 1/2)^2 with a small g; closed-form integral of gamma^-3
  const double g = 1e-3;
  auto gamma = [g](double s) { return g + (s - 0.5) * (s - 0.5); };
  auto antideriv = [g](double x) {
    // int dx / (g + x^2)^3
    const double r = std::sqrt(g);
    return x / (4.0 * g * (g + x * x) * (g + x * x)) + 3.0 * x / (8.0 * g * g * (g + x * x)) +
           3.0 * std::atan(x / r) / (8.0 * g * g * r);
  };
  const double exact = 7.0 * (antideriv(0.5) - antideriv(-0.5));
  const auto b = adiabatic_bound(gamma, 1.0, 1.0);
  CHECK(b.integral_term == Approx(exact).epsilon(1e-3));
}

TEST_CASE("bound from a sampled profile is conservative") {
  const DisorderRealization d(1, {0.0, 2.0});
  const auto scan = scan_gap(d, ScanParameter::S, 0.0, 1.0);
  const double hp = derivative_norms(d).analytic_bound;
  const auto sampled = adiabatic_bound(scan, hp, 1.0);
  const auto smooth = adiabatic_bound(interpolated_gap_function(RealVector{0.0, 2.0}), hp, 1.0);
  CHECK(sampled.rhs >= smooth.rhs * (1.0 - 1e-3));
  CHECK(sampled.gamma0 == Approx(2.0).margin(1e-9));
  CHECK(sampled.gamma1 == Approx(2.0).margin(1e-9));
  const auto kappa_scan = scan_gap(d, ScanParameter::Kappa, 0.0, 1.0);
  CHECK_THROWS_AS(adiabatic_bound(kappa_scan, hp, 1.0), DomainError);
}

TEST_CASE("measured infidelity never exceeds the bound") {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    const auto d = sample_disorder(4, seed);
    const auto pi = Permutation::random(d.dim(), seed + 3);
    const RealVector diag = scramble(d.energies(), pi);
    const auto bound = adiabatic_bound(interpolated_gap_function(diag), derivative_norms(diag).analytic_bound, 1.0);
    for (double T : {1.0, 10.0, 100.0}) {
      const auto r = evolve(d, pi, T);
      CHECK(r.infidelity <= bound.at(T).rhs + 1e-6);
    }
  }
}

TEST_CASE("adiabatic limit at the bound-derived time") {
  // Landscape 6 at n = 6 has one of the smallest bound numerators among the first seeds.
  const auto d = sample_disorder(6, 6);
  const RealVector diag(d.energies().begin(), d.energies().end());
  const auto bound = adiabatic_bound(interpolated_gap_function(diag), derivative_norms(diag).analytic_bound, 1.0);
  const double T = bound.numerator() / 0.1;
  INFO("T = " << T);
  REQUIRE(bound.at(T).rhs == Approx(0.1).epsilon(1e-12));
  StepControl c;
  c.max_norm_step = 5.0;
  c.krylov_max = 64;
  const auto r = evolve(d, Permutation::identity(d.dim()), T, c);
  CHECK(r.infidelity <= 0.1);
  CHECK(r.success_probability >= 0.9);
  CHECK(r.norm_drift <= 1e-8);
}

TEST_CASE("runtime constant") {
  for (int n : {1, 2, 5}) {
    const RealVector zero(std::size_t{1} << n, 0.0);
    const auto rc = runtime_constant(zero, false);
    CHECK(rc.n_m == 36.0 * n * n);
    CHECK(rc.analytic_bound == 36.0 * n * n);
    CHECK(runtime_constant(zero, true).n_m == Approx(36.0 * n * n).epsilon(1e-6));
  }
  CHECK(runtime_constant_of(20.0 + 23.0) == 16641.0);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = sample_disorder(8, seed);
    const auto num = runtime_constant(d, true);
    CHECK(num.n_m <= num.analytic_bound);
    CHECK(runtime_constant(d, false).n_m == num.analytic_bound);
  }
}

TEST_CASE("evolution record fields") {
  const auto d = sample_disorder(3, 8);
  const auto r = evolve(d, Permutation::identity(8), 2.0);
  const auto j = evolution_record(d, 77, r);
  CHECK(j.at("n") == 3);
  CHECK(j.at("seed") == 8);
  CHECK(j.at("permutation_seed") == 77);
  CHECK(j.at("T") == 2.0);
  CHECK(j.at("steps") == r.steps);
  CHECK(j.contains("success_probability"));
  CHECK(j.contains("infidelity"));
  CHECK(j.contains("norm_drift"));
}

// Hidden from the default run; ctest runs it as its own entry (about 15 minutes on one core).
TEST_CASE("median infidelity falls along a T doubling sequence", "[.][slow]") {
  std::vector<DisorderRealization> lands;
  std::vector<double> scales;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    lands.push_back(sample_disorder(6, seed));
    const RealVector diag(lands.back().energies().begin(), lands.back().energies().end());
    scales.push_back(
        adiabatic_bound(interpolated_gap_function(diag), derivative_norms(diag).analytic_bound, 1.0).numerator());
  }
  // the disorder-median of the time at which the bound reaches 1
  const double S = median(scales);
  StepControl c;
  c.max_norm_step = 5.0;
  c.krylov_max = 64;
  double previous = 1.0;
  for (double T : {S, 2.0 * S, 4.0 * S}) {
    std::vector<double> inf;
    for (const auto& d : lands) {
      const auto r = evolve(d, Permutation::identity(d.dim()), T, c);
      CHECK(r.norm_drift <= 1e-8);
      inf.push_back(r.infidelity);
    }
    const double m = median(inf);
    INFO("T = " << T << " median infidelity " << m);
    CHECK(m < previous);
    previous = m;
  }
}
