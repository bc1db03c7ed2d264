#include "ddu/dirichlet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddu/errors.hpp"
#include "ddu/uncertainty.hpp"

namespace ddu {

namespace {

constexpr double kAlpha0Lo = 1e-3;
constexpr double kAlpha0Hi = 1e6;
constexpr int kMaxBisection = 200;
constexpr double kProbFloor = 1e-9;

void check_index(const DirichletParams& d, std::size_t i) {
  if (i >= d.size()) {
    throw IndexOutOfRange("index " + std::to_string(i) + " for K = " + std::to_string(d.size()));
  }
}

}  // namespace

DirichletParams::DirichletParams(Vector alpha) : alpha_(std::move(alpha)), alpha0_(0.0) {
  if (alpha_.empty()) throw DomainError("Dirichlet needs at least one concentration");
  for (double a : alpha_) {
    if (!(a > 0.0) || !std::isfinite(a)) throw DomainError("Dirichlet concentrations must be positive and finite");
    alpha0_ += a;
  }
}

double expected_log_p(const DirichletParams& d, std::size_t i) {
  check_index(d, i);
  return digamma(d[i]) - digamma(d.alpha0());
}

double cov_log_p(const DirichletParams& d, std::size_t i, std::size_t j) {
  check_index(d, i);
  check_index(d, j);
  return (i == j ? trigamma(d[i]) : 0.0) - trigamma(d.alpha0());
}

double rising_factorial(double x, unsigned k) {
  double r = 1.0;
  for (unsigned t = 0; t < k; ++t) r *= x + t;
  return r;
}

double moment_pn_pm_logp(const DirichletParams& d, std::size_t i, std::size_t j, unsigned n, unsigned m) {
  check_index(d, i);
  check_index(d, j);
  if (i == j) throw IndexConflict("moment_pn_pm_logp requires i != j");
  const double a0 = d.alpha0();
  const double ratio = rising_factorial(d[i], n) * rising_factorial(d[j], m) / rising_factorial(a0, n + m);
  return ratio * (digamma(d[i] + n) - digamma(a0 + n + m));
}

double expected_entropy(const DirichletParams& d) {
  const double a0 = d.alpha0();
  double s = digamma(a0 + 1.0);
  for (double a : d.alpha()) s -= a / a0 * digamma(a + 1.0);
  return s;
}

double entropy_variance(const DirichletParams& d) {
  const double a0 = d.alpha0();
  const std::size_t k = d.size();
  const double a0_rise2 = a0 * (a0 + 1.0);
  const double psi_a0_1 = digamma(a0 + 1.0);
  const double psi_a0_2 = digamma(a0 + 2.0);
  const double tri_a0_2 = trigamma(a0 + 2.0);

  Vector psi_1(k);  // psi(a_i + 1)
  for (std::size_t i = 0; i < k; ++i) psi_1[i] = digamma(d[i] + 1.0);

  // E[(p_i log p_i)^2] terms.
  double square_terms = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double centred = digamma(d[i] + 2.0) - psi_a0_2;
    square_terms += d[i] * (d[i] + 1.0) / a0_rise2 * (trigamma(d[i] + 2.0) - tri_a0_2 + centred * centred);
  }
  // E[p_i log p_i p_j log p_j], i != j.
  double cross_terms = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      cross_terms += d[i] * d[j] / a0_rise2 * (-tri_a0_2 + (psi_1[i] - psi_a0_2) * (psi_1[j] - psi_a0_2));
    }
  }
  // (E[H])^2 = (sum_i E[p_i log p_i])^2.
  double mean_term = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean_term += d[i] / a0 * (psi_1[i] - psi_a0_1);
  return square_terms + cross_terms - mean_term * mean_term;
}

DirichletParams fit_from_pe_mi(std::span<const double> predictive, double mutual_information) {
  Vector p(predictive.begin(), predictive.end());
  const double h = entropy(p);
  if (!(mutual_information >= 0.0)) throw InfeasibleMI("mutual information must be non-negative");
  if (mutual_information >= h) throw InfeasibleMI("mutual information must be below the predictive entropy");
  double total = 0.0;
  for (double& v : p) total += (v = std::max(v, kProbFloor));
  for (double& v : p) v /= total;

  const double target = h - mutual_information;
  auto expected_at = [&](double alpha0) {
    Vector a(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) a[i] = alpha0 * p[i];
    return expected_entropy(DirichletParams(std::move(a)));
  };
  auto params_at = [&](double alpha0) {
    Vector a(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) a[i] = alpha0 * p[i];
    return DirichletParams(std::move(a));
  };

  // Expected entropy increases with alpha_0.
  if (expected_at(kAlpha0Hi) <= target) return params_at(kAlpha0Hi);
  if (expected_at(kAlpha0Lo) > target) {
    throw InfeasibleMI("mutual information exceeds what alpha_0 >= 1e-3 can express");
  }
  double lo = std::log(kAlpha0Lo);
  double hi = std::log(kAlpha0Hi);
  for (int it = 0; it < kMaxBisection; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (expected_at(std::exp(mid)) < target ? lo : hi) = mid;
  }
  return params_at(std::exp(0.5 * (lo + hi)));
}

Matrix sample_dirichlet(const DirichletParams& d, Rng& rng, std::size_t n) {
  if (n == 0) throw InvalidCount("sample count must be at least 1");
  Matrix out(n, d.size());
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.row(r);
    double s = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) s += (row[k] = rng.gamma(d[k]));
    for (double& v : row) v /= s;
  }
  return out;
}

}  // namespace ddu
