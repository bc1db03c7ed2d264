#pragma once

#include <cstddef>
#include <span>

#include "ddu/mathcore.hpp"
#include "ddu/rng.hpp"

namespace ddu {

/// Concentration parameters of a Dirichlet distribution over the simplex.
class DirichletParams {
 public:
  explicit DirichletParams(Vector alpha);

  const Vector& alpha() const { return alpha_; }
  double alpha0() const { return alpha0_; }
  std::size_t size() const { return alpha_.size(); }
  double operator[](std::size_t i) const { return alpha_[i]; }

 private:
  Vector alpha_;
  double alpha0_;
};

/// E[log p_i] = psi(a_i) - psi(a_0).
double expected_log_p(const DirichletParams& d, std::size_t i);

/// Cov[log p_i, log p_j] = psi'(a_i) [i == j] - psi'(a_0).
double cov_log_p(const DirichletParams& d, std::size_t i, std::size_t j);

/// x (x + 1) ... (x + k - 1); 1 for k = 0.
double rising_factorial(double x, unsigned k);

/// E[p_i^n p_j^m log p_i] for i != j.
double moment_pn_pm_logp(const DirichletParams& d, std::size_t i, std::size_t j, unsigned n, unsigned m);

/// E[H(Cat(p))] = psi(a_0 + 1) - sum_i (a_i / a_0) psi(a_i + 1).
double expected_entropy(const DirichletParams& d);

/// Var[H(Cat(p))] in closed form.
double entropy_variance(const DirichletParams& d);

/// Dirichlet with mean `predictive` whose expected entropy equals
/// H(predictive) - mutual_information; alpha_0 found by bisection on
/// [1e-3, 1e6]. Below the reachable MI range the upper bracket is returned.
DirichletParams fit_from_pe_mi(std::span<const double> predictive, double mutual_information);

/// n rows of normalised Gamma draws.
Matrix sample_dirichlet(const DirichletParams& d, Rng& rng, std::size_t n);

}  // namespace ddu
