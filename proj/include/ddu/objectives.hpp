#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "ddu/data.hpp"
#include "ddu/gda.hpp"
#include "ddu/mathcore.hpp"

namespace ddu {

struct GmmComponent {
  Vector mean;
  Matrix chol_lower;  // covariance = L L^T, positive diagonal
  double logit = 0.0;
};

/// K full-covariance Gaussian components with softmax mixture weights.
struct GmmParams {
  std::size_t dim = 0;
  std::vector<GmmComponent> components;

  std::size_t num_components() const { return components.size(); }
  Vector log_weights() const;
  /// log q(c) + log q(z | c) for every component.
  Vector log_joint(std::span<const double> z) const;

  /// Unconstrained parameter vector: per component mean, lower triangle
  /// (row-major, log on the diagonal), logit.
  Vector flatten() const;
  static GmmParams unflatten(std::span<const double> theta, std::size_t dim, std::size_t k);
  static std::size_t parameter_count(std::size_t dim, std::size_t k);
};

GmmParams gmm_from_gda(const GdaModel& gda);

struct ObjectiveScores {
  std::optional<double> cond_nll;      // H(Y|Z)
  std::optional<double> joint_nll;     // H(Y,Z)
  double marginal_nll = 0.0;           // H(Z)
};

double conditional_nll(const GmmParams& gmm, const Matrix& z, std::span<const int> y);
double marginal_nll(const GmmParams& gmm, const Matrix& z);

struct ValueAndGradient {
  double value = 0.0;
  Vector gradient;
};

/// Mean conditional NLL and its gradient with respect to flatten().
ValueAndGradient conditional_objective(const GmmParams& gmm, const Matrix& z, std::span<const int> y);
/// Mean marginal NLL and its gradient with respect to flatten().
ValueAndGradient marginal_objective(const GmmParams& gmm, const Matrix& z);

struct GradientDescentConfig {
  double learning_rate = 1e-2;
  double relative_tolerance = 1e-8;
  std::size_t max_iterations = 5000;
};

struct FitTrace {
  GmmParams params;
  std::vector<double> objective;  // per accepted iteration, starting at the init
};

/// Gradient descent on -1/N sum log q(y|z), halving the step on increase.
FitTrace fit_conditional(const Dataset& data, const GmmParams& init, const GradientDescentConfig& cfg = {});

/// Closed-form joint fit: the GDA solution on raw coordinates.
GmmParams fit_joint(const Dataset& data);

struct EmConfig {
  double relative_tolerance = 1e-8;
  std::size_t max_iterations = 10000;
  double perturbation = 1e-3;
  std::uint64_t seed = 0;
};

/// EM on unlabeled rows, initialised at the GDA fit with means nudged by
/// perturbation * per-dimension std. objective holds the marginal NLL trace.
FitTrace fit_marginal_em(const Dataset& data, std::size_t k, const GmmParams& init, const EmConfig& cfg = {});

ObjectiveScores score(const GmmParams& gmm, const Dataset& data, bool supervised);

struct ScoreRow {
  const char* objective;
  ObjectiveScores scores;
};

void write_score_table_csv(std::ostream& os, std::span<const ScoreRow> rows);

}  // namespace ddu
