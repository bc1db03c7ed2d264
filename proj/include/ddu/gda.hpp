#pragma once

#include <span>
#include <vector>

#include "ddu/io.hpp"
#include "ddu/mathcore.hpp"

namespace ddu {

struct GdaClass {
  Vector mean;
  CholeskyFactor cov_chol;  // of covariance + jitter * I
  double log_prior = 0.0;
};

/// One Gaussian per class with empirical mean, unbiased covariance and
/// frequency prior; the feature-space density is the mixture over classes.
struct GdaModel {
  std::size_t dim = 0;
  std::vector<GdaClass> classes;
  double jitter = 0.0;

  std::size_t num_classes() const { return classes.size(); }
};

/// Per-class running mean and scatter; chunks merge exactly.
class GdaAccumulator {
 public:
  GdaAccumulator(std::size_t dim, int num_classes);

  void add(std::span<const double> z, int label);
  void add(const Matrix& features, std::span<const int> labels);
  void merge(const GdaAccumulator& other);

  std::size_t count(int c) const { return counts_[static_cast<std::size_t>(c)]; }
  Vector mean(int c) const;
  /// Unbiased (n_c - 1) covariance.
  Matrix covariance(int c) const;

  GdaModel finalize() const;

 private:
  std::size_t dim_;
  std::vector<std::size_t> counts_;
  std::vector<Vector> means_;
  std::vector<Matrix> scatter_;
};

/// Jitter ladder: 1e-10, 1e-9, ... shared across classes.
GdaModel gda_fit(const Matrix& features, std::span<const int> labels, int num_classes);

/// Per-class log pi_c + log N(z; mu_c, Sigma_c).
Vector class_log_joint(const GdaModel& model, std::span<const double> z);
double gaussian_log_pdf(std::span<const double> z, const Vector& mean, const CholeskyFactor& chol);
double log_density(const GdaModel& model, std::span<const double> z);
Vector log_density_rows(const GdaModel& model, const Matrix& features);
Vector class_posterior(const GdaModel& model, std::span<const double> z);

Json to_json(const GdaModel& model);
GdaModel gda_from_json(const Json& j);

}  // namespace ddu
