#include "ddu/gda.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ddu/errors.hpp"

namespace ddu {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)
constexpr double kJitterStart = 1e-10;
constexpr int kJitterRungs = 21;

}  // namespace

GdaAccumulator::GdaAccumulator(std::size_t dim, int num_classes)
    : dim_(dim),
      counts_(static_cast<std::size_t>(num_classes), 0),
      means_(static_cast<std::size_t>(num_classes), Vector(dim, 0.0)),
      scatter_(static_cast<std::size_t>(num_classes), Matrix(dim, dim)) {}

void GdaAccumulator::add(std::span<const double> z, int label) {
  if (z.size() != dim_) throw ShapeMismatch("feature length does not match accumulator");
  if (label < 0 || static_cast<std::size_t>(label) >= counts_.size()) {
    throw DomainError("label " + std::to_string(label) + " outside the class range");
  }
  const auto c = static_cast<std::size_t>(label);
  const double n = static_cast<double>(++counts_[c]);
  Vector& mu = means_[c];
  Vector delta(dim_);
  for (std::size_t k = 0; k < dim_; ++k) {
    delta[k] = z[k] - mu[k];
    mu[k] += delta[k] / n;
  }
  // Welford: scatter += delta (z - mu_new)^T.
  Matrix& s = scatter_[c];
  for (std::size_t i = 0; i < dim_; ++i) {
    auto row = s.row(i);
    for (std::size_t j = 0; j < dim_; ++j) row[j] += delta[i] * (z[j] - mu[j]);
  }
}

void GdaAccumulator::add(const Matrix& features, std::span<const int> labels) {
  if (features.rows() != labels.size()) throw ShapeMismatch("features and labels disagree on rows");
  for (std::size_t r = 0; r < features.rows(); ++r) add(features.row(r), labels[r]);
}

void GdaAccumulator::merge(const GdaAccumulator& other) {
  if (other.dim_ != dim_ || other.counts_.size() != counts_.size()) {
    throw ShapeMismatch("merging accumulators of different shape");
  }
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    const std::size_t nb = other.counts_[c];
    if (nb == 0) continue;
    const std::size_t na = counts_[c];
    if (na == 0) {
      counts_[c] = nb;
      means_[c] = other.means_[c];
      scatter_[c] = other.scatter_[c];
      continue;
    }
    const double a = static_cast<double>(na);
    const double b = static_cast<double>(nb);
    const double n = a + b;
    Vector delta(dim_);
    for (std::size_t k = 0; k < dim_; ++k) delta[k] = other.means_[c][k] - means_[c][k];
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) {
        scatter_[c](i, j) += other.scatter_[c](i, j) + delta[i] * delta[j] * a * b / n;
      }
    }
    for (std::size_t k = 0; k < dim_; ++k) means_[c][k] += delta[k] * b / n;
    counts_[c] = na + nb;
  }
}

Vector GdaAccumulator::mean(int c) const { return means_[static_cast<std::size_t>(c)]; }

Matrix GdaAccumulator::covariance(int c) const {
  const auto k = static_cast<std::size_t>(c);
  if (counts_[k] < 2) throw ClassUnderpopulated("class " + std::to_string(c) + " has fewer than 2 samples");
  Matrix cov = (1.0 / static_cast<double>(counts_[k] - 1)) * scatter_[k];
  // Symmetrise against accumulated rounding.
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j < i; ++j) cov(i, j) = cov(j, i) = 0.5 * (cov(i, j) + cov(j, i));
  return cov;
}

GdaModel GdaAccumulator::finalize() const {
  std::size_t total = 0;
  for (std::size_t c = 0; c < counts_.size(); ++c) {
    if (counts_[c] < 2) {
      throw ClassUnderpopulated("class " + std::to_string(c) + " has " + std::to_string(counts_[c]) +
                                " samples, need at least 2");
    }
    total += counts_[c];
  }
  std::vector<Matrix> covs;
  for (std::size_t c = 0; c < counts_.size(); ++c) covs.push_back(covariance(static_cast<int>(c)));

  double jitter = kJitterStart;
  for (int rung = 0; rung < kJitterRungs; ++rung, jitter *= 10.0) {
    GdaModel model;
    model.dim = dim_;
    model.jitter = jitter;
    bool ok = true;
    for (std::size_t c = 0; c < counts_.size() && ok; ++c) {
      Matrix cov = covs[c];
      for (std::size_t i = 0; i < dim_; ++i) cov(i, i) += jitter;
      try {
        model.classes.push_back({means_[c], cholesky(cov),
                                 std::log(static_cast<double>(counts_[c]) / static_cast<double>(total))});
      } catch (const NotPositiveDefinite&) {
        ok = false;
      }
    }
    if (ok) return model;
  }
  throw NotPositiveDefinite("no jitter up to 1e10 made the class covariances positive definite");
}

GdaModel gda_fit(const Matrix& features, std::span<const int> labels, int num_classes) {
  GdaAccumulator acc(features.cols(), num_classes);
  acc.add(features, labels);
  return acc.finalize();
}

double gaussian_log_pdf(std::span<const double> z, const Vector& mean, const CholeskyFactor& chol) {
  const std::size_t d = mean.size();
  if (z.size() != d) throw ShapeMismatch("feature length " + std::to_string(z.size()) + " vs model " +
                                         std::to_string(d));
  Vector diff(d);
  for (std::size_t k = 0; k < d; ++k) diff[k] = z[k] - mean[k];
  const Vector s = solve_lower(chol.lower, diff);
  return -0.5 * (static_cast<double>(d) * kLog2Pi + chol.log_det + dot(s, s));
}

Vector class_log_joint(const GdaModel& model, std::span<const double> z) {
  if (z.size() != model.dim) throw ShapeMismatch("feature length does not match the GDA model");
  Vector out(model.classes.size());
  for (std::size_t c = 0; c < model.classes.size(); ++c) {
    const auto& cls = model.classes[c];
    out[c] = cls.log_prior + gaussian_log_pdf(z, cls.mean, cls.cov_chol);
  }
  return out;
}

double log_density(const GdaModel& model, std::span<const double> z) {
  return log_sum_exp(class_log_joint(model, z));
}

Vector log_density_rows(const GdaModel& model, const Matrix& features) {
  Vector out(features.rows());
  for (std::size_t r = 0; r < features.rows(); ++r) out[r] = log_density(model, features.row(r));
  return out;
}

Vector class_posterior(const GdaModel& model, std::span<const double> z) {
  Vector v = class_log_joint(model, z);
  softmax_inplace(v);
  return v;
}

Json to_json(const GdaModel& model) {
  Json classes = Json::array();
  for (const auto& c : model.classes) {
    Json lower = Json::array();
    for (std::size_t r = 0; r < c.cov_chol.lower.rows(); ++r) {
      const auto row = c.cov_chol.lower.row(r);
      lower.push_back(Vector(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(r + 1)));
    }
    classes.push_back({{"mean", c.mean}, {"cov_lower", lower}, {"log_prior", c.log_prior}});
  }
  return {{"K", model.classes.size()}, {"d", model.dim}, {"classes", classes}, {"jitter", model.jitter}};
}

GdaModel gda_from_json(const Json& j) {
  try {
    GdaModel m;
    m.dim = j.at("d").get<std::size_t>();
    m.jitter = j.at("jitter").get<double>();
    for (const auto& c : j.at("classes")) {
      GdaClass cls;
      cls.mean = c.at("mean").get<Vector>();
      cls.log_prior = c.at("log_prior").get<double>();
      Matrix lower(m.dim, m.dim);
      const auto& rows = c.at("cov_lower");
      if (rows.size() != m.dim || cls.mean.size() != m.dim) throw ShapeMismatch("GDA class shape");
      for (std::size_t r = 0; r < m.dim; ++r) {
        const auto row = rows[r].get<Vector>();
        if (row.size() != r + 1) throw ShapeMismatch("cov_lower row length");
        for (std::size_t k = 0; k <= r; ++k) lower(r, k) = row[k];
        cls.cov_chol.log_det += 2.0 * std::log(lower(r, r));
      }
      cls.cov_chol.lower = std::move(lower);
      m.classes.push_back(std::move(cls));
    }
    if (m.classes.size() != j.at("K").get<std::size_t>()) throw ShapeMismatch("GDA class count");
    return m;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed GDA file: ") + e.what());
  }
}

}  // namespace ddu
