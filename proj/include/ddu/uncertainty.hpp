#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ddu/io.hpp"
#include "ddu/mathcore.hpp"

namespace ddu {

/// Members x classes; each row is a probability vector.
struct EnsemblePrediction {
  Matrix member_probs;
};

struct Decomposition {
  double predictive_entropy = 0.0;
  double mutual_information = 0.0;
  double expected_entropy = 0.0;
};

enum class Verdict { OoD, AmbiguousID, UnambiguousID };

std::string_view verdict_name(Verdict v);

struct Thresholds {
  double density_log_threshold = 0.0;
  double entropy_threshold = 0.0;
};

struct UncertaintyReport {
  Vector probs;
  double softmax_entropy = 0.0;
  double log_density = 0.0;
  Verdict verdict = Verdict::UnambiguousID;
};

/// Shannon entropy in nats with 0 ln 0 = 0. Throws InvalidDistribution.
double entropy(std::span<const double> p);

Decomposition decompose(const EnsemblePrediction& e);

/// softmax(logits / T) row by row.
Matrix softmax_with_temperature(const Matrix& logits, double temperature);
double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature);

/// Golden-section search of mean NLL over T in [lo, hi]; falls back to a
/// 400-point scan when the bracket is not unimodal.
double fit_temperature(const Matrix& logits, std::span<const int> labels, double lo = 0.05, double hi = 20.0);

/// Linear interpolation between order statistics (h = (n - 1) q).
double quantile(std::span<const double> values, double q);

/// Lower density_quantile of training log-densities and upper
/// entropy_quantile of training entropies.
Thresholds compute_thresholds(std::span<const double> train_log_densities, std::span<const double> train_entropies,
                              double density_quantile = 0.01, double entropy_quantile = 0.95);

UncertaintyReport disentangle(std::span<const double> probs, double log_density, const Thresholds& t);

/// Index m with H(e1[m]) < H(e2[m]) - (delta - eps). Members are paired by
/// index. Throws PreconditionViolated when the MI/PE premises fail.
std::optional<std::size_t> check_proposition1(const EnsemblePrediction& e1, const EnsemblePrediction& e2,
                                              double delta, double eps);

void write_report_csv(std::ostream& os, std::span<const UncertaintyReport> reports);

Json to_json(const Thresholds& t);
Thresholds thresholds_from_json(const Json& j);

}  // namespace ddu
