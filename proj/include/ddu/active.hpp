#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ddu/data.hpp"
#include "ddu/gda.hpp"
#include "ddu/net.hpp"
#include "ddu/rng.hpp"

namespace ddu {

enum class Acquisition { SoftmaxEntropy, NegLogDensity, EnsemblePE, EnsembleMI, Random };

std::string_view acquisition_name(Acquisition a);
Acquisition parse_acquisition(std::string_view name);

struct AlConfig {
  std::size_t initial_size = 20;
  std::size_t acquisition_size = 5;
  std::size_t budget = 300;
  NetConfig net;
  Acquisition acquisition = Acquisition::NegLogDensity;
  std::size_t ensemble_size = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AlStep {
  std::size_t labeled = 0;
  double accuracy = 0.0;
  std::size_t ambiguous_acquired = 0;    // among this step's acquisitions
  std::vector<std::size_t> acquired;     // pool indices added before this step
};

struct AlCurve {
  std::vector<AlStep> steps;

  std::size_t total_ambiguous_acquired() const;
  std::size_t total_acquired() const;
  /// Fraction of acquired (non-initial) rows that were ambiguous.
  double ambiguous_fraction() const;
  /// First labeled count whose accuracy reaches target, if any.
  std::optional<std::size_t> labels_to_reach(double target) const;
};

/// Higher score = acquired first. gda is required for NegLogDensity, rng for Random.
Vector acquisition_scores(std::span<const NetModel> models, const GdaModel* gda, const Matrix& rows,
                          Acquisition kind, Rng* rng = nullptr);

/// Indices of the `count` highest scores; ties go to the lowest index.
std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t count);

/// Pool-based loop: retrain from scratch on the labeled set, record test
/// accuracy, acquire the top scorers, until the budget is reached.
AlCurve run_active_learning(const Dataset& pool, const Dataset& test, const AlConfig& cfg);

void write_curve_csv(std::ostream& os, const AlCurve& curve);

struct GrowingDataPoint {
  double fraction = 0.0;
  std::size_t train_size = 0;
  double mean_log_density = 0.0;
  double mean_entropy = 0.0;
};

/// Retrains on nested prefixes of a shuffled training set and reports test
/// feature log-density and softmax entropy for each fraction.
std::vector<GrowingDataPoint> growing_data_check(const Dataset& train, const Dataset& test, const NetConfig& net,
                                                 std::span<const double> fractions, std::uint64_t seed);

/// Strictly increasing density and (max - min) / mean entropy below max_relative.
bool growing_data_holds(std::span<const GrowingDataPoint> points, double max_relative = 0.5);

Json to_json(const AlConfig& cfg);
AlConfig al_config_from_json(const Json& j);

}  // namespace ddu
