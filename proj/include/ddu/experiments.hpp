#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddu/active.hpp"
#include "ddu/dirichlet.hpp"
#include "ddu/io.hpp"
#include "ddu/net.hpp"
#include "ddu/objectives.hpp"

namespace ddu {

std::string_view version_string();

/// Runs fn(0..n-1) on up to `jobs` threads; results are stored by index.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ExperimentOutcome {
  Json summary = Json::object();
  std::vector<CheckResult> checks;
  std::vector<std::string> outputs;  // file names relative to the output directory

  bool passed() const;
};

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count);

// --- two moons -----------------------------------------------------------

struct TwoMoonsSettings {
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t n_ood = 1000;
  double noise = 0.1;
  double ood_half_width = 6.0;
  double ood_min_dist = 0.5;
  std::size_t grid = 200;
  double grid_half_width = 3.0;
  NetConfig ddu = NetConfig::two_moons_default();
  NetConfig fc = NetConfig::fc_net_default();

  static TwoMoonsSettings from_json(const Json& j);
  Json to_json() const;
};

struct MoonsModelScore {
  double accuracy = 0.0;
  double auroc = 0.0;
};

struct TwoMoonsSeedResult {
  std::uint64_t seed = 0;
  MoonsModelScore ddu;
  MoonsModelScore fc;
  /// grid x grid cells per model: (x0, x1, entropy, log_density); empty unless requested.
  Matrix ddu_grid;
  Matrix fc_grid;
};

TwoMoonsSeedResult two_moons_seed(const TwoMoonsSettings& s, std::uint64_t seed, bool with_grid);

/// Accuracy and AUROC floors for the SN model on every seed, FC AUROC
/// strictly lower on at least 80% of seeds.
std::vector<CheckResult> two_moons_checks(const std::vector<TwoMoonsSeedResult>& runs);

// --- 1D ensemble ----------------------------------------------------------

/// Residual net without normalisation for the 1D ensemble members.
NetConfig toy1d_default_net();

struct Toy1dSettings {
  std::size_t members = 5;
  std::size_t grid = 601;
  double grid_half_width = 6.0;
  NetConfig net;

  Toy1dSettings();

  static Toy1dSettings from_json(const Json& j);
  Json to_json() const;
};

struct Toy1dSeedResult {
  std::uint64_t seed = 0;
  Vector grid;
  std::vector<Matrix> member_probs;  // per member: grid x classes
  Vector pe;
  Vector mi;
  Vector expected_entropy;
};

Toy1dSeedResult toy1d_seed(const Toy1dSettings& s, std::uint64_t seed);
std::vector<CheckResult> toy1d_checks(const std::vector<Toy1dSeedResult>& runs);

// --- disentangling histograms --------------------------------------------

struct HistogramSettings {
  std::size_t n_clean = 1000;
  std::size_t n_ambiguous = 1000;
  std::size_t n_eval = 500;
  double ood_half_width = 6.0;
  double ood_min_dist = 0.5;
  NetConfig net = NetConfig::two_moons_default();

  static HistogramSettings from_json(const Json& j);
  Json to_json() const;
};

enum class Subset { CleanId, AmbiguousId, Ood };
std::string_view subset_name(Subset s);

struct HistogramSample {
  double entropy = 0.0;
  double log_density = 0.0;
  Subset subset = Subset::CleanId;
};

std::vector<HistogramSample> disentangle_histograms(const HistogramSettings& s, std::uint64_t seed);
std::vector<CheckResult> histogram_checks(const std::vector<HistogramSample>& samples);

// --- dirichlet analysis -----------------------------------------------------

struct DirichletSettings {
  std::size_t num_alphas = 20;
  std::size_t mc_samples = 1000000;
  double alpha_lo = 0.5;
  double alpha_hi = 5.0;
  std::vector<std::size_t> class_counts{2, 3, 5, 10};
  double max_se = 3.0;
  /// Trained toy-1d ensembles used for the lower-bound violation rate.
  bool ensemble_study = true;
  Toy1dSettings toy1d;

  static DirichletSettings from_json(const Json& j);
  Json to_json() const;
};

struct MonteCarloCheck {
  std::string quantity;
  double analytic = 0.0;
  double mc_mean = 0.0;
  double mc_se = 0.0;

  double z_score() const;
};

struct DirichletRow {
  Vector alpha;
  double expected_entropy = 0.0;
  double entropy_variance = 0.0;
  double mc_mean = 0.0;  // of the categorical entropy
  double mc_var = 0.0;
  double mc_se = 0.0;    // of mc_mean
  std::vector<MonteCarloCheck> checks;
};

/// Analytic moments of one Dirichlet versus n Monte-Carlo samples.
DirichletRow dirichlet_mc_row(const DirichletParams& d, std::size_t n, std::uint64_t seed);

struct ViolationStudy {
  std::size_t points = 0;
  std::size_t violations = 0;
  double rate() const { return points == 0 ? 0.0 : static_cast<double>(violations) / static_cast<double>(points); }
};

/// Fits a Dirichlet to each grid point of a trained ensemble and counts
/// points where the analytic entropy variance exceeds the members' empirical
/// variance by more than 3 SE.
ViolationStudy dirichlet_violation_study(const Toy1dSeedResult& ensemble);

// --- objective mismatch -----------------------------------------------------

struct ObjectiveSettings {
  std::size_t n = 600;
  double label_noise = 0.04;
  Vector star{-1.75, 0.0};
  GradientDescentConfig gd;
  EmConfig em;

  static ObjectiveSettings from_json(const Json& j);
  Json to_json() const;
};

struct ObjectiveRun {
  std::uint64_t seed = 0;
  ObjectiveScores conditional;
  ObjectiveScores joint;
  ObjectiveScores marginal;
  double star_entropy_conditional = 0.0;
  double star_entropy_joint = 0.0;
  std::vector<double> em_trace;
};

ObjectiveRun objective_mismatch_run(const ObjectiveSettings& s, std::uint64_t seed);
/// Diagonal dominance and H(Z) ordering with tolerance 1e-6, plus EM monotonicity.
std::vector<CheckResult> objective_table_checks(const ObjectiveRun& run);
/// Seed-mean star-point entropies: conditional > 0.5, joint < 0.1.
CheckResult star_point_check(const std::vector<ObjectiveRun>& runs);

// --- active learning --------------------------------------------------------

/// Small residual+SN net retrained every acquisition round.
AlConfig active_default_al();

struct ActiveSettings {
  std::size_t n_clean = 1000;
  std::size_t n_ambiguous = 60000;
  std::size_t n_test = 1000;
  AlConfig al = active_default_al();
  std::size_t plateau_steps = 5;
  std::vector<double> growing_fractions{0.1, 0.2, 1.0};
  std::size_t growing_clean = 1000;
  std::size_t growing_ambiguous = 1000;
  NetConfig growing_net = NetConfig::two_moons_default();

  static ActiveSettings from_json(const Json& j);
  Json to_json() const;
};

struct ActiveComparison {
  std::uint64_t seed = 0;
  AlCurve softmax_entropy;
  AlCurve neg_log_density;
  double target_accuracy = 0.0;
  std::optional<std::size_t> softmax_labels;
  std::optional<std::size_t> density_labels;

  bool fewer_labels() const;
  bool lower_ambiguous_fraction() const;
};

ActiveComparison active_comparison_seed(const ActiveSettings& s, std::uint64_t seed);
std::vector<CheckResult> active_checks(const std::vector<ActiveComparison>& runs);

std::vector<GrowingDataPoint> growing_data_seed(const ActiveSettings& s, std::uint64_t seed);
CheckResult growing_data_majority(const std::vector<std::vector<GrowingDataPoint>>& runs);

// --- dispatch ----------------------------------------------------------------

const std::vector<std::string>& experiment_names();

struct RunOptions {
  std::optional<std::uint64_t> seed_override;
  std::size_t jobs = 1;
};

/// Runs a named experiment and writes config.json, manifest.json and CSVs
/// into out_dir. Throws UnknownExperiment for an unrecognised name.
ExperimentOutcome run_experiment(std::string_view name, const Json& config, const std::filesystem::path& out_dir,
                                 const RunOptions& opts);

}  // namespace ddu
