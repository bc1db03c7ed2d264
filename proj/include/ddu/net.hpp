#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ddu/data.hpp"
#include "ddu/io.hpp"
#include "ddu/mathcore.hpp"

namespace ddu {

enum class OptimizerKind { Adam, SgdMomentum };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct NetConfig {
  std::size_t input_dim = 2;
  std::size_t width = 128;
  std::size_t num_residual_blocks = 4;
  int num_classes = 2;
  bool use_residual = true;
  std::optional<double> sn_coefficient = 3.0;
  bool sn_on_head = true;
  double leaky_slope = 0.01;
  OptimizerSpec optimizer;
  std::size_t epochs = 150;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;

  void validate() const;

  /// ResFFN-4-128 with spectral normalisation (c = 3), Adam 1e-3, 150 epochs.
  static NetConfig two_moons_default();
  /// Same width and depth without residual connections or normalisation.
  static NetConfig fc_net_default();
};

/// Dense layer y = W_eff x + b. When normalised, W_eff = W * min(1, c / sigma)
/// where sigma is the running power-iteration estimate of |W|_2.
struct DenseLayer {
  Matrix w;  // out x in
  Vector b;
  Vector u;  // left singular vector estimate, length out
  double sigma = 0.0;
  bool normalized = false;

  double scale(std::optional<double> coefficient) const;
  Matrix effective_weight(std::optional<double> coefficient) const;
};

struct NetModel {
  NetConfig config;
  /// layers[0] is the input lift, then one layer per block, then the head.
  std::vector<DenseLayer> layers;

  DenseLayer& lift() { return layers.front(); }
  const DenseLayer& lift() const { return layers.front(); }
  DenseLayer& head() { return layers.back(); }
  const DenseLayer& head() const { return layers.back(); }
  std::span<DenseLayer> blocks() { return {layers.data() + 1, layers.size() - 2}; }
  std::span<const DenseLayer> blocks() const { return {layers.data() + 1, layers.size() - 2}; }

  bool parameters_equal(const NetModel& other) const;
};

struct ForwardTrace {
  Vector features;
  Vector logits;
  Vector probs;
};

struct BatchForward {
  Matrix features;
  Matrix logits;
  Matrix probs;
};

/// Randomly initialised model; power-iteration state drawn from the seed.
NetModel init_model(const NetConfig& config);

ForwardTrace forward(const NetModel& model, std::span<const double> x);
BatchForward forward_batch(const NetModel& model, const Matrix& x);
/// Penultimate features (output of the last block) for every row.
Matrix extract_features(const NetModel& model, const Matrix& x);
/// Head logits for precomputed features.
Matrix head_logits(const NetModel& model, const Matrix& features);

/// Advances every normalised layer's power iteration by `steps`.
void spectral_norm_step(NetModel& model, int steps = 1);
/// One power-iteration step on a copy of the model.
NetModel apply_spectral_norm(NetModel model);

struct Gradients {
  std::vector<Matrix> dw;
  std::vector<Vector> db;
  double loss = 0.0;
  std::size_t correct = 0;
};

/// Exact gradients of mean cross-entropy; spectral scales are held fixed.
Gradients backprop_gradients(const NetModel& model, const Matrix& x, std::span<const int> y);

/// Mean cross-entropy of the model on (x, y).
double mean_cross_entropy(const NetModel& model, const Matrix& x, std::span<const int> y);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  NetModel model;
  std::vector<EpochLog> log;
};

/// Mini-batch training on mean cross-entropy. Deterministic given the seed.
/// Throws DivergedLoss when the loss becomes non-finite.
TrainResult train_with_log(const Dataset& dataset, const NetConfig& config);
NetModel train(const Dataset& dataset, const NetConfig& config);

Json to_json(const NetConfig& config);
NetConfig net_config_from_json(const Json& j);
Json to_json(const NetModel& model);
NetModel net_model_from_json(const Json& j);

}  // namespace ddu
