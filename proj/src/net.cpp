#include "ddu/net.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddu/errors.hpp"
#include "ddu/rng.hpp"

namespace ddu {

namespace {

enum Stream : std::uint64_t { kInit = 11, kPower = 12, kBatches = 13 };

constexpr std::size_t kEvalChunk = 4096;

bool sn_active(const NetConfig& c) { return c.sn_coefficient.has_value(); }

void leaky_inplace(Matrix& m, double slope) {
  for (double& v : m.data()) v = v > 0.0 ? v : slope * v;
}

void add_bias(Matrix& m, const Vector& b) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
}

Matrix affine(const Matrix& x, const Matrix& w_eff, const Vector& b) {
  Matrix out = matmul_bt(x, w_eff);
  add_bias(out, b);
  return out;
}

void softmax_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) softmax_inplace(m.row(r));
}

struct Activations {
  std::vector<Matrix> effective;  // per layer
  std::vector<Matrix> inputs;     // input to each layer
  std::vector<Matrix> pre;        // pre-activation of each block
  Matrix features;
  Matrix logits;
};

std::vector<Matrix> effective_weights(const NetModel& model) {
  std::vector<Matrix> eff;
  eff.reserve(model.layers.size());
  for (const auto& layer : model.layers) eff.push_back(layer.effective_weight(model.config.sn_coefficient));
  return eff;
}

Matrix run_blocks(const NetModel& model, const std::vector<Matrix>& eff, const Matrix& x,
                  Activations* trace) {
  if (x.cols() != model.config.input_dim) {
    throw ShapeMismatch("input has " + std::to_string(x.cols()) + " columns, model expects " +
                        std::to_string(model.config.input_dim));
  }
  const double slope = model.config.leaky_slope;
  if (trace) trace->inputs.push_back(x);
  Matrix z = affine(x, eff[0], model.layers[0].b);
  for (std::size_t l = 1; l + 1 < model.layers.size(); ++l) {
    if (trace) trace->inputs.push_back(z);
    Matrix pre = affine(z, eff[l], model.layers[l].b);
    if (trace) trace->pre.push_back(pre);
    leaky_inplace(pre, slope);
    if (model.config.use_residual) {
      for (std::size_t i = 0; i < z.data().size(); ++i) z.data()[i] += pre.data()[i];
    } else {
      z = std::move(pre);
    }
  }
  return z;
}

void init_layer(DenseLayer& layer, std::size_t in, std::size_t out, bool normalized, Rng& init, Rng& power) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  layer.w = Matrix(out, in);
  for (double& v : layer.w.data()) v = init.uniform(-bound, bound);
  layer.b.assign(out, 0.0);
  for (double& v : layer.b) v = init.uniform(-bound, bound);
  layer.u.assign(out, 0.0);
  for (double& v : layer.u) v = power.normal();
  const double n = norm2(layer.u);
  for (double& v : layer.u) v /= n;
  layer.normalized = normalized;
  layer.sigma = 0.0;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Flat Adam / momentum state for one tensor.
struct Slot {
  std::vector<double> m;
  std::vector<double> v;
};

void optimizer_update(const OptimizerSpec& spec, std::span<double> param, std::span<const double> grad,
                      double scale, Slot& slot, std::size_t t) {
  if (slot.m.empty()) {
    slot.m.assign(param.size(), 0.0);
    if (spec.kind == OptimizerKind::Adam) slot.v.assign(param.size(), 0.0);
  }
  if (spec.kind == OptimizerKind::Adam) {
    const double bc1 = 1.0 - std::pow(spec.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(spec.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i] * scale;
      slot.m[i] = spec.beta1 * slot.m[i] + (1.0 - spec.beta1) * g;
      slot.v[i] = spec.beta2 * slot.v[i] + (1.0 - spec.beta2) * g * g;
      const double mh = slot.m[i] / bc1;
      const double vh = slot.v[i] / bc2;
      param[i] -= spec.lr * mh / (std::sqrt(vh) + spec.eps);
    }
  } else {
    for (std::size_t i = 0; i < param.size(); ++i) {
      slot.m[i] = spec.momentum * slot.m[i] + grad[i] * scale;
      param[i] -= spec.lr * slot.m[i];
    }
  }
}

}  // namespace

void NetConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (width == 0) throw ConfigError("width must be positive");
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (sn_coefficient && !(*sn_coefficient > 0.0)) throw ConfigError("sn_coefficient must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer lr must be positive");
}

NetConfig NetConfig::two_moons_default() { return NetConfig{}; }

NetConfig NetConfig::fc_net_default() {
  NetConfig c;
  c.use_residual = false;
  c.sn_coefficient.reset();
  return c;
}

double DenseLayer::scale(std::optional<double> coefficient) const {
  if (!normalized || !coefficient || sigma <= *coefficient) return 1.0;
  return *coefficient / sigma;
}

Matrix DenseLayer::effective_weight(std::optional<double> coefficient) const {
  const double s = scale(coefficient);
  return s == 1.0 ? w : s * w;
}

bool NetModel::parameters_equal(const NetModel& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& a = layers[l];
    const auto& b = other.layers[l];
    if (!(a.w == b.w) || a.b != b.b || a.u != b.u || a.sigma != b.sigma) return false;
  }
  return true;
}

NetModel init_model(const NetConfig& config) {
  config.validate();
  NetModel model;
  model.config = config;
  Rng init = Rng::derive(config.seed, kInit);
  Rng power = Rng::derive(config.seed, kPower);
  const bool sn = sn_active(config);
  const std::size_t n_layers = config.num_residual_blocks + 2;
  model.layers.resize(n_layers);
  init_layer(model.layers[0], config.input_dim, config.width, sn, init, power);
  for (std::size_t l = 1; l + 1 < n_layers; ++l) {
    init_layer(model.layers[l], config.width, config.width, sn, init, power);
  }
  init_layer(model.layers.back(), config.width, static_cast<std::size_t>(config.num_classes),
             sn && config.sn_on_head, init, power);
  if (sn) spectral_norm_step(model, 1);
  return model;
}

void spectral_norm_step(NetModel& model, int steps) {
  for (auto& layer : model.layers) {
    if (!layer.normalized) continue;
    auto est = power_iteration_spectral_norm(layer.w, std::move(layer.u), steps);
    layer.u = std::move(est.u);
    layer.sigma = est.sigma;
  }
}

NetModel apply_spectral_norm(NetModel model) {
  spectral_norm_step(model, 1);
  return model;
}

BatchForward forward_batch(const NetModel& model, const Matrix& x) {
  const auto eff = effective_weights(model);
  BatchForward out;
  out.features = Matrix(0, model.config.width);
  out.logits = Matrix(0, static_cast<std::size_t>(model.config.num_classes));
  out.probs = out.logits;
  out.features.data().reserve(x.rows() * model.config.width);
  for (std::size_t start = 0; start < x.rows(); start += kEvalChunk) {
    const std::size_t end = std::min(x.rows(), start + kEvalChunk);
    Matrix chunk(end - start, x.cols(),
                 std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(start * x.cols()),
                                     x.data().begin() + static_cast<std::ptrdiff_t>(end * x.cols())));
    Matrix z = run_blocks(model, eff, chunk, nullptr);
    Matrix logits = affine(z, eff.back(), model.head().b);
    Matrix probs = logits;
    softmax_rows(probs);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      out.features.append_row(z.row(r));
      out.logits.append_row(logits.row(r));
      out.probs.append_row(probs.row(r));
    }
  }
  if (x.rows() == 0 && x.cols() != model.config.input_dim) {
    throw ShapeMismatch("input column count does not match the model");
  }
  return out;
}

ForwardTrace forward(const NetModel& model, std::span<const double> x) {
  Matrix row(1, x.size(), std::vector<double>(x.begin(), x.end()));
  auto b = forward_batch(model, row);
  return {Vector(b.features.row(0).begin(), b.features.row(0).end()),
          Vector(b.logits.row(0).begin(), b.logits.row(0).end()),
          Vector(b.probs.row(0).begin(), b.probs.row(0).end())};
}

Matrix extract_features(const NetModel& model, const Matrix& x) { return forward_batch(model, x).features; }

Matrix head_logits(const NetModel& model, const Matrix& features) {
  if (features.cols() != model.config.width) throw ShapeMismatch("feature width does not match the head");
  return affine(features, model.head().effective_weight(model.config.sn_coefficient), model.head().b);
}

Gradients backprop_gradients(const NetModel& model, const Matrix& x, std::span<const int> y) {
  if (x.rows() == 0) throw EmptyInput("backprop on an empty batch");
  if (y.size() != x.rows()) throw ShapeMismatch("labels and batch rows disagree");
  const std::size_t n_layers = model.layers.size();
  const auto n = static_cast<double>(x.rows());
  const double slope = model.config.leaky_slope;
  const auto coeff = model.config.sn_coefficient;

  Activations act;
  act.effective = effective_weights(model);
  act.features = run_blocks(model, act.effective, x, &act);
  Matrix probs = affine(act.features, act.effective.back(), model.head().b);
  softmax_rows(probs);

  Gradients g;
  g.dw.resize(n_layers);
  g.db.resize(n_layers);
  // d loss / d logits = (p - onehot) / n.
  Matrix delta = probs;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto label = static_cast<std::size_t>(y[r]);
    if (y[r] < 0 || label >= probs.cols()) throw ShapeMismatch("label outside the head's classes");
    g.loss -= std::log(std::max(probs(r, label), 1e-300));
    if (argmax(probs.row(r)) == label) ++g.correct;
    delta(r, label) -= 1.0;
  }
  g.loss /= n;
  for (double& v : delta.data()) v /= n;

  auto layer_grads = [&](std::size_t l, const Matrix& d, const Matrix& input) {
    Matrix dw = matmul_at(d, input);
    const double s = model.layers[l].scale(coeff);
    if (s != 1.0) dw = s * dw;
    Vector db(d.cols(), 0.0);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      const auto row = d.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
    }
    g.dw[l] = std::move(dw);
    g.db[l] = std::move(db);
  };

  layer_grads(n_layers - 1, delta, act.features);
  Matrix dz = delta * act.effective.back();
  for (std::size_t l = n_layers - 2; l >= 1; --l) {
    const Matrix& pre = act.pre[l - 1];
    Matrix dpre = dz;
    for (std::size_t i = 0; i < dpre.data().size(); ++i) {
      if (!(pre.data()[i] > 0.0)) dpre.data()[i] *= slope;
    }
    layer_grads(l, dpre, act.inputs[l]);
    Matrix dinput = dpre * act.effective[l];
    if (model.config.use_residual) {
      for (std::size_t i = 0; i < dz.data().size(); ++i) dz.data()[i] += dinput.data()[i];
    } else {
      dz = std::move(dinput);
    }
  }
  layer_grads(0, dz, act.inputs[0]);
  return g;
}

double mean_cross_entropy(const NetModel& model, const Matrix& x, std::span<const int> y) {
  const auto out = forward_batch(model, x);
  double loss = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    loss -= std::log(std::max(out.probs(r, static_cast<std::size_t>(y[r])), 1e-300));
  }
  return loss / static_cast<double>(x.rows());
}

TrainResult train_with_log(const Dataset& dataset, const NetConfig& config) {
  config.validate();
  if (dataset.size() == 0) throw EmptyInput("training set is empty");
  if (dataset.dim() != config.input_dim) throw ShapeMismatch("dataset dimension does not match input_dim");
  for (int label : dataset.y) {
    if (label < 0 || label >= config.num_classes) throw DomainError("label outside [0, num_classes)");
  }

  TrainResult result{init_model(config), {}};
  NetModel& model = result.model;
  Rng batches = Rng::derive(config.seed, kBatches);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Slot> w_slots(model.layers.size());
  std::vector<Slot> b_slots(model.layers.size());
  const std::size_t dim = dataset.dim();
  std::size_t t = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    batches.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Matrix xb(end - start, dim);
      std::vector<int> yb(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto src = dataset.x.row(order[i]);
        std::copy(src.begin(), src.end(), xb.row(i - start).begin());
        yb[i - start] = dataset.y[order[i]];
      }
      Gradients g = backprop_gradients(model, xb, yb);
      if (!std::isfinite(g.loss)) {
        throw DivergedLoss("loss became non-finite at epoch " + std::to_string(epoch));
      }
      loss_sum += g.loss * static_cast<double>(end - start);
      correct += g.correct;
      ++t;
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        optimizer_update(config.optimizer, model.layers[l].w.data(), g.dw[l].data(), 1.0, w_slots[l], t);
        optimizer_update(config.optimizer, model.layers[l].b, g.db[l], 1.0, b_slots[l], t);
      }
      if (sn_active(config)) spectral_norm_step(model, 1);
    }
    const auto n = static_cast<double>(order.size());
    result.log.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n});
  }
  // Settle the power iteration so sigma estimates are converged at evaluation.
  if (sn_active(config)) spectral_norm_step(model, 10);
  for (const auto& layer : model.layers) {
    if (!layer.w.all_finite()) throw DivergedLoss("parameters became non-finite");
  }
  return result;
}

NetModel train(const Dataset& dataset, const NetConfig& config) {
  return train_with_log(dataset, config).model;
}

Json to_json(const NetConfig& c) {
  Json opt = {{"kind", c.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd_momentum"},
              {"lr", c.optimizer.lr},
              {"momentum", c.optimizer.momentum},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps}};
  return {{"input_dim", c.input_dim},
          {"width", c.width},
          {"num_residual_blocks", c.num_residual_blocks},
          {"num_classes", c.num_classes},
          {"use_residual", c.use_residual},
          {"sn_coefficient", c.sn_coefficient ? Json(*c.sn_coefficient) : Json(nullptr)},
          {"sn_on_head", c.sn_on_head},
          {"leaky_slope", c.leaky_slope},
          {"optimizer", opt},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

namespace {

Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(Vector(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  Matrix m;
  for (const auto& row : j) m.append_row(row.get<Vector>());
  return m;
}

Json layer_json(const DenseLayer& l) {
  return {{"w", matrix_json(l.w)}, {"b", l.b}, {"u", l.u}, {"sigma", l.sigma}, {"normalized", l.normalized}};
}

DenseLayer layer_from_json(const Json& j) {
  DenseLayer l;
  l.w = matrix_from_json(json_require(j, "w", "layer"));
  l.b = json_field<Vector>(j, "b", "layer");
  l.u = json_field<Vector>(j, "u", "layer");
  l.sigma = j.value("sigma", 0.0);
  l.normalized = j.value("normalized", false);
  return l;
}

}  // namespace

NetConfig net_config_from_json(const Json& j) {
  const std::string where = "net config";
  NetConfig c;
  c.input_dim = json_field<std::size_t>(j, "input_dim", where);
  c.width = json_field<std::size_t>(j, "width", where);
  c.num_residual_blocks = json_field<std::size_t>(j, "num_residual_blocks", where);
  c.num_classes = json_field<int>(j, "num_classes", where);
  c.use_residual = json_field<bool>(j, "use_residual", where);
  const Json& sn = json_require(j, "sn_coefficient", where);
  if (sn.is_null()) {
    c.sn_coefficient.reset();
  } else if (sn.is_number()) {
    c.sn_coefficient = sn.get<double>();
  } else {
    throw ConfigError("field 'sn_coefficient' in " + where + " must be a number or null");
  }
  c.sn_on_head = j.value("sn_on_head", true);
  c.leaky_slope = json_field<double>(j, "leaky_slope", where);
  const Json& opt = json_require(j, "optimizer", where);
  const auto kind = json_field<std::string>(opt, "kind", "optimizer");
  if (kind == "adam") {
    c.optimizer.kind = OptimizerKind::Adam;
  } else if (kind == "sgd_momentum") {
    c.optimizer.kind = OptimizerKind::SgdMomentum;
  } else {
    throw ConfigError("optimizer kind must be 'adam' or 'sgd_momentum', got '" + kind + "'");
  }
  c.optimizer.lr = json_field<double>(opt, "lr", "optimizer");
  c.optimizer.momentum = opt.value("momentum", 0.9);
  c.optimizer.beta1 = opt.value("beta1", 0.9);
  c.optimizer.beta2 = opt.value("beta2", 0.999);
  c.optimizer.eps = opt.value("eps", 1e-8);
  c.epochs = json_field<std::size_t>(j, "epochs", where);
  c.batch_size = json_field<std::size_t>(j, "batch_size", where);
  c.seed = j.value("seed", std::uint64_t{0});
  c.validate();
  return c;
}

Json to_json(const NetModel& model) {
  Json layers = Json::array();
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) layers.push_back(layer_json(model.layers[l]));
  return {{"config", to_json(model.config)}, {"layers", layers}, {"head", layer_json(model.head())}};
}

NetModel net_model_from_json(const Json& j) {
  NetModel m;
  m.config = net_config_from_json(json_require(j, "config", "model"));
  for (const auto& l : json_require(j, "layers", "model")) m.layers.push_back(layer_from_json(l));
  m.layers.push_back(layer_from_json(json_require(j, "head", "model")));
  if (m.layers.size() != m.config.num_residual_blocks + 2) {
    throw ShapeMismatch("model file layer count does not match its config");
  }
  if (m.lift().w.cols() != m.config.input_dim || m.head().w.rows() != static_cast<std::size_t>(m.config.num_classes)) {
    throw ShapeMismatch("model file shapes do not match its config");
  }
  return m;
}

}  // namespace ddu
