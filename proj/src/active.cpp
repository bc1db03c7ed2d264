#include "ddu/active.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>

#include "ddu/errors.hpp"
#include "ddu/metrics.hpp"
#include "ddu/uncertainty.hpp"

namespace ddu {

namespace {

constexpr std::uint64_t kInitialStream = 21;
constexpr std::uint64_t kRandomStream = 22;
constexpr std::uint64_t kGrowStream = 23;

// Shuffled, class-balanced choice of initial rows among unambiguous ones.
std::vector<std::size_t> stratified_initial(const Dataset& pool, std::size_t count, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, kInitialStream);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(pool.num_classes));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!pool.ambiguous[i]) by_class[static_cast<std::size_t>(pool.y[i])].push_back(i);
  }
  for (auto& rows : by_class) rng.shuffle(rows);
  std::vector<std::size_t> chosen;
  for (std::size_t round = 0; chosen.size() < count; ++round) {
    bool any = false;
    for (const auto& rows : by_class) {
      if (round < rows.size() && chosen.size() < count) {
        chosen.push_back(rows[round]);
        any = true;
      }
    }
    if (!any) throw PoolExhausted("not enough unambiguous rows for the initial set");
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Matrix mean_probs(std::span<const NetModel> models, const Matrix& x) {
  Matrix mean = forward_batch(models[0], x).probs;
  for (std::size_t m = 1; m < models.size(); ++m) {
    const Matrix p = forward_batch(models[m], x).probs;
    for (std::size_t i = 0; i < mean.rows() * mean.cols(); ++i) mean.data()[i] += p.data()[i];
  }
  const auto inv = 1.0 / static_cast<double>(models.size());
  for (std::size_t i = 0; i < mean.rows() * mean.cols(); ++i) mean.data()[i] *= inv;
  return mean;
}

bool is_ensemble(Acquisition a) { return a == Acquisition::EnsemblePE || a == Acquisition::EnsembleMI; }

}  // namespace

std::string_view acquisition_name(Acquisition a) {
  switch (a) {
    case Acquisition::SoftmaxEntropy: return "softmax_entropy";
    case Acquisition::NegLogDensity: return "neg_log_density";
    case Acquisition::EnsemblePE: return "ensemble_pe";
    case Acquisition::EnsembleMI: return "ensemble_mi";
    case Acquisition::Random: return "random";
  }
  return "unknown";
}

Acquisition parse_acquisition(std::string_view name) {
  for (auto a : {Acquisition::SoftmaxEntropy, Acquisition::NegLogDensity, Acquisition::EnsemblePE,
                 Acquisition::EnsembleMI, Acquisition::Random}) {
    if (acquisition_name(a) == name) return a;
  }
  throw ConfigError("unknown acquisition '" + std::string(name) + "'");
}

void AlConfig::validate() const {
  net.validate();
  if (initial_size < static_cast<std::size_t>(net.num_classes)) {
    throw ConfigError("initial_size must be at least the number of classes");
  }
  if (acquisition_size < 1) throw ConfigError("acquisition_size must be at least 1");
  if (budget < initial_size) throw ConfigError("budget must be at least initial_size");
  if (is_ensemble(acquisition) && ensemble_size < 1) throw ConfigError("ensemble_size must be at least 1");
}

std::size_t AlCurve::total_ambiguous_acquired() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.ambiguous_acquired;
  return n;
}

std::size_t AlCurve::total_acquired() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.acquired.size();
  return n;
}

double AlCurve::ambiguous_fraction() const {
  const std::size_t n = total_acquired();
  return n == 0 ? 0.0 : static_cast<double>(total_ambiguous_acquired()) / static_cast<double>(n);
}

std::optional<std::size_t> AlCurve::labels_to_reach(double target) const {
  for (const auto& s : steps) {
    if (s.accuracy >= target) return s.labeled;
  }
  return std::nullopt;
}

Vector acquisition_scores(std::span<const NetModel> models, const GdaModel* gda, const Matrix& rows,
                          Acquisition kind, Rng* rng) {
  Vector scores(rows.rows());
  switch (kind) {
    case Acquisition::Random:
      if (rng == nullptr) throw PreconditionViolated("random acquisition needs an rng");
      for (double& s : scores) s = rng->uniform();
      return scores;
    case Acquisition::NegLogDensity: {
      if (gda == nullptr) throw MissingGda("neg_log_density acquisition needs a fitted GDA");
      if (models.empty()) throw PreconditionViolated("no model to extract features");
      const Vector ld = log_density_rows(*gda, extract_features(models[0], rows));
      for (std::size_t i = 0; i < ld.size(); ++i) scores[i] = -ld[i];
      return scores;
    }
    case Acquisition::SoftmaxEntropy: {
      if (models.empty()) throw PreconditionViolated("no model for softmax entropy");
      const Matrix probs = forward_batch(models[0], rows).probs;
      for (std::size_t i = 0; i < probs.rows(); ++i) scores[i] = entropy(probs.row(i));
      return scores;
    }
    case Acquisition::EnsemblePE:
    case Acquisition::EnsembleMI: {
      if (models.empty()) throw PreconditionViolated("empty ensemble");
      std::vector<Matrix> member;
      member.reserve(models.size());
      for (const auto& m : models) member.push_back(forward_batch(m, rows).probs);
      const std::size_t k = member[0].cols();
      EnsemblePrediction e{Matrix(models.size(), k)};
      for (std::size_t i = 0; i < rows.rows(); ++i) {
        for (std::size_t m = 0; m < models.size(); ++m) {
          std::copy(member[m].row(i).begin(), member[m].row(i).end(), e.member_probs.row(m).begin());
        }
        const auto d = decompose(e);
        scores[i] = kind == Acquisition::EnsemblePE ? d.predictive_entropy : d.mutual_information;
      }
      return scores;
    }
  }
  throw PreconditionViolated("unhandled acquisition kind");
}

std::vector<std::size_t> top_indices(std::span<const double> scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  count = std::min(count, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(count);
  return order;
}

AlCurve run_active_learning(const Dataset& pool, const Dataset& test, const AlConfig& cfg) {
  cfg.validate();
  if (pool.size() < cfg.budget) throw PoolExhausted("pool smaller than the labeling budget");
  if (pool.dim() != cfg.net.input_dim || test.dim() != cfg.net.input_dim) {
    throw ShapeMismatch("pool/test dimension does not match the net config");
  }
  if (test.size() == 0) throw EmptyInput("empty test set");

  std::vector<bool> labeled(pool.size(), false);
  std::vector<std::size_t> labeled_rows = stratified_initial(pool, cfg.initial_size, cfg.seed);
  for (auto i : labeled_rows) labeled[i] = true;
  Rng random_rng = Rng::derive(cfg.seed, kRandomStream);
  const std::size_t members = is_ensemble(cfg.acquisition) ? cfg.ensemble_size : 1;

  AlCurve curve;
  std::vector<std::size_t> just_acquired;
  for (std::size_t round = 0;; ++round) {
    const Dataset train_set = pool.subset(labeled_rows);
    std::vector<NetModel> models;
    for (std::size_t m = 0; m < members; ++m) {
      NetConfig net = cfg.net;
      net.seed = mix_seed(cfg.seed, 1000 * (round + 1) + m);
      models.push_back(train(train_set, net));
    }
    AlStep step;
    step.labeled = labeled_rows.size();
    step.accuracy = accuracy(argmax_rows(mean_probs(models, test.x)), test.y);
    step.acquired = just_acquired;
    for (auto i : just_acquired) step.ambiguous_acquired += pool.ambiguous[i] ? 1 : 0;
    curve.steps.push_back(std::move(step));

    if (labeled_rows.size() >= cfg.budget) break;
    const std::size_t take = std::min(cfg.acquisition_size, cfg.budget - labeled_rows.size());

    std::vector<std::size_t> candidates;
    candidates.reserve(pool.size() - labeled_rows.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (!labeled[i]) candidates.push_back(i);
    }
    if (candidates.size() < take) throw PoolExhausted("pool ran out of unlabeled rows");
    Matrix rows(candidates.size(), pool.dim());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      std::copy(pool.x.row(candidates[c]).begin(), pool.x.row(candidates[c]).end(), rows.row(c).begin());
    }
    std::optional<GdaModel> gda;
    if (cfg.acquisition == Acquisition::NegLogDensity) {
      gda = gda_fit(extract_features(models[0], train_set.x), train_set.y, train_set.num_classes);
    }
    const Vector scores = acquisition_scores(models, gda ? &*gda : nullptr, rows, cfg.acquisition, &random_rng);
    just_acquired.clear();
    for (auto c : top_indices(scores, take)) {
      just_acquired.push_back(candidates[c]);
      labeled[candidates[c]] = true;
    }
    labeled_rows.insert(labeled_rows.end(), just_acquired.begin(), just_acquired.end());
  }
  return curve;
}

void write_curve_csv(std::ostream& os, const AlCurve& curve) {
  os << "step,labeled,accuracy,ambiguous_acquired\n";
  for (std::size_t s = 0; s < curve.steps.size(); ++s) {
    const auto& st = curve.steps[s];
    os << s << ',' << st.labeled << ',' << format_double(st.accuracy) << ',' << st.ambiguous_acquired << '\n';
  }
}

std::vector<GrowingDataPoint> growing_data_check(const Dataset& train_set, const Dataset& test, const NetConfig& net,
                                                 std::span<const double> fractions, std::uint64_t seed) {
  if (train_set.size() == 0 || test.size() == 0) throw EmptyInput("growing-data check needs train and test rows");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, kGrowStream);
  rng.shuffle(order);

  std::vector<GrowingDataPoint> out;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw DomainError("fractions must lie in (0, 1]");
    const auto n = static_cast<std::size_t>(std::llround(f * static_cast<double>(train_set.size())));
    std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(n, 1)));
    const Dataset sub = train_set.subset(rows);
    NetConfig cfg = net;
    cfg.seed = mix_seed(seed, rows.size());
    const NetModel model = train(sub, cfg);
    const GdaModel gda = gda_fit(extract_features(model, sub.x), sub.y, sub.num_classes);
    const BatchForward fb = forward_batch(model, test.x);
    const Vector ld = log_density_rows(gda, fb.features);
    GrowingDataPoint p;
    p.fraction = f;
    p.train_size = rows.size();
    for (std::size_t i = 0; i < test.size(); ++i) {
      p.mean_log_density += ld[i];
      p.mean_entropy += entropy(fb.probs.row(i));
    }
    p.mean_log_density /= static_cast<double>(test.size());
    p.mean_entropy /= static_cast<double>(test.size());
    out.push_back(p);
  }
  return out;
}

bool growing_data_holds(std::span<const GrowingDataPoint> points, double max_relative) {
  if (points.empty()) return false;
  double lo = points[0].mean_entropy;
  double hi = lo;
  double sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0 && !(points[i].mean_log_density > points[i - 1].mean_log_density)) return false;
    lo = std::min(lo, points[i].mean_entropy);
    hi = std::max(hi, points[i].mean_entropy);
    sum += points[i].mean_entropy;
  }
  const double mean = sum / static_cast<double>(points.size());
  if (mean <= 0.0) return hi - lo == 0.0;
  return (hi - lo) / mean < max_relative;
}

Json to_json(const AlConfig& cfg) {
  return Json{{"initial_size", cfg.initial_size},
              {"acquisition_size", cfg.acquisition_size},
              {"budget", cfg.budget},
              {"acquisition", std::string(acquisition_name(cfg.acquisition))},
              {"ensemble_size", cfg.ensemble_size},
              {"seed", cfg.seed},
              {"net", to_json(cfg.net)}};
}

AlConfig al_config_from_json(const Json& j) {
  const std::string where = "active-learning config";
  AlConfig c;
  c.initial_size = json_field<std::size_t>(j, "initial_size", where);
  c.acquisition_size = json_field<std::size_t>(j, "acquisition_size", where);
  c.budget = json_field<std::size_t>(j, "budget", where);
  c.acquisition = parse_acquisition(json_field<std::string>(j, "acquisition", where));
  c.ensemble_size = j.value("ensemble_size", std::size_t{5});
  c.seed = j.value("seed", std::uint64_t{0});
  c.net = net_config_from_json(json_require(j, "net", where));
  c.validate();
  return c;
}

}  // namespace ddu
