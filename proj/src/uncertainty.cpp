#include "ddu/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "ddu/errors.hpp"

namespace ddu {

namespace {

constexpr double kProbTol = 1e-9;

void check_distribution(std::span<const double> p) {
  if (p.empty()) throw InvalidDistribution("empty probability vector");
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidDistribution("negative or non-finite probability");
    s += v;
  }
  if (std::abs(s - 1.0) > kProbTol) throw InvalidDistribution("probabilities sum to " + std::to_string(s));
}

double golden_section(const auto& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::OoD: return "OoD";
    case Verdict::AmbiguousID: return "AmbiguousID";
    case Verdict::UnambiguousID: return "UnambiguousID";
  }
  return "UnambiguousID";
}

double entropy(std::span<const double> p) {
  check_distribution(p);
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

Decomposition decompose(const EnsemblePrediction& e) {
  const Matrix& m = e.member_probs;
  if (m.rows() == 0 || m.cols() == 0) throw InvalidDistribution("ensemble has no members");
  Vector mean(m.cols(), 0.0);
  double expected = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    expected += entropy(row);
    for (std::size_t k = 0; k < row.size(); ++k) mean[k] += row[k];
  }
  const auto members = static_cast<double>(m.rows());
  for (double& v : mean) v /= members;
  Decomposition d;
  d.expected_entropy = expected / members;
  d.predictive_entropy = entropy(mean);
  d.mutual_information = d.predictive_entropy - d.expected_entropy;
  return d;
}

Matrix softmax_with_temperature(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("temperature must be positive");
  Matrix out = logits;
  for (double& v : out.data()) v /= temperature;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

double temperature_nll(const Matrix& logits, std::span<const int> labels, double temperature) {
  if (logits.rows() == 0) throw EmptyValidation("no validation rows");
  if (labels.size() != logits.rows()) throw LengthMismatch("logits and labels disagree on rows");
  double nll = 0.0;
  Vector scaled(logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    for (std::size_t k = 0; k < row.size(); ++k) scaled[k] = row[k] / temperature;
    nll += log_sum_exp(scaled) - scaled[static_cast<std::size_t>(labels[r])];
  }
  return nll / static_cast<double>(logits.rows());
}

double fit_temperature(const Matrix& logits, std::span<const int> labels, double lo, double hi) {
  if (logits.rows() == 0) throw EmptyValidation("temperature fit needs validation rows");
  if (!(lo > 0.0 && lo < hi)) throw DomainError("temperature search range must satisfy 0 < lo < hi");
  constexpr double kTol = 1e-4;
  auto f = [&](double t) { return temperature_nll(logits, labels, t); };
  const double t = golden_section(f, lo, hi, kTol);
  const double ft = f(t);
  if (ft <= std::min(f(lo), f(hi)) + 1e-12) return t;

  // Not unimodal on [lo, hi]: scan, then refine around the best grid point.
  constexpr int kGrid = 400;
  const double step = (hi - lo) / (kGrid - 1);
  int best = 0;
  double best_f = f(lo);
  for (int i = 1; i < kGrid; ++i) {
    const double v = f(lo + step * i);
    if (v < best_f) best_f = v, best = i;
  }
  const double a = std::max(lo, lo + step * (best - 1));
  const double b = std::min(hi, lo + step * (best + 1));
  const double refined = golden_section(f, a, b, kTol);
  return f(refined) <= best_f ? refined : lo + step * best;
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw EmptyInput("quantile of an empty vector");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile must lie in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = static_cast<double>(v.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Thresholds compute_thresholds(std::span<const double> train_log_densities, std::span<const double> train_entropies,
                              double density_quantile, double entropy_quantile) {
  if (train_log_densities.empty() || train_entropies.empty()) throw EmptyInput("threshold inputs are empty");
  if (!(density_quantile > 0.0 && density_quantile < 1.0) || !(entropy_quantile > 0.0 && entropy_quantile < 1.0)) {
    throw DomainError("quantiles must lie in (0, 1)");
  }
  return {quantile(train_log_densities, density_quantile), quantile(train_entropies, entropy_quantile)};
}

UncertaintyReport disentangle(std::span<const double> probs, double log_density, const Thresholds& t) {
  UncertaintyReport r;
  r.probs.assign(probs.begin(), probs.end());
  r.softmax_entropy = entropy(probs);
  r.log_density = log_density;
  if (log_density < t.density_log_threshold) {
    r.verdict = Verdict::OoD;
  } else if (r.softmax_entropy > t.entropy_threshold) {
    r.verdict = Verdict::AmbiguousID;
  } else {
    r.verdict = Verdict::UnambiguousID;
  }
  return r;
}

std::optional<std::size_t> check_proposition1(const EnsemblePrediction& e1, const EnsemblePrediction& e2,
                                              double delta, double eps) {
  if (e1.member_probs.rows() != e2.member_probs.rows() || e1.member_probs.rows() == 0) {
    throw PreconditionViolated("ensembles must have the same, non-zero member count");
  }
  if (!(delta >= 0.0) || !(eps >= 0.0)) throw PreconditionViolated("delta and eps must be non-negative");
  const Decomposition d1 = decompose(e1);
  const Decomposition d2 = decompose(e2);
  if (!(d1.mutual_information > d2.mutual_information + delta)) {
    throw PreconditionViolated("MI(e1) does not exceed MI(e2) + delta");
  }
  if (std::abs(d1.predictive_entropy - d2.predictive_entropy) > eps) {
    throw PreconditionViolated("predictive entropies differ by more than eps");
  }
  const double margin = delta - eps;
  for (std::size_t m = 0; m < e1.member_probs.rows(); ++m) {
    if (entropy(e1.member_probs.row(m)) < entropy(e2.member_probs.row(m)) - margin) return m;
  }
  return std::nullopt;
}

void write_report_csv(std::ostream& os, std::span<const UncertaintyReport> reports) {
  os << "entropy,log_density,verdict\n";
  for (const auto& r : reports) {
    os << format_double(r.softmax_entropy) << ',' << format_double(r.log_density) << ','
       << verdict_name(r.verdict) << '\n';
  }
}

Json to_json(const Thresholds& t) {
  return {{"density_log_threshold", t.density_log_threshold}, {"entropy_threshold", t.entropy_threshold}};
}

Thresholds thresholds_from_json(const Json& j) {
  try {
    return {j.at("density_log_threshold").get<double>(), j.at("entropy_threshold").get<double>()};
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed thresholds file: ") + e.what());
  }
}

}  // namespace ddu
