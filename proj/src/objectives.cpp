#include "ddu/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "ddu/errors.hpp"
#include "ddu/io.hpp"
#include "ddu/rng.hpp"

namespace ddu {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kMinWeight = 1e-6;

struct ComponentEval {
  double log_pdf;
  Vector s;  // L^{-1}(z - mu)
  Vector t;  // L^{-T} s = Sigma^{-1}(z - mu)
};

double log_det_of(const Matrix& lower) {
  double s = 0.0;
  for (std::size_t i = 0; i < lower.rows(); ++i) s += 2.0 * std::log(lower(i, i));
  return s;
}

ComponentEval eval_component(const GmmComponent& c, std::span<const double> z, bool need_t) {
  const std::size_t d = c.mean.size();
  Vector diff(d);
  for (std::size_t k = 0; k < d; ++k) diff[k] = z[k] - c.mean[k];
  ComponentEval e;
  e.s = solve_lower(c.chol_lower, diff);
  e.log_pdf = -0.5 * (static_cast<double>(d) * kLog2Pi + log_det_of(c.chol_lower) + dot(e.s, e.s));
  if (need_t) e.t = solve_lower_t(c.chol_lower, e.s);
  return e;
}

// Accumulates sum_i sum_c g_ic d a_ic / d theta into grad (unnormalised).
void accumulate_gradient(const GmmParams& gmm, const Vector& log_w, std::span<const double> g,
                         const std::vector<ComponentEval>& evals, Vector& grad) {
  const std::size_t d = gmm.dim;
  const std::size_t per = GmmParams::parameter_count(d, 1);
  double g_sum = 0.0;
  for (double v : g) g_sum += v;
  for (std::size_t c = 0; c < gmm.num_components(); ++c) {
    const auto& comp = gmm.components[c];
    const auto& e = evals[c];
    double* out = grad.data() + c * per;
    for (std::size_t k = 0; k < d; ++k) out[k] += g[c] * e.t[k];
    std::size_t idx = d;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j, ++idx) {
        if (i == j) {
          out[idx] += g[c] * (comp.chol_lower(i, i) * e.t[i] * e.s[i] - 1.0);
        } else {
          out[idx] += g[c] * e.t[i] * e.s[j];
        }
      }
    }
    out[idx] += g[c] - std::exp(log_w[c]) * g_sum;
  }
}

template <bool Conditional>
ValueAndGradient objective_impl(const GmmParams& gmm, const Matrix& z, std::span<const int> y) {
  if (z.rows() == 0) throw EmptyInput("objective over an empty dataset");
  if (z.cols() != gmm.dim) throw ShapeMismatch("data dimension does not match the mixture");
  if constexpr (Conditional) {
    if (y.size() != z.rows()) throw ShapeMismatch("labels and rows disagree");
  }
  const std::size_t k = gmm.num_components();
  const Vector log_w = gmm.log_weights();
  ValueAndGradient out;
  out.gradient.assign(GmmParams::parameter_count(gmm.dim, k), 0.0);
  std::vector<ComponentEval> evals(k);
  Vector a(k);
  Vector g(k);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto zr = z.row(r);
    for (std::size_t c = 0; c < k; ++c) {
      evals[c] = eval_component(gmm.components[c], zr, true);
      a[c] = log_w[c] + evals[c].log_pdf;
    }
    const double lse = log_sum_exp(a);
    for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(a[c] - lse);
    if constexpr (Conditional) {
      const auto label = static_cast<std::size_t>(y[r]);
      if (y[r] < 0 || label >= k) throw ShapeMismatch("label outside the mixture's components");
      out.value += lse - a[label];
      g[label] -= 1.0;
    } else {
      out.value -= lse;
      for (double& v : g) v = -v;
    }
    accumulate_gradient(gmm, log_w, g, evals, out.gradient);
  }
  const auto n = static_cast<double>(z.rows());
  out.value /= n;
  for (double& v : out.gradient) v /= n;
  return out;
}

Vector column_std(const Matrix& z) {
  Vector mean(z.cols(), 0.0);
  Vector sd(z.cols(), 0.0);
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t k = 0; k < z.cols(); ++k) mean[k] += z(r, k);
  for (double& v : mean) v /= static_cast<double>(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t k = 0; k < z.cols(); ++k) sd[k] += (z(r, k) - mean[k]) * (z(r, k) - mean[k]);
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(std::max<std::size_t>(z.rows() - 1, 1)));
  return sd;
}

}  // namespace

Vector GmmParams::log_weights() const {
  Vector w(components.size());
  for (std::size_t c = 0; c < components.size(); ++c) w[c] = components[c].logit;
  const double lse = log_sum_exp(w);
  for (double& v : w) v -= lse;
  return w;
}

Vector GmmParams::log_joint(std::span<const double> z) const {
  if (z.size() != dim) throw ShapeMismatch("point dimension does not match the mixture");
  Vector out = log_weights();
  for (std::size_t c = 0; c < components.size(); ++c) out[c] += eval_component(components[c], z, false).log_pdf;
  return out;
}

std::size_t GmmParams::parameter_count(std::size_t dim, std::size_t k) {
  return k * (dim + dim * (dim + 1) / 2 + 1);
}

Vector GmmParams::flatten() const {
  Vector theta;
  theta.reserve(parameter_count(dim, components.size()));
  for (const auto& c : components) {
    theta.insert(theta.end(), c.mean.begin(), c.mean.end());
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j <= i; ++j) theta.push_back(i == j ? std::log(c.chol_lower(i, i)) : c.chol_lower(i, j));
    theta.push_back(c.logit);
  }
  return theta;
}

GmmParams GmmParams::unflatten(std::span<const double> theta, std::size_t dim, std::size_t k) {
  if (theta.size() != parameter_count(dim, k)) throw ShapeMismatch("parameter vector length");
  GmmParams p;
  p.dim = dim;
  std::size_t idx = 0;
  for (std::size_t c = 0; c < k; ++c) {
    GmmComponent comp;
    comp.mean.assign(theta.begin() + static_cast<std::ptrdiff_t>(idx),
                     theta.begin() + static_cast<std::ptrdiff_t>(idx + dim));
    idx += dim;
    comp.chol_lower = Matrix(dim, dim);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j <= i; ++j, ++idx) comp.chol_lower(i, j) = i == j ? std::exp(theta[idx]) : theta[idx];
    comp.logit = theta[idx++];
    p.components.push_back(std::move(comp));
  }
  return p;
}

GmmParams gmm_from_gda(const GdaModel& gda) {
  GmmParams p;
  p.dim = gda.dim;
  for (const auto& c : gda.classes) p.components.push_back({c.mean, c.cov_chol.lower, c.log_prior});
  return p;
}

double conditional_nll(const GmmParams& gmm, const Matrix& z, std::span<const int> y) {
  if (z.rows() == 0) throw EmptyInput("conditional NLL over an empty dataset");
  if (y.size() != z.rows()) throw ShapeMismatch("labels and rows disagree");
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const Vector a = gmm.log_joint(z.row(r));
    const auto label = static_cast<std::size_t>(y[r]);
    if (y[r] < 0 || label >= a.size()) throw ShapeMismatch("label outside the mixture's components");
    total += log_sum_exp(a) - a[label];
  }
  return total / static_cast<double>(z.rows());
}

double marginal_nll(const GmmParams& gmm, const Matrix& z) {
  if (z.rows() == 0) throw EmptyInput("marginal NLL over an empty dataset");
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) total -= log_sum_exp(gmm.log_joint(z.row(r)));
  return total / static_cast<double>(z.rows());
}

ValueAndGradient conditional_objective(const GmmParams& gmm, const Matrix& z, std::span<const int> y) {
  return objective_impl<true>(gmm, z, y);
}

ValueAndGradient marginal_objective(const GmmParams& gmm, const Matrix& z) {
  return objective_impl<false>(gmm, z, {});
}

FitTrace fit_conditional(const Dataset& data, const GmmParams& init, const GradientDescentConfig& cfg) {
  for (int c = 0; c < static_cast<int>(init.num_components()); ++c) {
    if (std::find(data.y.begin(), data.y.end(), c) == data.y.end()) {
      throw ClassUnderpopulated("class " + std::to_string(c) + " has no samples");
    }
  }
  const std::size_t k = init.num_components();
  FitTrace trace{init, {}};
  Vector theta = init.flatten();
  auto current = conditional_objective(trace.params, data.x, data.y);
  trace.objective.push_back(current.value);
  double lr = cfg.learning_rate;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    if (!std::isfinite(current.value)) throw Diverged("conditional objective became non-finite");
    Vector candidate = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) candidate[i] -= lr * current.gradient[i];
    GmmParams next = GmmParams::unflatten(candidate, init.dim, k);
    auto eval = conditional_objective(next, data.x, data.y);
    if (!std::isfinite(eval.value) || eval.value > current.value) {
      lr *= 0.5;
      if (lr < 1e-20) break;
      continue;
    }
    const double change = (current.value - eval.value) / std::max(std::abs(current.value), 1e-300);
    theta = std::move(candidate);
    trace.params = std::move(next);
    current = std::move(eval);
    trace.objective.push_back(current.value);
    if (change < cfg.relative_tolerance) break;
  }
  return trace;
}

GmmParams fit_joint(const Dataset& data) {
  return gmm_from_gda(gda_fit(data.x, data.y, data.num_classes));
}

FitTrace fit_marginal_em(const Dataset& data, std::size_t k, const GmmParams& init, const EmConfig& cfg) {
  const Matrix& z = data.x;
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  if (n < k * (d + 1)) throw InvalidCount("EM needs at least K (d + 1) rows");
  if (init.num_components() != k || init.dim != d) throw ShapeMismatch("EM initialisation shape");

  FitTrace trace{init, {}};
  const Vector sd = column_std(z);
  Rng rng = Rng::derive(cfg.seed, 41);
  for (auto& comp : trace.params.components) {
    for (std::size_t j = 0; j < d; ++j) comp.mean[j] += cfg.perturbation * sd[j] * rng.normal();
  }
  double nll = marginal_nll(trace.params, z);
  trace.objective.push_back(nll);

  Matrix resp(n, k);
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    // E-step.
    for (std::size_t r = 0; r < n; ++r) {
      Vector a = trace.params.log_joint(z.row(r));
      softmax_inplace(a);
      std::copy(a.begin(), a.end(), resp.row(r).begin());
    }
    // M-step.
    GmmParams next;
    next.dim = d;
    for (std::size_t c = 0; c < k; ++c) {
      double nc = 0.0;
      Vector mu(d, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        nc += resp(r, c);
        for (std::size_t j = 0; j < d; ++j) mu[j] += resp(r, c) * z(r, j);
      }
      if (nc / static_cast<double>(n) < kMinWeight) {
        throw DegenerateComponent("component " + std::to_string(c) + " weight fell below 1e-6");
      }
      for (double& v : mu) v /= nc;
      Matrix cov(d, d);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) {
          const double di = z(r, i) - mu[i];
          for (std::size_t j = 0; j <= i; ++j) cov(i, j) += resp(r, c) * di * (z(r, j) - mu[j]);
        }
      }
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j <= i; ++j) cov(j, i) = cov(i, j) = cov(i, j) / nc;
      CholeskyFactor chol;
      double jitter = 0.0;
      for (int rung = 0;; ++rung) {
        Matrix jittered = cov;
        for (std::size_t i = 0; i < d; ++i) jittered(i, i) += jitter;
        try {
          chol = cholesky(jittered);
          break;
        } catch (const NotPositiveDefinite&) {
          if (rung > 20) throw;
          jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
        }
      }
      next.components.push_back({std::move(mu), std::move(chol.lower), std::log(nc / static_cast<double>(n))});
    }
    const double next_nll = marginal_nll(next, z);
    if (!std::isfinite(next_nll)) throw Diverged("EM produced a non-finite likelihood");
    if (next_nll > nll + 1e-10) break;
    const double improvement = (nll - next_nll) / std::max(std::abs(nll), 1e-300);
    trace.params = std::move(next);
    nll = next_nll;
    trace.objective.push_back(nll);
    if (improvement < cfg.relative_tolerance) break;
  }
  return trace;
}

ObjectiveScores score(const GmmParams& gmm, const Dataset& data, bool supervised) {
  if (data.size() == 0) throw EmptyInput("scoring an empty dataset");
  if (data.dim() != gmm.dim) throw ShapeMismatch("data dimension does not match the mixture");
  ObjectiveScores s;
  s.marginal_nll = marginal_nll(gmm, data.x);
  if (supervised) {
    s.cond_nll = conditional_nll(gmm, data.x, data.y);
    s.joint_nll = *s.cond_nll + s.marginal_nll;
  }
  return s;
}

void write_score_table_csv(std::ostream& os, std::span<const ScoreRow> rows) {
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("n/a"); };
  os << "objective,H(Y|Z),H(Y,Z),H(Z)\n";
  for (const auto& r : rows) {
    os << r.objective << ',' << cell(r.scores.cond_nll) << ',' << cell(r.scores.joint_nll) << ','
       << format_double(r.scores.marginal_nll) << '\n';
  }
}

}  // namespace ddu
