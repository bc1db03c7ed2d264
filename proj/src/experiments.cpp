#include "ddu/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "ddu/dirichlet.hpp"
#include "ddu/errors.hpp"
#include "ddu/gda.hpp"
#include "ddu/metrics.hpp"
#include "ddu/uncertainty.hpp"

#ifndef DDU_VERSION
#define DDU_VERSION "0.1.0"
#endif

namespace ddu {

namespace {

// Per-seed data streams, kept apart from the network's own seed use.
constexpr std::uint64_t kTrainData = 101;
constexpr std::uint64_t kTestData = 102;
constexpr std::uint64_t kOodData = 103;
constexpr std::uint64_t kAmbiguousData = 104;
constexpr std::uint64_t kAlphaDraws = 105;
constexpr std::uint64_t kMcDraws = 106;

std::size_t majority_needed(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-12));
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

NetConfig net_or(const Json& j, const char* key, const NetConfig& fallback) {
  return j.contains(key) ? net_config_from_json(j.at(key)) : fallback;
}

Json checks_json(const std::vector<CheckResult>& checks) {
  Json out = Json::array();
  for (const auto& c : checks) out.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string_view version_string() { return DDU_VERSION; }

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

bool ExperimentOutcome::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = base + i;
  return out;
}

// --- two moons -----------------------------------------------------------

TwoMoonsSettings TwoMoonsSettings::from_json(const Json& j) {
  TwoMoonsSettings s;
  s.n_train = j.value("n_train", s.n_train);
  s.n_test = j.value("n_test", s.n_test);
  s.n_ood = j.value("n_ood", s.n_ood);
  s.noise = j.value("noise", s.noise);
  s.ood_half_width = j.value("ood_half_width", s.ood_half_width);
  s.ood_min_dist = j.value("ood_min_dist", s.ood_min_dist);
  s.grid = j.value("grid", s.grid);
  s.grid_half_width = j.value("grid_half_width", s.grid_half_width);
  s.ddu = net_or(j, "ddu_net", s.ddu);
  s.fc = net_or(j, "fc_net", s.fc);
  return s;
}

Json TwoMoonsSettings::to_json() const {
  return {{"n_train", n_train},   {"n_test", n_test},       {"n_ood", n_ood},
          {"noise", noise},       {"ood_half_width", ood_half_width}, {"ood_min_dist", ood_min_dist},
          {"grid", grid},         {"grid_half_width", grid_half_width}, {"ddu_net", ddu::to_json(ddu)},
          {"fc_net", ddu::to_json(fc)}};
}

namespace {

MoonsModelScore score_moons_model(const NetModel& model, const Dataset& test,
                                  const Dataset& ood, const GdaModel& gda) {
  const BatchForward fb = forward_batch(model, test.x);
  std::vector<int> pred(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) pred[i] = fb.probs(i, 0) >= fb.probs(i, 1) ? 0 : 1;
  MoonsModelScore s;
  s.accuracy = accuracy(pred, test.y);
  const Vector in = log_density_rows(gda, fb.features);
  const Vector out = log_density_rows(gda, extract_features(model, ood.x));
  s.auroc = auroc(in, out);  // higher density = more in-distribution
  return s;
}

Matrix grid_values(const NetModel& model, const GdaModel& gda, std::size_t n, double half) {
  Matrix pts(n * n, 2);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double step = n > 1 ? 2.0 * half / static_cast<double>(n - 1) : 0.0;
      pts(r * n + c, 0) = -half + step * static_cast<double>(c);
      pts(r * n + c, 1) = -half + step * static_cast<double>(r);
    }
  }
  const BatchForward fb = forward_batch(model, pts);
  const Vector ld = log_density_rows(gda, fb.features);
  Matrix out(n * n, 4);
  for (std::size_t i = 0; i < n * n; ++i) {
    out(i, 0) = pts(i, 0);
    out(i, 1) = pts(i, 1);
    out(i, 2) = entropy(fb.probs.row(i));
    out(i, 3) = ld[i];
  }
  return out;
}

}  // namespace

TwoMoonsSeedResult two_moons_seed(const TwoMoonsSettings& s, std::uint64_t seed, bool with_grid) {
  const Dataset train_set = two_moons(s.n_train, s.noise, mix_seed(seed, kTrainData));
  Dataset test = two_moons(s.n_test, s.noise, mix_seed(seed, kTestData));
  test.set_split(Split::Test);
  const Vector lo{-s.ood_half_width, -s.ood_half_width};
  const Vector hi{s.ood_half_width, s.ood_half_width};
  const Dataset ood = uniform_ood_box(s.n_ood, lo, hi, train_set, s.ood_min_dist, mix_seed(seed, kOodData));

  TwoMoonsSeedResult r;
  r.seed = seed;
  auto run_one = [&](NetConfig cfg, MoonsModelScore& score, Matrix& grid) {
    cfg.seed = seed;
    const NetModel model = train(train_set, cfg);
    const GdaModel gda = gda_fit(extract_features(model, train_set.x), train_set.y, train_set.num_classes);
    score = score_moons_model(model, test, ood, gda);
    if (with_grid) grid = grid_values(model, gda, s.grid, s.grid_half_width);
  };
  run_one(s.ddu, r.ddu, r.ddu_grid);
  run_one(s.fc, r.fc, r.fc_grid);
  return r;
}

std::vector<CheckResult> two_moons_checks(const std::vector<TwoMoonsSeedResult>& runs) {
  std::vector<CheckResult> out;
  bool floors = !runs.empty();
  std::size_t fc_lower = 0;
  std::ostringstream detail;
  for (const auto& r : runs) {
    floors = floors && r.ddu.accuracy >= 0.95 && r.ddu.auroc >= 0.95;
    fc_lower += r.fc.auroc < r.ddu.auroc ? 1 : 0;
    detail << "seed " << r.seed << ": acc " << format_double(r.ddu.accuracy) << " auroc "
           << format_double(r.ddu.auroc) << " fc_auroc " << format_double(r.fc.auroc) << "; ";
  }
  out.push_back({"sn_model_accuracy_and_auroc_at_least_0.95", floors, detail.str()});
  out.push_back({"fc_auroc_lower_on_80pct_of_seeds", fc_lower >= majority_needed(runs.size(), 0.8) && !runs.empty(),
                 std::to_string(fc_lower) + "/" + std::to_string(runs.size())});
  return out;
}

// --- 1D ensemble ----------------------------------------------------------

NetConfig toy1d_default_net() {
  NetConfig c;
  c.input_dim = 1;
  c.width = 32;
  c.num_residual_blocks = 3;
  c.num_classes = 2;
  c.use_residual = true;
  c.sn_coefficient.reset();
  c.epochs = 100;
  c.batch_size = 64;
  c.optimizer.lr = 3e-3;
  return c;
}

Toy1dSettings::Toy1dSettings() { net = toy1d_default_net(); }

Toy1dSettings Toy1dSettings::from_json(const Json& j) {
  Toy1dSettings s;
  s.members = j.value("members", s.members);
  s.grid = j.value("grid", s.grid);
  s.grid_half_width = j.value("grid_half_width", s.grid_half_width);
  s.net = net_or(j, "net", s.net);
  if (s.members < 1) throw ConfigError("members must be at least 1");
  if (s.grid < 2) throw ConfigError("grid must have at least 2 points");
  return s;
}

Json Toy1dSettings::to_json() const {
  return {{"members", members}, {"grid", grid}, {"grid_half_width", grid_half_width}, {"net", ddu::to_json(net)}};
}

Toy1dSeedResult toy1d_seed(const Toy1dSettings& s, std::uint64_t seed) {
  const Dataset data = toy_1d(mix_seed(seed, kTrainData));
  Toy1dSeedResult r;
  r.seed = seed;
  Matrix grid(s.grid, 1);
  r.grid.resize(s.grid);
  for (std::size_t i = 0; i < s.grid; ++i) {
    r.grid[i] = -s.grid_half_width + 2.0 * s.grid_half_width * static_cast<double>(i) / static_cast<double>(s.grid - 1);
    grid(i, 0) = r.grid[i];
  }
  for (std::size_t m = 0; m < s.members; ++m) {
    NetConfig cfg = s.net;
    cfg.seed = mix_seed(seed, 1000 + m);
    r.member_probs.push_back(forward_batch(train(data, cfg), grid).probs);
  }
  const std::size_t k = r.member_probs[0].cols();
  r.pe.resize(s.grid);
  r.mi.resize(s.grid);
  r.expected_entropy.resize(s.grid);
  EnsemblePrediction e{Matrix(s.members, k)};
  for (std::size_t i = 0; i < s.grid; ++i) {
    for (std::size_t m = 0; m < s.members; ++m) {
      std::copy(r.member_probs[m].row(i).begin(), r.member_probs[m].row(i).end(), e.member_probs.row(m).begin());
    }
    const auto d = decompose(e);
    r.pe[i] = d.predictive_entropy;
    r.mi[i] = d.mutual_information;
    r.expected_entropy[i] = d.expected_entropy;
  }
  return r;
}

std::vector<CheckResult> toy1d_checks(const std::vector<Toy1dSeedResult>& runs) {
  double worst_identity = 0.0;
  std::size_t mi_ok = 0;
  std::size_t pe_ok = 0;
  std::ostringstream detail;
  for (const auto& r : runs) {
    Vector mi_gap;
    Vector mi_band;
    Vector pe_band;
    Vector pe_cluster;
    for (std::size_t i = 0; i < r.grid.size(); ++i) {
      worst_identity = std::max(worst_identity, std::abs(r.pe[i] - r.mi[i] - r.expected_entropy[i]));
      const double x = r.grid[i];
      const double ax = std::abs(x);
      if (ax < 2.0) mi_gap.push_back(r.mi[i]);
      if (ax >= 3.5 && ax <= 4.5) {
        mi_band.push_back(r.mi[i]);
        pe_band.push_back(r.pe[i]);
      }
      if (std::abs(ax - 3.0) <= 0.3 || std::abs(ax - 5.0) <= 0.3) pe_cluster.push_back(r.pe[i]);
    }
    const bool mi_holds = mean_of(mi_gap) > mean_of(mi_band);
    const bool pe_holds = mean_of(pe_band) > mean_of(pe_cluster);
    mi_ok += mi_holds ? 1 : 0;
    pe_ok += pe_holds ? 1 : 0;
    detail << "seed " << r.seed << ": MI gap/band " << format_double(mean_of(mi_gap)) << "/"
           << format_double(mean_of(mi_band)) << " PE band/cluster " << format_double(mean_of(pe_band)) << "/"
           << format_double(mean_of(pe_cluster)) << "; ";
  }
  const std::size_t need = majority_needed(runs.size(), 0.5 + 1e-9);
  return {{"pe_equals_mi_plus_expected_entropy", worst_identity <= 1e-12, "max deviation " + format_double(worst_identity)},
          {"mi_higher_in_gap_than_band", !runs.empty() && mi_ok >= need,
           std::to_string(mi_ok) + "/" + std::to_string(runs.size()) + " seeds; " + detail.str()},
          {"pe_higher_in_band_than_clusters", !runs.empty() && pe_ok >= need,
           std::to_string(pe_ok) + "/" + std::to_string(runs.size()) + " seeds"}};
}

// --- disentangling histograms --------------------------------------------

HistogramSettings HistogramSettings::from_json(const Json& j) {
  HistogramSettings s;
  s.n_clean = j.value("n_clean", s.n_clean);
  s.n_ambiguous = j.value("n_ambiguous", s.n_ambiguous);
  s.n_eval = j.value("n_eval", s.n_eval);
  s.ood_half_width = j.value("ood_half_width", s.ood_half_width);
  s.ood_min_dist = j.value("ood_min_dist", s.ood_min_dist);
  s.net = net_or(j, "net", s.net);
  return s;
}

Json HistogramSettings::to_json() const {
  return {{"n_clean", n_clean}, {"n_ambiguous", n_ambiguous}, {"n_eval", n_eval},
          {"ood_half_width", ood_half_width}, {"ood_min_dist", ood_min_dist}, {"net", ddu::to_json(net)}};
}

std::string_view subset_name(Subset s) {
  switch (s) {
    case Subset::CleanId: return "clean-iD";
    case Subset::AmbiguousId: return "ambiguous-iD";
    case Subset::Ood: return "OoD";
  }
  return "unknown";
}

std::vector<HistogramSample> disentangle_histograms(const HistogramSettings& s, std::uint64_t seed) {
  const Dataset train_set = ambiguous_pool(s.n_clean, s.n_ambiguous, mix_seed(seed, kTrainData));
  const Dataset clean = two_moons(s.n_eval, 0.1, mix_seed(seed, kTestData));
  const Dataset ambiguous = ambiguous_pool(0, s.n_eval, mix_seed(seed, kAmbiguousData));
  const Vector lo{-s.ood_half_width, -s.ood_half_width};
  const Vector hi{s.ood_half_width, s.ood_half_width};
  const Dataset ood = uniform_ood_box(s.n_eval, lo, hi, train_set, s.ood_min_dist, mix_seed(seed, kOodData));

  NetConfig cfg = s.net;
  cfg.seed = seed;
  const NetModel model = train(train_set, cfg);
  const GdaModel gda = gda_fit(extract_features(model, train_set.x), train_set.y, train_set.num_classes);

  std::vector<HistogramSample> out;
  auto add = [&](const Dataset& d, Subset subset) {
    const BatchForward fb = forward_batch(model, d.x);
    const Vector ld = log_density_rows(gda, fb.features);
    for (std::size_t i = 0; i < d.size(); ++i) out.push_back({entropy(fb.probs.row(i)), ld[i], subset});
  };
  add(clean, Subset::CleanId);
  add(ambiguous, Subset::AmbiguousId);
  add(ood, Subset::Ood);
  return out;
}

std::vector<CheckResult> histogram_checks(const std::vector<HistogramSample>& samples) {
  double sums_h[3] = {0, 0, 0};
  double sums_ld[3] = {0, 0, 0};
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : samples) {
    const auto k = static_cast<std::size_t>(s.subset);
    sums_h[k] += s.entropy;
    sums_ld[k] += s.log_density;
    ++counts[k];
  }
  auto mean = [&](const double* sums, Subset s) {
    const auto k = static_cast<std::size_t>(s);
    return counts[k] == 0 ? std::nan("") : sums[k] / static_cast<double>(counts[k]);
  };
  const double ood_ld = mean(sums_ld, Subset::Ood);
  const double clean_ld = mean(sums_ld, Subset::CleanId);
  const double amb_h = mean(sums_h, Subset::AmbiguousId);
  const double clean_h = mean(sums_h, Subset::CleanId);
  return {{"ood_density_below_clean", ood_ld < clean_ld,
           "OoD " + format_double(ood_ld) + " vs clean " + format_double(clean_ld)},
          {"ambiguous_entropy_above_clean", amb_h > clean_h,
           "ambiguous " + format_double(amb_h) + " vs clean " + format_double(clean_h)}};
}

// --- dirichlet analysis -----------------------------------------------------

DirichletSettings DirichletSettings::from_json(const Json& j) {
  DirichletSettings s;
  s.num_alphas = j.value("num_alphas", s.num_alphas);
  s.mc_samples = j.value("mc_samples", s.mc_samples);
  s.alpha_lo = j.value("alpha_lo", s.alpha_lo);
  s.alpha_hi = j.value("alpha_hi", s.alpha_hi);
  if (j.contains("class_counts")) s.class_counts = j.at("class_counts").get<std::vector<std::size_t>>();
  s.max_se = j.value("max_se", s.max_se);
  s.ensemble_study = j.value("ensemble_study", s.ensemble_study);
  if (j.contains("toy1d")) {
    Toy1dSettings t = Toy1dSettings::from_json(j.at("toy1d"));
    s.toy1d = std::move(t);
  }
  if (s.class_counts.empty()) throw ConfigError("class_counts must not be empty");
  for (auto k : s.class_counts) {
    if (k < 2) throw ConfigError("class_counts entries must be at least 2");
  }
  if (!(s.alpha_lo > 0.0 && s.alpha_hi > s.alpha_lo)) throw ConfigError("need 0 < alpha_lo < alpha_hi");
  if (s.mc_samples < 2) throw ConfigError("mc_samples must be at least 2");
  return s;
}

Json DirichletSettings::to_json() const {
  return {{"num_alphas", num_alphas}, {"mc_samples", mc_samples}, {"alpha_lo", alpha_lo},
          {"alpha_hi", alpha_hi},     {"class_counts", class_counts}, {"max_se", max_se},
          {"ensemble_study", ensemble_study}, {"toy1d", toy1d.to_json()}};
}

double MonteCarloCheck::z_score() const {
  if (mc_se == 0.0) return analytic == mc_mean ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(analytic - mc_mean) / mc_se;
}

namespace {

struct Moments {
  double mean = 0.0;
  double se = 0.0;
};

Moments moments_of(std::span<const double> v) {
  const auto n = static_cast<double>(v.size());
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace

DirichletRow dirichlet_mc_row(const DirichletParams& d, std::size_t n, std::uint64_t seed) {
  if (d.size() < 2) throw DomainError("Monte-Carlo checks need at least two classes");
  Rng rng = Rng::derive(seed, kMcDraws);
  Vector log_p0(n);
  Vector log_p1(n);
  Vector h(n);
  Vector mixed(n);
  Vector p(d.size());
  for (std::size_t s = 0; s < n; ++s) {
    double total = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) total += (p[k] = rng.gamma(d[k]));
    double ent = 0.0;
    for (double& v : p) {
      v /= total;
      if (v > 0.0) ent -= v * std::log(v);
    }
    log_p0[s] = std::log(p[0]);
    log_p1[s] = std::log(p[1]);
    h[s] = ent;
    mixed[s] = p[0] * p[1] * p[1] * log_p0[s];
  }
  const Moments m0 = moments_of(log_p0);
  const Moments m1 = moments_of(log_p1);
  const Moments mh = moments_of(h);
  const Moments mx = moments_of(mixed);
  Vector var0(n);
  Vector cov01(n);
  Vector varh(n);
  for (std::size_t s = 0; s < n; ++s) {
    var0[s] = (log_p0[s] - m0.mean) * (log_p0[s] - m0.mean);
    cov01[s] = (log_p0[s] - m0.mean) * (log_p1[s] - m1.mean);
    varh[s] = (h[s] - mh.mean) * (h[s] - mh.mean);
  }
  const Moments mv0 = moments_of(var0);
  const Moments mc01 = moments_of(cov01);
  const Moments mvh = moments_of(varh);
  const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);

  DirichletRow row;
  row.alpha = d.alpha();
  row.expected_entropy = expected_entropy(d);
  row.entropy_variance = entropy_variance(d);
  row.mc_mean = mh.mean;
  row.mc_var = mvh.mean * unbias;
  row.mc_se = mh.se;
  row.checks = {{"expected_log_p", expected_log_p(d, 0), m0.mean, m0.se},
                {"cov_log_p_diag", cov_log_p(d, 0, 0), mv0.mean * unbias, mv0.se * unbias},
                {"cov_log_p_offdiag", cov_log_p(d, 0, 1), mc01.mean * unbias, mc01.se * unbias},
                {"moment_pn_pm_logp", moment_pn_pm_logp(d, 0, 1, 1, 2), mx.mean, mx.se},
                {"expected_entropy", row.expected_entropy, mh.mean, mh.se},
                {"entropy_variance", row.entropy_variance, row.mc_var, mvh.se * unbias}};
  return row;
}

ViolationStudy dirichlet_violation_study(const Toy1dSeedResult& ensemble) {
  ViolationStudy out;
  const std::size_t members = ensemble.member_probs.size();
  if (members < 2) return out;
  const std::size_t k = ensemble.member_probs[0].cols();
  for (std::size_t i = 0; i < ensemble.grid.size(); ++i) {
    Vector mean_p(k, 0.0);
    Vector hs(members);
    for (std::size_t m = 0; m < members; ++m) {
      const auto row = ensemble.member_probs[m].row(i);
      hs[m] = entropy(row);
      for (std::size_t c = 0; c < k; ++c) mean_p[c] += row[c] / static_cast<double>(members);
    }
    const double mi = ensemble.mi[i];
    std::optional<DirichletParams> fitted;
    try {
      if (mi > 0.0) fitted = fit_from_pe_mi(mean_p, mi);
    } catch (const InfeasibleMI&) {
    } catch (const InvalidDistribution&) {
    }
    if (!fitted) continue;
    const double hm = mean_of(hs);
    double ss = 0.0;
    for (double v : hs) ss += (v - hm) * (v - hm);
    const double empirical = ss / static_cast<double>(members - 1);
    const double se = empirical * std::sqrt(2.0 / static_cast<double>(members - 1));
    ++out.points;
    if (entropy_variance(*fitted) > empirical + 3.0 * se) ++out.violations;
  }
  return out;
}

// --- objective mismatch -----------------------------------------------------

ObjectiveSettings ObjectiveSettings::from_json(const Json& j) {
  ObjectiveSettings s;
  s.n = j.value("n", s.n);
  s.label_noise = j.value("label_noise", s.label_noise);
  s.star = j.value("star", s.star);
  s.gd.learning_rate = j.value("learning_rate", s.gd.learning_rate);
  s.gd.max_iterations = j.value("max_iterations", s.gd.max_iterations);
  s.gd.relative_tolerance = j.value("relative_tolerance", s.gd.relative_tolerance);
  s.em.relative_tolerance = j.value("em_relative_tolerance", s.em.relative_tolerance);
  s.em.perturbation = j.value("em_perturbation", s.em.perturbation);
  if (s.star.size() != 2) throw ConfigError("star must be a 2D point");
  return s;
}

Json ObjectiveSettings::to_json() const {
  return {{"n", n},
          {"label_noise", label_noise},
          {"star", star},
          {"learning_rate", gd.learning_rate},
          {"max_iterations", gd.max_iterations},
          {"relative_tolerance", gd.relative_tolerance},
          {"em_relative_tolerance", em.relative_tolerance},
          {"em_perturbation", em.perturbation}};
}

ObjectiveRun objective_mismatch_run(const ObjectiveSettings& s, std::uint64_t seed) {
  const Dataset data = three_gaussians_label_noise(s.n, s.label_noise, mix_seed(seed, kTrainData));
  const GmmParams joint = fit_joint(data);
  const FitTrace cond = fit_conditional(data, joint, s.gd);
  EmConfig em_cfg = s.em;
  em_cfg.seed = seed;
  const FitTrace em = fit_marginal_em(data, static_cast<std::size_t>(data.num_classes), joint, em_cfg);

  ObjectiveRun r;
  r.seed = seed;
  r.conditional = score(cond.params, data, true);
  r.joint = score(joint, data, true);
  r.marginal = score(em.params, data, false);
  r.em_trace = em.objective;
  auto star_entropy = [&](const GmmParams& g) {
    Vector a = g.log_joint(s.star);
    softmax_inplace(a);
    return entropy(a);
  };
  r.star_entropy_conditional = star_entropy(cond.params);
  r.star_entropy_joint = star_entropy(joint);
  return r;
}

std::vector<CheckResult> objective_table_checks(const ObjectiveRun& r) {
  constexpr double tol = 1e-6;
  const bool cond_min = *r.conditional.cond_nll <= *r.joint.cond_nll + tol;
  const bool joint_min = *r.joint.joint_nll <= *r.conditional.joint_nll + tol;
  const bool marg_min =
      r.marginal.marginal_nll <= std::min(r.joint.marginal_nll, r.conditional.marginal_nll) + tol;
  const bool ordering = r.marginal.marginal_nll <= r.joint.marginal_nll + tol &&
                        r.joint.marginal_nll <= r.conditional.marginal_nll + tol;
  bool monotone = true;
  for (std::size_t i = 1; i < r.em_trace.size(); ++i) {
    monotone = monotone && r.em_trace[i] <= r.em_trace[i - 1] + 1e-10;
  }
  return {{"diagonal_dominance", cond_min && joint_min && marg_min,
           fmt("H(Y|Z) %.6f vs %.6f; H(Y,Z) %.6f", *r.conditional.cond_nll, *r.joint.cond_nll, *r.joint.joint_nll) +
               fmt(" vs %.6f; H(Z) %.6f", *r.conditional.joint_nll, r.marginal.marginal_nll)},
          {"marginal_ordering_em_gda_conditional", ordering,
           fmt("%.6f <= %.6f <= %.6f", r.marginal.marginal_nll, r.joint.marginal_nll, r.conditional.marginal_nll)},
          {"em_monotone", monotone, std::to_string(r.em_trace.size()) + " EM iterates"}};
}

CheckResult star_point_check(const std::vector<ObjectiveRun>& runs) {
  Vector cond;
  Vector joint;
  for (const auto& r : runs) {
    cond.push_back(r.star_entropy_conditional);
    joint.push_back(r.star_entropy_joint);
  }
  const double mc = mean_of(cond);
  const double mj = mean_of(joint);
  return {"star_point_entropy", !runs.empty() && mc > 0.5 && mj < 0.1,
          fmt("seed-mean entropy conditional %.4f, joint %.4f", mc, mj)};
}

// --- active learning --------------------------------------------------------

AlConfig active_default_al() {
  AlConfig c;
  c.net = NetConfig::two_moons_default();
  c.net.width = 32;
  c.net.num_residual_blocks = 3;
  c.net.epochs = 100;
  c.net.batch_size = 16;
  c.net.optimizer.lr = 3e-3;
  return c;
}

ActiveSettings ActiveSettings::from_json(const Json& j) {
  ActiveSettings s;
  s.n_clean = j.value("n_clean", s.n_clean);
  s.n_ambiguous = j.value("n_ambiguous", s.n_ambiguous);
  s.n_test = j.value("n_test", s.n_test);
  s.plateau_steps = j.value("plateau_steps", s.plateau_steps);
  s.al.initial_size = j.value("initial_size", s.al.initial_size);
  s.al.acquisition_size = j.value("acquisition_size", s.al.acquisition_size);
  s.al.budget = j.value("budget", s.al.budget);
  s.al.net = net_or(j, "net", s.al.net);
  s.growing_fractions = j.value("growing_fractions", s.growing_fractions);
  s.growing_clean = j.value("growing_clean", s.growing_clean);
  s.growing_ambiguous = j.value("growing_ambiguous", s.growing_ambiguous);
  s.growing_net = net_or(j, "growing_net", s.growing_net);
  if (s.plateau_steps < 1) throw ConfigError("plateau_steps must be at least 1");
  s.al.validate();
  return s;
}

Json ActiveSettings::to_json() const {
  return {{"n_clean", n_clean},
          {"n_ambiguous", n_ambiguous},
          {"n_test", n_test},
          {"plateau_steps", plateau_steps},
          {"initial_size", al.initial_size},
          {"acquisition_size", al.acquisition_size},
          {"budget", al.budget},
          {"net", ddu::to_json(al.net)},
          {"growing_fractions", growing_fractions},
          {"growing_clean", growing_clean},
          {"growing_ambiguous", growing_ambiguous},
          {"growing_net", ddu::to_json(growing_net)}};
}

bool ActiveComparison::fewer_labels() const {
  return density_labels && (!softmax_labels || *density_labels < *softmax_labels);
}

bool ActiveComparison::lower_ambiguous_fraction() const {
  return neg_log_density.ambiguous_fraction() < softmax_entropy.ambiguous_fraction();
}

ActiveComparison active_comparison_seed(const ActiveSettings& s, std::uint64_t seed) {
  const Dataset pool = ambiguous_pool(s.n_clean, s.n_ambiguous, mix_seed(seed, kTrainData));
  Dataset test = two_moons(s.n_test, 0.1, mix_seed(seed, kTestData));
  test.set_split(Split::Test);
  AlConfig cfg = s.al;
  cfg.seed = seed;
  ActiveComparison r;
  r.seed = seed;
  cfg.acquisition = Acquisition::SoftmaxEntropy;
  r.softmax_entropy = run_active_learning(pool, test, cfg);
  cfg.acquisition = Acquisition::NegLogDensity;
  r.neg_log_density = run_active_learning(pool, test, cfg);

  const auto& steps = r.softmax_entropy.steps;
  const std::size_t tail = std::min(s.plateau_steps, steps.size());
  for (std::size_t i = steps.size() - tail; i < steps.size(); ++i) r.target_accuracy += steps[i].accuracy;
  r.target_accuracy /= static_cast<double>(tail);
  r.softmax_labels = r.softmax_entropy.labels_to_reach(r.target_accuracy);
  r.density_labels = r.neg_log_density.labels_to_reach(r.target_accuracy);
  return r;
}

std::vector<CheckResult> active_checks(const std::vector<ActiveComparison>& runs) {
  std::size_t fewer = 0;
  std::size_t cleaner = 0;
  std::ostringstream detail;
  for (const auto& r : runs) {
    fewer += r.fewer_labels() ? 1 : 0;
    cleaner += r.lower_ambiguous_fraction() ? 1 : 0;
    detail << "seed " << r.seed << ": target " << format_double(r.target_accuracy) << " labels SE/NLD "
           << (r.softmax_labels ? std::to_string(*r.softmax_labels) : "never") << "/"
           << (r.density_labels ? std::to_string(*r.density_labels) : "never") << " ambiguous SE/NLD "
           << format_double(r.softmax_entropy.ambiguous_fraction()) << "/"
           << format_double(r.neg_log_density.ambiguous_fraction()) << "; ";
  }
  const std::size_t need = majority_needed(runs.size(), 0.8);
  const std::string of = "/" + std::to_string(runs.size()) + " seeds; ";
  return {{"density_acquires_fewer_ambiguous", !runs.empty() && cleaner >= need,
           std::to_string(cleaner) + of + detail.str()},
          {"density_reaches_target_with_fewer_labels", !runs.empty() && fewer >= need, std::to_string(fewer) + of}};
}

std::vector<GrowingDataPoint> growing_data_seed(const ActiveSettings& s, std::uint64_t seed) {
  const Dataset train_set = ambiguous_pool(s.growing_clean, s.growing_ambiguous, mix_seed(seed, kTrainData));
  const Dataset test = ambiguous_pool(s.n_test / 2, s.n_test - s.n_test / 2, mix_seed(seed, kTestData));
  NetConfig net = s.growing_net;
  net.seed = seed;
  return growing_data_check(train_set, test, net, s.growing_fractions, seed);
}

CheckResult growing_data_majority(const std::vector<std::vector<GrowingDataPoint>>& runs) {
  std::size_t holds = 0;
  std::ostringstream detail;
  for (const auto& r : runs) {
    const bool ok = growing_data_holds(r);
    holds += ok ? 1 : 0;
    detail << (ok ? "ok" : "no") << " [";
    for (const auto& p : r) {
      detail << p.train_size << ": ld " << format_double(p.mean_log_density) << " H " << format_double(p.mean_entropy)
             << " ";
    }
    detail << "]; ";
  }
  return {"growing_data_density_up_entropy_flat", !runs.empty() && 2 * holds > runs.size(),
          std::to_string(holds) + "/" + std::to_string(runs.size()) + " seeds; " + detail.str()};
}

// --- dispatch ----------------------------------------------------------------

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"two_moons",       "toy1d",     "histograms",
                                              "active_learning", "dirichlet", "objective_mismatch"};
  return names;
}

namespace {

ExperimentOutcome exp_two_moons(const Json& cfg, std::uint64_t seed, std::size_t n_seeds, std::size_t jobs,
                                const std::filesystem::path& dir, Json& effective) {
  const auto s = TwoMoonsSettings::from_json(cfg);
  effective.update(s.to_json());
  const auto seeds = seed_list(seed, n_seeds);
  std::vector<TwoMoonsSeedResult> runs(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { runs[i] = two_moons_seed(s, seeds[i], i == 0); });

  ExperimentOutcome out;
  std::string grid = "x0,x1,model,entropy,log_density\n";
  for (const auto& [name, m] : {std::pair<const char*, const Matrix*>{"resnet_sn", &runs[0].ddu_grid},
                                std::pair<const char*, const Matrix*>{"fc_net", &runs[0].fc_grid}}) {
    for (std::size_t r = 0; r < m->rows(); ++r) {
      grid += format_double((*m)(r, 0)) + ',' + format_double((*m)(r, 1)) + ',' + name + ',' +
              format_double((*m)(r, 2)) + ',' + format_double((*m)(r, 3)) + '\n';
    }
  }
  write_text_file(dir / "grid.csv", grid);
  std::string summary = "seed,model,accuracy,auroc\n";
  for (const auto& r : runs) {
    summary += std::to_string(r.seed) + ",resnet_sn," + format_double(r.ddu.accuracy) + ',' + format_double(r.ddu.auroc) + '\n';
    summary += std::to_string(r.seed) + ",fc_net," + format_double(r.fc.accuracy) + ',' + format_double(r.fc.auroc) + '\n';
  }
  write_text_file(dir / "auroc.csv", summary);
  out.outputs = {"grid.csv", "auroc.csv"};
  out.checks = two_moons_checks(runs);
  return out;
}

ExperimentOutcome exp_toy1d(const Json& cfg, std::uint64_t seed, std::size_t n_seeds, std::size_t jobs,
                            const std::filesystem::path& dir, Json& effective) {
  const auto s = Toy1dSettings::from_json(cfg);
  effective.update(s.to_json());
  const auto seeds = seed_list(seed, n_seeds);
  std::vector<Toy1dSeedResult> runs(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { runs[i] = toy1d_seed(s, seeds[i]); });

  std::string csv = "seed,x";
  for (std::size_t m = 0; m < s.members; ++m) csv += ",p1_m" + std::to_string(m);
  for (std::size_t m = 0; m < s.members; ++m) csv += ",h_m" + std::to_string(m);
  csv += ",pe,mi,expected_entropy\n";
  for (const auto& r : runs) {
    for (std::size_t i = 0; i < r.grid.size(); ++i) {
      csv += std::to_string(r.seed) + ',' + format_double(r.grid[i]);
      for (const auto& p : r.member_probs) csv += ',' + format_double(p(i, 1));
      for (const auto& p : r.member_probs) csv += ',' + format_double(entropy(p.row(i)));
      csv += ',' + format_double(r.pe[i]) + ',' + format_double(r.mi[i]) + ',' + format_double(r.expected_entropy[i]) + '\n';
    }
  }
  write_text_file(dir / "ensemble.csv", csv);
  ExperimentOutcome out;
  out.outputs = {"ensemble.csv"};
  out.checks = toy1d_checks(runs);
  return out;
}

ExperimentOutcome exp_histograms(const Json& cfg, std::uint64_t seed, const std::filesystem::path& dir,
                                 Json& effective) {
  const auto s = HistogramSettings::from_json(cfg);
  effective.update(s.to_json());
  const auto samples = disentangle_histograms(s, seed);
  std::string csv = "entropy,log_density,subset\n";
  for (const auto& x : samples) {
    csv += format_double(x.entropy) + ',' + format_double(x.log_density) + ',' + std::string(subset_name(x.subset)) + '\n';
  }
  write_text_file(dir / "histograms.csv", csv);
  ExperimentOutcome out;
  out.outputs = {"histograms.csv"};
  out.checks = histogram_checks(samples);
  return out;
}

ExperimentOutcome exp_active(const Json& cfg, std::uint64_t seed, std::size_t n_seeds, std::size_t jobs,
                             const std::filesystem::path& dir, Json& effective) {
  const auto s = ActiveSettings::from_json(cfg);
  effective.update(s.to_json());
  const auto seeds = seed_list(seed, n_seeds);
  std::vector<ActiveComparison> runs(seeds.size());
  std::vector<std::vector<GrowingDataPoint>> growing(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    runs[i] = active_comparison_seed(s, seeds[i]);
    growing[i] = growing_data_seed(s, seeds[i]);
  });

  ExperimentOutcome out;
  for (const auto& r : runs) {
    for (const auto& [curve, label] : {std::pair{&r.softmax_entropy, "softmax_entropy"},
                                       std::pair{&r.neg_log_density, "neg_log_density"}}) {
      std::ostringstream os;
      write_curve_csv(os, *curve);
      const std::string name = std::string("curve_") + label + "_seed" + std::to_string(r.seed) + ".csv";
      write_text_file(dir / name, os.str());
      out.outputs.push_back(name);
    }
  }
  std::string grow = "seed,fraction,train_size,mean_log_density,mean_entropy\n";
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (const auto& p : growing[i]) {
      grow += std::to_string(seeds[i]) + ',' + format_double(p.fraction) + ',' + std::to_string(p.train_size) + ',' +
              format_double(p.mean_log_density) + ',' + format_double(p.mean_entropy) + '\n';
    }
  }
  write_text_file(dir / "growing_data.csv", grow);
  out.outputs.push_back("growing_data.csv");
  out.checks = active_checks(runs);
  out.checks.push_back(growing_data_majority(growing));
  return out;
}

ExperimentOutcome exp_dirichlet(const Json& cfg, std::uint64_t seed, std::size_t jobs,
                                const std::filesystem::path& dir, Json& effective) {
  const auto s = DirichletSettings::from_json(cfg);
  effective.update(s.to_json());
  Rng alpha_rng = Rng::derive(seed, kAlphaDraws);
  std::vector<DirichletParams> params;
  for (std::size_t r = 0; r < s.num_alphas; ++r) {
    Vector a(s.class_counts[r % s.class_counts.size()]);
    for (double& v : a) v = alpha_rng.uniform(s.alpha_lo, s.alpha_hi);
    params.emplace_back(std::move(a));
  }
  std::vector<DirichletRow> rows(params.size());
  parallel_for(params.size(), jobs,
               [&](std::size_t i) { rows[i] = dirichlet_mc_row(params[i], s.mc_samples, mix_seed(seed, i)); });

  ExperimentOutcome out;
  std::size_t failures = 0;
  double worst = 0.0;
  for (std::size_t k : s.class_counts) {
    std::string csv;
    for (std::size_t i = 0; i < k; ++i) csv += "alpha" + std::to_string(i) + ',';
    csv += "expected_entropy,entropy_variance,mc_mean,mc_var,mc_se\n";
    bool any = false;
    for (const auto& r : rows) {
      if (r.alpha.size() != k) continue;
      any = true;
      for (double a : r.alpha) csv += format_double(a) + ',';
      csv += format_double(r.expected_entropy) + ',' + format_double(r.entropy_variance) + ',' +
             format_double(r.mc_mean) + ',' + format_double(r.mc_var) + ',' + format_double(r.mc_se) + '\n';
    }
    if (!any) continue;
    const std::string name = "dirichlet_k" + std::to_string(k) + ".csv";
    write_text_file(dir / name, csv);
    out.outputs.push_back(name);
  }
  std::string checks_csv = "row,quantity,analytic,mc_mean,mc_se,z\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (const auto& c : rows[i].checks) {
      worst = std::max(worst, c.z_score());
      failures += c.z_score() <= s.max_se ? 0 : 1;
      checks_csv += std::to_string(i) + ',' + c.quantity + ',' + format_double(c.analytic) + ',' +
                    format_double(c.mc_mean) + ',' + format_double(c.mc_se) + ',' + format_double(c.z_score()) + '\n';
    }
  }
  write_text_file(dir / "mc_checks.csv", checks_csv);
  out.outputs.push_back("mc_checks.csv");
  out.checks.push_back({"analytic_within_mc_standard_errors", failures == 0,
                        std::to_string(failures) + " comparisons beyond " + format_double(s.max_se) +
                            " SE; worst z " + format_double(worst)});
  if (s.ensemble_study) {
    const ViolationStudy v = dirichlet_violation_study(toy1d_seed(s.toy1d, seed));
    out.summary["lower_bound_points"] = v.points;
    out.summary["lower_bound_violations"] = v.violations;
    out.summary["lower_bound_violation_rate"] = v.rate();
  }
  return out;
}

ExperimentOutcome exp_objectives(const Json& cfg, std::uint64_t seed, std::size_t n_seeds, std::size_t jobs,
                                 const std::filesystem::path& dir, Json& effective) {
  const auto s = ObjectiveSettings::from_json(cfg);
  effective.update(s.to_json());
  const auto seeds = seed_list(seed, n_seeds);
  std::vector<ObjectiveRun> runs(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) { runs[i] = objective_mismatch_run(s, seeds[i]); });

  ExperimentOutcome out;
  const ScoreRow table[] = {{"min H(Y|Z)", runs[0].conditional}, {"min H(Y,Z)", runs[0].joint},
                            {"min H(Z)", runs[0].marginal}};
  std::ostringstream os;
  write_score_table_csv(os, table);
  write_text_file(dir / "scores.csv", os.str());
  std::string star = "seed,entropy_conditional,entropy_joint\n";
  for (const auto& r : runs) {
    star += std::to_string(r.seed) + ',' + format_double(r.star_entropy_conditional) + ',' +
            format_double(r.star_entropy_joint) + '\n';
  }
  write_text_file(dir / "star_point.csv", star);
  out.outputs = {"scores.csv", "star_point.csv"};
  for (const auto& r : runs) {
    for (auto c : objective_table_checks(r)) {
      c.name += "_seed" + std::to_string(r.seed);
      out.checks.push_back(std::move(c));
    }
  }
  out.checks.push_back(star_point_check(runs));
  return out;
}

}  // namespace

ExperimentOutcome run_experiment(std::string_view name, const Json& config, const std::filesystem::path& out_dir,
                                 const RunOptions& opts) {
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw UnknownExperiment("'" + std::string(name) + "'; valid names: " + valid);
  }
  if (!config.is_object()) throw ConfigError("experiment config must be a JSON object");
  const std::uint64_t seed = opts.seed_override.value_or(config.value("seed", std::uint64_t{0}));
  const std::size_t n_seeds = config.value("seeds", std::size_t{5});
  if (n_seeds < 1) throw ConfigError("seeds must be at least 1");
  std::filesystem::create_directories(out_dir);

  Json effective{{"experiment", std::string(name)}, {"seed", seed}, {"seeds", n_seeds}};
  ExperimentOutcome out;
  if (name == "two_moons") {
    out = exp_two_moons(config, seed, n_seeds, opts.jobs, out_dir, effective);
  } else if (name == "toy1d") {
    out = exp_toy1d(config, seed, n_seeds, opts.jobs, out_dir, effective);
  } else if (name == "histograms") {
    out = exp_histograms(config, seed, out_dir, effective);
  } else if (name == "active_learning") {
    out = exp_active(config, seed, n_seeds, opts.jobs, out_dir, effective);
  } else if (name == "dirichlet") {
    out = exp_dirichlet(config, seed, opts.jobs, out_dir, effective);
  } else {
    out = exp_objectives(config, seed, n_seeds, opts.jobs, out_dir, effective);
  }

  write_json_file(out_dir / "config.json", effective);
  const std::string canonical = effective.dump();
  Json manifest{{"experiment", std::string(name)},
                {"version", std::string(version_string())},
                {"seed", seed},
                {"config_hash", hex64(fnv1a64(canonical))},
                {"outputs", out.outputs},
                {"checks", checks_json(out.checks)},
                {"passed", out.passed()},
                {"summary", out.summary}};
  write_json_file(out_dir / "manifest.json", manifest);
  return out;
}

}  // namespace ddu
