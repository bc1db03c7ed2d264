#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ddu/data.hpp"
#include "ddu/errors.hpp"
#include "ddu/gda.hpp"
#include "ddu/objectives.hpp"
#include "ddu/rng.hpp"
#include "oracles.hpp"

using namespace ddu;

namespace {

/// Three-Gaussian data with the class centres pushed ten times further out.
Dataset separated(std::size_t n, std::uint64_t seed) {
  Dataset d = three_gaussians_label_noise(n, 0.0, seed);
  const Matrix& means = three_gaussians_means();
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) d.x(i, k) += 9.0 * means(static_cast<std::size_t>(d.y[i]), k);
  return d;
}

double worst_gradient_error(const std::function<ValueAndGradient(const GmmParams&)>& objective,
                            const GmmParams& at) {
  const Vector theta = at.flatten();
  const ValueAndGradient vg = objective(at);
  REQUIRE(vg.gradient.size() == theta.size());
  auto value = [&](const std::vector<double>& t) {
    return objective(GmmParams::unflatten(t, at.dim, at.num_components())).value;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double fd = oracle::central_difference(value, theta, i, 1e-5);
    const double an = vg.gradient[i];
    worst = std::max(worst, std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-6}));
  }
  return worst;
}

GmmParams random_gmm(Rng& rng, std::size_t dim, std::size_t k) {
  Vector theta(GmmParams::parameter_count(dim, k));
  for (auto& v : theta) v = rng.normal(0.0, 0.5);
  return GmmParams::unflatten(theta, dim, k);
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("flatten and unflatten are inverse") {
    Rng rng(1);
    const GmmParams g = random_gmm(rng, 3, 4);
    CHECK(GmmParams::parameter_count(3, 4) == 4 * (3 + 6 + 1));
    const Vector theta = g.flatten();
    CHECK(GmmParams::unflatten(theta, 3, 4).flatten() == theta);
    double w = 0.0;
    for (double lw : g.log_weights()) w += std::exp(lw);
    CHECK(std::fabs(w - 1.0) < 1e-12);
    for (const auto& c : g.components)
      for (std::size_t i = 0; i < 3; ++i) CHECK(c.chol_lower(i, i) > 0.0);
  }

  TEST_CASE("analytic gradients match central differences") {
    Rng rng(2);
    Matrix z(12, 2);
    for (auto& v : z.data()) v = rng.normal(0.0, 1.5);
    const std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1, 2, 2, 1, 0};
    for (int trial = 0; trial < 3; ++trial) {
      const GmmParams g = random_gmm(rng, 2, 3);
      CHECK(worst_gradient_error([&](const GmmParams& p) { return conditional_objective(p, z, y); }, g) < 1e-4);
      CHECK(worst_gradient_error([&](const GmmParams& p) { return marginal_objective(p, z); }, g) < 1e-4);
      CHECK(conditional_objective(g, z, y).value == doctest::Approx(conditional_nll(g, z, y)).epsilon(1e-12));
      CHECK(marginal_objective(g, z).value == doctest::Approx(marginal_nll(g, z)).epsilon(1e-12));
    }
  }

  TEST_CASE("a single class has zero conditional NLL") {
    Rng rng(3);
    Matrix z(5, 2);
    for (auto& v : z.data()) v = rng.normal();
    const std::vector<int> y(5, 0);
    for (int t = 0; t < 5; ++t) CHECK(std::fabs(conditional_nll(random_gmm(rng, 2, 1), z, y)) < 1e-15);
  }

  TEST_CASE("joint fit is the GDA fit") {
    const Dataset d = three_gaussians_label_noise(300, 0.04, 4);
    const GmmParams joint = fit_joint(d);
    const GmmParams gda = gmm_from_gda(gda_fit(d.x, d.y, 3));
    CHECK(joint.flatten() == gda.flatten());
    Dataset tiny = d.subset({0, 1, 2, 3});
    CHECK_THROWS_AS(fit_joint(tiny), ClassUnderpopulated);
  }

  TEST_CASE("joint fit is label-permutation equivariant") {
    const Dataset d = three_gaussians_label_noise(300, 0.04, 5);
    Dataset p = d;
    for (auto& y : p.y) y = (y + 1) % 3;
    const GmmParams a = fit_joint(d);
    const GmmParams b = fit_joint(p);
    for (std::size_t c = 0; c < 3; ++c) CHECK(b.components[(c + 1) % 3].mean == a.components[c].mean);
  }

  TEST_CASE("score additivity and n/a cells") {
    const Dataset d = three_gaussians_label_noise(150, 0.04, 6);
    const GmmParams g = fit_joint(d);
    const ObjectiveScores s = score(g, d, true);
    REQUIRE(s.cond_nll);
    CHECK(std::fabs(*s.joint_nll - (*s.cond_nll + s.marginal_nll)) < 1e-8);
    const ObjectiveScores u = score(g, d, false);
    CHECK_FALSE(u.cond_nll.has_value());
    CHECK_FALSE(u.joint_nll.has_value());
    const std::vector<ScoreRow> rows{{"H(Y|Z)", s}, {"H(Z)", u}};
    std::ostringstream os;
    write_score_table_csv(os, rows);
    CHECK(os.str().rfind("objective,H(Y|Z),H(Y,Z),H(Z)\n", 0) == 0);
    CHECK(os.str().find("n/a,n/a") != std::string::npos);
    Dataset wrong;
    wrong.x = Matrix(1, 3);
    wrong.y = {0};
    wrong.ambiguous = {false};
    wrong.split = {Split::Test};
    wrong.num_classes = 1;
    CHECK_THROWS_AS(score(g, wrong, true), ShapeMismatch);
  }

  TEST_CASE("EM with one component lands on the sample moments") {
    Dataset d = three_gaussians_label_noise(90, 0.0, 7);
    d = d.subset([&] {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < d.size(); ++i)
        if (d.y[i] == 0) rows.push_back(i);
      return rows;
    }());
    d.num_classes = 1;
    const FitTrace t = fit_marginal_em(d, 1, fit_joint(d));
    const std::size_t n = d.size();
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < n; ++i) mx += d.x(i, 0) / n, my += d.x(i, 1) / n;
    CHECK(t.params.components[0].mean[0] == doctest::Approx(mx).epsilon(1e-12));
    CHECK(t.params.components[0].mean[1] == doctest::Approx(my).epsilon(1e-12));
    double sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) sxx += (d.x(i, 0) - mx) * (d.x(i, 0) - mx) / n;
    const Matrix& l = t.params.components[0].chol_lower;
    CHECK(l(0, 0) * l(0, 0) == doctest::Approx(sxx).epsilon(1e-10));
  }

  TEST_CASE("EM never increases the marginal NLL") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const Dataset d = three_gaussians_label_noise(240, 0.04, 10 + seed);
      EmConfig cfg;
      cfg.seed = seed;
      cfg.perturbation = 0.5;  // start visibly away from the fixed point
      const FitTrace t = fit_marginal_em(d, 3, fit_joint(d), cfg);
      REQUIRE(t.objective.size() >= 2);
      for (std::size_t i = 1; i < t.objective.size(); ++i) CHECK(t.objective[i] <= t.objective[i - 1] + 1e-10);
    }
    const Dataset small = three_gaussians_label_noise(6, 0.0, 1);
    CHECK_THROWS_AS(fit_marginal_em(small, 3, GmmParams{}), InvalidCount);
  }

  TEST_CASE("conditional fit leaves a separated GDA solution in place") {
    const Dataset d = separated(300, 8);
    const GmmParams joint = fit_joint(d);
    const FitTrace cond = fit_conditional(d, joint);
    CHECK(std::fabs(cond.objective.back() - cond.objective.front()) < 1e-6);
    // All three fits coincide when classes are perfectly separated.
    const FitTrace em = fit_marginal_em(d, 3, joint);
    const ObjectiveScores a = score(joint, d, true);
    const ObjectiveScores b = score(cond.params, d, true);
    const ObjectiveScores c = score(em.params, d, true);
    CHECK(std::fabs(*a.cond_nll - *b.cond_nll) < 1e-4);
    CHECK(std::fabs(*a.cond_nll - *c.cond_nll) < 1e-4);
    CHECK(std::fabs(a.marginal_nll - b.marginal_nll) < 1e-4);
    CHECK(std::fabs(a.marginal_nll - c.marginal_nll) < 1e-4);
    CHECK(std::fabs(*a.joint_nll - *c.joint_nll) < 1e-4);
  }

  TEST_CASE("each fit wins its own objective under label noise") {
    const Dataset d = three_gaussians_label_noise(600, 0.04, 11);
    const GmmParams joint = fit_joint(d);
    const FitTrace cond = fit_conditional(d, joint);
    for (std::size_t i = 1; i < cond.objective.size(); ++i) CHECK(cond.objective[i] <= cond.objective[i - 1]);
    EmConfig cfg;
    cfg.seed = 11;
    const FitTrace em = fit_marginal_em(d, 3, joint, cfg);
    const ObjectiveScores sc = score(cond.params, d, true);
    const ObjectiveScores sj = score(joint, d, true);
    const ObjectiveScores sm = score(em.params, d, false);
    CHECK(*sc.cond_nll <= *sj.cond_nll + 1e-6);
    CHECK(*sj.joint_nll <= *sc.joint_nll + 1e-6);
    CHECK(sm.marginal_nll <= sj.marginal_nll + 1e-6);
    CHECK(sj.marginal_nll <= sc.marginal_nll + 1e-6);
  }

  TEST_CASE("conditional fit rejects a missing class") {
    Dataset d = three_gaussians_label_noise(30, 0.0, 12);
    const GmmParams joint = fit_joint(d);
    for (auto& y : d.y)
      if (y == 2) y = 1;
    CHECK_THROWS_AS(fit_conditional(d, joint), ClassUnderpopulated);
  }
}
