#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ddu/errors.hpp"
#include "ddu/gda.hpp"
#include "ddu/net.hpp"
#include "ddu/rng.hpp"

using namespace ddu;

namespace {

GdaModel hand_model(const std::vector<Vector>& means, const std::vector<double>& priors) {
  GdaModel m;
  m.dim = means.front().size();
  for (std::size_t c = 0; c < means.size(); ++c) {
    m.classes.push_back({means[c], cholesky(Matrix::identity(m.dim)), std::log(priors[c])});
  }
  return m;
}

struct Blobs {
  Matrix x;
  std::vector<int> y;
};

Blobs blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b{Matrix(n, 3), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.uniform_int(3));
    b.y[i] = c;
    for (std::size_t k = 0; k < 3; ++k) b.x(i, k) = rng.normal(2.0 * c * (k == 0 ? 1.0 : -0.5), 1.0 + 0.2 * k);
  }
  return b;
}

}  // namespace

TEST_SUITE("gda") {
  TEST_CASE("two-class hand example") {
    const Matrix x{{0, 0}, {2, 0}, {0, 2}, {0, 4}};
    const std::vector<int> y{0, 0, 1, 1};
    const GdaModel m = gda_fit(x, y, 2);
    CHECK(m.classes[0].mean == Vector{1.0, 0.0});
    CHECK(m.classes[1].mean == Vector{0.0, 3.0});
    CHECK(std::exp(m.classes[0].log_prior) == doctest::Approx(0.5));
    // Sigma_0 = [[2,0],[0,0]] is singular, so a jitter must have been added.
    CHECK(m.jitter >= 1e-10);
    const Matrix& l = m.classes[0].cov_chol.lower;
    CHECK(l(0, 0) * l(0, 0) == doctest::Approx(2.0 + m.jitter).epsilon(1e-12));
    CHECK(l(1, 1) * l(1, 1) == doctest::Approx(m.jitter).epsilon(1e-6));
  }

  TEST_CASE("accumulator covariance uses the unbiased divisor") {
    GdaAccumulator acc(2, 1);
    acc.add(Vector{0.0, 0.0}, 0);
    acc.add(Vector{2.0, 0.0}, 0);
    const Matrix cov = acc.covariance(0);
    CHECK(cov(0, 0) == doctest::Approx(2.0));
    CHECK(cov(1, 1) == 0.0);
  }

  TEST_CASE("identical features are rescued by jitter") {
    const Matrix x{{1, 1}, {1, 1}, {1, 1}, {3, 0}, {4, 1}, {2, 2}};
    const std::vector<int> y{0, 0, 0, 1, 1, 1};
    const GdaModel m = gda_fit(x, y, 2);
    CHECK(m.jitter > 0.0);
    CHECK(std::isfinite(log_density(m, Vector{1.0, 1.0})));
  }

  TEST_CASE("underpopulated classes are rejected") {
    const Matrix x{{0, 0}, {1, 0}, {5, 5}};
    CHECK_THROWS_AS(gda_fit(x, std::vector<int>{0, 0, 1}, 2), ClassUnderpopulated);
    CHECK_THROWS_AS(gda_fit(x, std::vector<int>{0, 0, 0}, 2), ClassUnderpopulated);
  }

  TEST_CASE("priors sum to one and fit is permutation invariant") {
    const Blobs b = blobs(600, 1);
    const GdaModel m = gda_fit(b.x, b.y, 3);
    double s = 0.0;
    for (const auto& c : m.classes) s += std::exp(c.log_prior);
    CHECK(std::fabs(s - 1.0) < 1e-12);

    std::vector<std::size_t> perm(600);
    for (std::size_t i = 0; i < 600; ++i) perm[i] = i;
    Rng(2).shuffle(perm);
    Matrix px(600, 3);
    std::vector<int> py(600);
    for (std::size_t i = 0; i < 600; ++i) {
      for (std::size_t k = 0; k < 3; ++k) px(i, k) = b.x(perm[i], k);
      py[i] = b.y[perm[i]];
    }
    const GdaModel p = gda_fit(px, py, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(p.classes[c].mean[k] == doctest::Approx(m.classes[c].mean[k]).epsilon(1e-12));
      CHECK((p.classes[c].cov_chol.lower - m.classes[c].cov_chol.lower).max_abs() < 1e-12);
    }
  }

  TEST_CASE("two chunks merge into the one-pass statistics") {
    const Blobs b = blobs(501, 3);
    GdaAccumulator whole(3, 3);
    whole.add(b.x, b.y);
    GdaAccumulator first(3, 3);
    GdaAccumulator second(3, 3);
    for (std::size_t i = 0; i < 501; ++i) (i < 200 ? first : second).add(b.x.row(i), b.y[i]);
    first.merge(second);
    for (int c = 0; c < 3; ++c) {
      CHECK(first.count(c) == whole.count(c));
      const Vector a = first.mean(c);
      const Vector w = whole.mean(c);
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::fabs(a[k] - w[k]) < 1e-12);
      CHECK((first.covariance(c) - whole.covariance(c)).max_abs() < 1e-12);
    }
  }

  TEST_CASE("log density examples") {
    const GdaModel single = hand_model({{0.0, 0.0}}, {1.0});
    CHECK(log_density(single, Vector{0.0, 0.0}) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

    const GdaModel twins = hand_model({{1.0, -1.0}, {1.0, -1.0}}, {0.5, 0.5});
    const GdaModel one = hand_model({{1.0, -1.0}}, {1.0});
    const Vector z{0.3, 0.7};
    CHECK(log_density(twins, z) == doctest::Approx(log_density(one, z)).epsilon(1e-14));

    const GdaModel pair = hand_model({{0.0, 0.0}, {4.0, 0.0}}, {0.5, 0.5});
    // Both components sit at squared distance 4 from z.
    const double comp = -std::log(2.0 * std::numbers::pi) - 0.5 * 4.0;
    const double direct = std::log(0.5 * std::exp(comp) + 0.5 * std::exp(comp));
    CHECK(log_density(pair, Vector{2.0, 0.0}) == doctest::Approx(direct).epsilon(1e-12));
    CHECK_THROWS_AS(log_density(pair, Vector{1.0}), ShapeMismatch);
  }

  TEST_CASE("class posterior examples") {
    const GdaModel pair = hand_model({{0.0, 0.0}, {4.0, 0.0}}, {0.5, 0.5});
    const Vector mid = class_posterior(pair, Vector{2.0, 0.0});
    CHECK(mid[0] == doctest::Approx(0.5));
    const GdaModel skewed = hand_model({{1.0, 1.0}, {1.0, 1.0}}, {0.9, 0.1});
    const Vector at = class_posterior(skewed, Vector{1.0, 1.0});
    CHECK(at[0] == doctest::Approx(0.9));
    // Bayes rule by hand at z = (1, 0): likelihood ratio exp(-(1 - 9) / 2) = e^4.
    const Vector bayes = class_posterior(pair, Vector{1.0, 0.0});
    CHECK(bayes[0] == doctest::Approx(std::exp(4.0) / (std::exp(4.0) + 1.0)).epsilon(1e-12));
  }

  TEST_CASE("log density is invariant under class relabelling") {
    const Blobs b = blobs(300, 4);
    std::vector<int> relabelled(b.y.size());
    for (std::size_t i = 0; i < b.y.size(); ++i) relabelled[i] = (b.y[i] + 1) % 3;
    const GdaModel a = gda_fit(b.x, b.y, 3);
    const GdaModel r = gda_fit(b.x, relabelled, 3);
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      const Vector z{rng.normal(0, 3), rng.normal(0, 3), rng.normal(0, 3)};
      CHECK(log_density(r, z) == doctest::Approx(log_density(a, z)).epsilon(1e-12));
    }
  }

  TEST_CASE("mixture density integrates to one by importance sampling") {
    const Blobs b = blobs(900, 6);
    const GdaModel m = gda_fit(b.x, b.y, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& cls = m.classes[c];
      Rng rng(100 + c);
      const std::size_t n = 100000;
      double sum = 0.0;
      double sq = 0.0;
      Vector e(3);
      Vector z(3);
      for (std::size_t s = 0; s < n; ++s) {
        for (auto& v : e) v = rng.normal();
        const Vector le = matvec(cls.cov_chol.lower, e);
        for (std::size_t k = 0; k < 3; ++k) z[k] = cls.mean[k] + le[k];
        const double w = std::exp(log_density(m, z) - gaussian_log_pdf(z, cls.mean, cls.cov_chol)) *
                         std::exp(cls.log_prior);
        sum += w;
        sq += w * w;
      }
      const double mean = sum / n;
      const double se = std::sqrt((sq / n - mean * mean) / n);
      CHECK(std::fabs(mean - std::exp(cls.log_prior)) < 3.0 * se + 1e-12);
    }
  }

  TEST_CASE("temperature scaling of the head leaves densities unchanged") {
    NetConfig c;
    c.width = 8;
    c.num_residual_blocks = 2;
    c.seed = 4;
    const NetModel net = init_model(c);
    NetModel scaled = net;
    for (auto& v : scaled.head().w.data()) v /= 2.5;
    for (auto& v : scaled.head().b) v /= 2.5;
    const Blobs b = blobs(200, 7);
    Matrix x2(200, 2);
    for (std::size_t i = 0; i < 200; ++i) x2(i, 0) = b.x(i, 0), x2(i, 1) = b.x(i, 1);
    const Matrix f1 = extract_features(net, x2);
    const Matrix f2 = extract_features(scaled, x2);
    const GdaModel g1 = gda_fit(f1, b.y, 3);
    const GdaModel g2 = gda_fit(f2, b.y, 3);
    CHECK(log_density_rows(g1, f1) == log_density_rows(g2, f2));
  }

  TEST_CASE("json round trip") {
    const Blobs b = blobs(120, 8);
    const GdaModel m = gda_fit(b.x, b.y, 3);
    const GdaModel back = gda_from_json(to_json(m));
    const Vector z{0.1, -0.2, 0.3};
    CHECK(log_density(back, z) == log_density(m, z));
  }
}
