#include <doctest.h>

#include <cmath>

#include "ddu/errors.hpp"
#include "ddu/metrics.hpp"
#include "ddu/rng.hpp"
#include "oracles.hpp"

using namespace ddu;

TEST_SUITE("metrics") {
  TEST_CASE("ece examples") {
    CHECK(ece(std::vector<double>{1.0, 1.0, 1.0}, {true, true, true}) == 0.0);
    const std::vector<double> conf(10, 0.8);
    std::vector<bool> correct(10, false);
    for (int i = 0; i < 6; ++i) correct[i] = true;
    CHECK(ece(conf, correct) == doctest::Approx(0.2).epsilon(1e-12));
    // Bin [0, 0.5]: conf 0.3, acc 0.5. Bin (0.5, 1]: conf 0.8, acc 1.0. Each holds half.
    CHECK(ece(std::vector<double>{0.2, 0.4, 0.7, 0.9}, {false, true, true, true}, 2) ==
          doctest::Approx(0.5 * 0.2 + 0.5 * 0.2).epsilon(1e-12));
    CHECK_THROWS_AS(ece(std::vector<double>{0.5}, {true, false}), LengthMismatch);
    CHECK_THROWS_AS(ece(std::vector<double>{}, {}), EmptyInput);
  }

  TEST_CASE("bins are right inclusive and counts add up") {
    const auto b = calibration_bins(std::vector<double>{0.0, 0.5, 0.5000001, 1.0}, {true, true, true, true}, 2);
    REQUIRE(b.edges.size() == 3);
    CHECK(b.edges.front() == 0.0);
    CHECK(b.edges.back() == 1.0);
    CHECK(b.bins[0].count == 2);
    CHECK(b.bins[1].count == 2);
  }

  TEST_CASE("ece vanishes when bin confidence equals bin accuracy") {
    // Per bin of 4 rows at confidence 0.25 * j, exactly j rows are correct.
    std::vector<double> conf;
    std::vector<bool> correct;
    for (int j = 1; j <= 4; ++j) {
      for (int r = 0; r < 4; ++r) {
        conf.push_back(0.25 * j);
        correct.push_back(r < j);
      }
    }
    CHECK(ece(conf, correct, 4) == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("auroc examples") {
    CHECK(auroc(std::vector<double>{5, 6}, std::vector<double>{1, 2}) == 1.0);
    CHECK(auroc(std::vector<double>{1, 1}, std::vector<double>{1, 1, 1}) == 0.5);
    CHECK(auroc(std::vector<double>{3, 1}, std::vector<double>{2, 0}) == 0.75);
    CHECK_THROWS_AS(auroc(std::vector<double>{}, std::vector<double>{1}), EmptyInput);
  }

  TEST_CASE("auroc matches brute force, is tie symmetric and rank invariant") {
    Rng rng(1);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> pos(1 + rng.uniform_int(60));
      std::vector<double> neg(1 + rng.uniform_int(60));
      // Coarse rounding forces plenty of ties.
      for (auto& v : pos) v = std::round(rng.normal(0.5, 1.0) * 4) / 4;
      for (auto& v : neg) v = std::round(rng.normal(0.0, 1.0) * 4) / 4;
      const double a = auroc(pos, neg);
      CHECK(std::fabs(a - oracle::auroc_pairs(pos, neg)) < 1e-12);
      CHECK(std::fabs(auroc(neg, pos) - (1.0 - a)) < 1e-12);
      std::vector<double> tp = pos;
      std::vector<double> tn = neg;
      for (auto& v : tp) v = std::exp(3.0 * v) + 1.0;
      for (auto& v : tn) v = std::exp(3.0 * v) + 1.0;
      CHECK(auroc(tp, tn) == a);
    }
  }

  TEST_CASE("accuracy examples") {
    CHECK(accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}) == 1.0);
    CHECK(accuracy(std::vector<int>{0, 0}, std::vector<int>{1, 1}) == 0.0);
    CHECK(accuracy(std::vector<int>{0, 1, 1, 0}, std::vector<int>{0, 1, 1, 1}) == 0.75);
    CHECK_THROWS_AS(accuracy(std::vector<int>{0}, std::vector<int>{0, 1}), LengthMismatch);
  }
}
