#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ddu/data.hpp"
#include "ddu/errors.hpp"

using namespace ddu;

namespace {

std::string dump(const Dataset& d) {
  std::ostringstream os;
  write_csv(os, d);
  return os.str();
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("two_moons is balanced") {
    const Dataset d = two_moons(2000, 0.1, 0);
    d.validate();
    std::size_t ones = 0;
    for (int y : d.y) ones += y == 1;
    CHECK(ones == 1000);
    const Dataset odd = two_moons(7, 0.1, 0);
    std::size_t odd_ones = 0;
    for (int y : odd.y) odd_ones += y == 1;
    CHECK(std::abs(static_cast<int>(odd_ones) * 2 - 7) <= 1);
    CHECK_THROWS_AS(two_moons(1, 0.1, 0), InvalidCount);
  }

  TEST_CASE("noise-free two_moons points lie on the arcs") {
    const Dataset d = two_moons(4, 0.0, 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double px = d.x(i, 0);
      const double py = d.x(i, 1);
      if (d.y[i] == 0) {
        CHECK(std::hypot(px, py) == doctest::Approx(1.0));
        CHECK(py >= -1e-12);
      } else {
        CHECK(std::hypot(px - 1.0, py - 0.5) == doctest::Approx(1.0));
        CHECK(py <= 0.5 + 1e-12);
      }
    }
  }

  TEST_CASE("generators are deterministic") {
    CHECK(dump(two_moons(1000, 0.1, 17)) == dump(two_moons(1000, 0.1, 17)));
    CHECK(dump(two_moons(1000, 0.1, 17)) != dump(two_moons(1000, 0.1, 18)));
    CHECK(dump(ambiguous_pool(50, 200, 4)) == dump(ambiguous_pool(50, 200, 4)));
    CHECK(dump(toy_1d(8)) == dump(toy_1d(8)));
  }

  TEST_CASE("three_gaussians flags exactly the flipped rows") {
    const Dataset clean = three_gaussians_label_noise(300, 0.0, 5);
    for (bool a : clean.ambiguous) CHECK_FALSE(a);
    const Dataset d = three_gaussians_label_noise(1000, 0.04, 5);
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      // Rows are generated class-by-class in turn; a flag means the label moved.
      const int original = static_cast<int>(i % 3);
      CHECK(d.ambiguous[i] == (d.y[i] != original));
      flagged += d.ambiguous[i];
    }
    CHECK(flagged == 40);
    const auto a = three_gaussians_label_noise(300, 0.04, 9);
    const auto b = three_gaussians_label_noise(300, 0.04, 9);
    CHECK(a.ambiguous == b.ambiguous);
    CHECK_THROWS_AS(three_gaussians_label_noise(10, 1.0, 0), InvalidRate);
    CHECK_THROWS_AS(three_gaussians_label_noise(10, -0.1, 0), InvalidRate);
  }

  TEST_CASE("ambiguous_pool ratio, tags and band") {
    const Dataset d = ambiguous_pool(100, 6000, 1);
    d.validate();
    CHECK(d.size() == 6100);
    std::size_t amb = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d.split[i] == Split::Pool);
      if (d.ambiguous[i]) {
        ++amb;
        CHECK(in_ambiguous_band(d.x(i, 0), d.x(i, 1)));
      }
    }
    CHECK(amb == 6000);
    const Dataset plain = ambiguous_pool(40, 0, 2, 0.1);
    const Dataset moons = two_moons(40, 0.1, 2);
    CHECK(plain.x == moons.x);
    CHECK(plain.y == moons.y);
    for (Split s : plain.split) CHECK(s == Split::Pool);
  }

  TEST_CASE("ambiguous labels are a fair coin") {
    std::size_t zeros = 0;
    std::size_t total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Dataset d = ambiguous_pool(0, 60000, seed);
      for (std::size_t i = 0; i < d.size(); ++i) {
        zeros += d.y[i] == 0;
        ++total;
      }
    }
    CHECK(std::fabs(static_cast<double>(zeros) / total - 0.5) < 0.05);
  }

  TEST_CASE("toy_1d leaves the gap empty and flags the bands") {
    const Dataset d = toy_1d(0);
    d.validate();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double x = d.x(i, 0);
      CHECK_FALSE((x > -2.0 && x < 2.0));
      if (std::fabs(x) >= 3.5 && std::fabs(x) <= 4.5) CHECK(d.ambiguous[i]);
    }
  }

  TEST_CASE("uniform_ood_box respects the exclusion distance") {
    const Dataset moons = two_moons(1000, 0.1, 0);
    const Dataset ood = uniform_ood_box(500, {-6, -6}, {6, 6}, moons, 0.5, 3);
    CHECK(ood.size() == 500);
    for (std::size_t i = 0; i < ood.size(); ++i) {
      CHECK(ood.split[i] == Split::Ood);
      double best = 1e300;
      for (std::size_t j = 0; j < moons.size(); ++j) {
        best = std::min(best, std::hypot(ood.x(i, 0) - moons.x(j, 0), ood.x(i, 1) - moons.x(j, 1)));
      }
      CHECK(best >= 0.5);
    }
    const Dataset plain = uniform_ood_box(100, {0, 0}, {1, 1}, Dataset{}, 0.0, 1);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      CHECK(plain.x(i, 0) >= 0.0);
      CHECK(plain.x(i, 0) < 1.0);
    }
    CHECK_THROWS_AS(uniform_ood_box(1, {0, 0}, {1, 1}, moons.subset({0}), 10.0, 1), ExhaustedSampling);
  }

  TEST_CASE("csv round trip is lossless") {
    Dataset d = ambiguous_pool(20, 10, 3);
    d.split[0] = Split::Val;
    std::istringstream in(dump(d));
    const Dataset back = read_csv(in);
    CHECK(back.x == d.x);
    CHECK(back.y == d.y);
    CHECK(back.ambiguous == d.ambiguous);
    CHECK(back.split == d.split);
    std::istringstream header_only("x0,x1,y,ambiguous,split\n");
    CHECK(read_csv(header_only).size() == 0);
    std::istringstream bad("x0,z\n1,2\n");
    CHECK_THROWS_AS(read_csv(bad), ParseError);
  }

  TEST_CASE("validate catches broken invariants") {
    Dataset d = two_moons(10, 0.1, 0);
    d.y[0] = 5;
    CHECK_THROWS_AS(d.validate(), DomainError);
    d = two_moons(10, 0.1, 0);
    d.ambiguous.pop_back();
    CHECK_THROWS_AS(d.validate(), ShapeMismatch);
  }
}
