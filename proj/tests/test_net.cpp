#include <doctest.h>

#include <cmath>

#include "ddu/data.hpp"
#include "ddu/errors.hpp"
#include "ddu/net.hpp"
#include "ddu/rng.hpp"
#include "oracles.hpp"

using namespace ddu;

namespace {

NetConfig tiny_config(bool sn, bool residual = true) {
  NetConfig c;
  c.input_dim = 3;
  c.width = 5;
  c.num_residual_blocks = 2;
  c.num_classes = 3;
  c.use_residual = residual;
  c.sn_coefficient = sn ? std::optional<double>(3.0) : std::nullopt;
  c.seed = 12;
  return c;
}

void zero_model(NetModel& m) {
  for (auto& l : m.layers) {
    for (auto& v : l.w.data()) v = 0.0;
    for (auto& v : l.b) v = 0.0;
  }
}

}  // namespace

TEST_SUITE("net") {
  TEST_CASE("zero weights give zero features and uniform probabilities") {
    NetConfig c = tiny_config(false);
    NetModel m = init_model(c);
    zero_model(m);
    const auto t = forward(m, Vector{1.0, -2.0, 0.5});
    for (double z : t.features) CHECK(z == 0.0);
    for (double p : t.probs) CHECK(p == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("hand-computed single block forward pass") {
    NetConfig c;
    c.input_dim = 2;
    c.width = 2;
    c.num_residual_blocks = 1;
    c.num_classes = 2;
    c.sn_coefficient.reset();
    NetModel m = init_model(c);
    m.layers[0].w = Matrix::identity(2);
    m.layers[0].b = {0.0, 0.0};
    m.layers[1].w = Matrix{{1.0, -1.0}, {2.0, 0.0}};
    m.layers[1].b = {0.5, -3.0};
    m.layers[2].w = Matrix(2, 2);
    m.layers[2].b = {0.0, 0.0};
    // pre = (1 - 2 + 0.5, 2 - 3) = (-0.5, -1); leaky 0.01 -> (-0.005, -0.01).
    const auto t = forward(m, Vector{1.0, 2.0});
    CHECK(t.features[0] == doctest::Approx(0.995).epsilon(1e-14));
    CHECK(t.features[1] == doctest::Approx(1.99).epsilon(1e-14));
    CHECK(t.probs[0] == doctest::Approx(0.5));

    m.config.use_residual = false;
    const auto plain = forward(m, Vector{1.0, 2.0});
    CHECK(plain.features[0] == doctest::Approx(-0.005));
    CHECK(plain.features[1] == doctest::Approx(-0.01));
    CHECK_THROWS_AS(forward(m, Vector{1.0}), ShapeMismatch);
  }

  TEST_CASE("residual identity: zero blocks pass the lift through") {
    NetModel m = init_model(tiny_config(false));
    for (auto& blk : m.blocks()) {
      for (auto& v : blk.w.data()) v = 0.0;
      for (auto& v : blk.b) v = 0.0;
    }
    const Vector x{0.3, -1.1, 2.0};
    const auto t = forward(m, x);
    const Vector lift = matvec(m.lift().w, x);
    for (std::size_t i = 0; i < lift.size(); ++i) CHECK(t.features[i] == lift[i] + m.lift().b[i]);
  }

  TEST_CASE("probabilities sum to one") {
    NetModel m = init_model(tiny_config(true));
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
      Vector x{rng.normal(0, 10), rng.normal(0, 10), rng.normal(0, 10)};
      const auto t = forward(m, x);
      double s = 0.0;
      for (double p : t.probs) {
        CHECK(p >= 0.0);
        s += p;
      }
      CHECK(std::fabs(s - 1.0) < 1e-12);
    }
  }

  TEST_CASE("spectral normalisation halves diag(6, 1) with c = 3") {
    NetConfig c;
    c.input_dim = 2;
    c.width = 2;
    c.num_residual_blocks = 1;
    c.num_classes = 2;
    NetModel m = init_model(c);
    m.lift().w = Matrix{{6.0, 0.0}, {0.0, 1.0}};
    for (int i = 0; i < 60; ++i) m = apply_spectral_norm(std::move(m));
    const Matrix eff = m.lift().effective_weight(c.sn_coefficient);
    CHECK(eff(0, 0) == doctest::Approx(3.0).epsilon(1e-10));
    CHECK(eff(1, 1) == doctest::Approx(0.5).epsilon(1e-10));

    m.lift().w = Matrix{{2.0, 0.0}, {0.0, 1.0}};
    for (int i = 0; i < 60; ++i) m = apply_spectral_norm(std::move(m));
    CHECK(m.lift().effective_weight(c.sn_coefficient) == m.lift().w);
  }

  TEST_CASE("effective sigma never exceeds c after maintenance steps") {
    NetConfig c = tiny_config(true);
    NetModel m = init_model(c);
    Rng rng(3);
    for (auto& l : m.layers)
      for (auto& v : l.w.data()) v = rng.normal(0.0, 3.0);
    spectral_norm_step(m, 50);
    for (const auto& l : m.layers) {
      REQUIRE(l.normalized);
      CHECK(l.sigma * l.scale(c.sn_coefficient) <= 3.0 + 1e-6);
      const Matrix eff = l.effective_weight(c.sn_coefficient);
      CHECK(oracle::spectral_norm_jacobi(eff.data(), eff.rows(), eff.cols()) <= 3.0 + 1e-6);
    }
  }

  TEST_CASE("features are Lipschitz within the per-layer bound") {
    NetConfig c = tiny_config(true);
    c.sn_coefficient = 1.0;
    NetModel m = init_model(c);
    Rng rng(4);
    for (auto& l : m.layers)
      for (auto& v : l.w.data()) v = rng.normal(0.0, 2.0);
    spectral_norm_step(m, 100);
    auto true_sigma = [&](const DenseLayer& l) {
      const Matrix eff = l.effective_weight(c.sn_coefficient);
      return oracle::spectral_norm_jacobi(eff.data(), eff.rows(), eff.cols());
    };
    double bound = true_sigma(m.lift());
    for (const auto& blk : m.blocks()) bound *= 1.0 + true_sigma(blk);
    for (int i = 0; i < 1000; ++i) {
      Vector a{rng.normal(), rng.normal(), rng.normal()};
      Vector b{rng.normal(), rng.normal(), rng.normal()};
      const auto fa = forward(m, a).features;
      const auto fb = forward(m, b).features;
      double df = 0.0;
      double dx = 0.0;
      for (std::size_t k = 0; k < fa.size(); ++k) df += (fa[k] - fb[k]) * (fa[k] - fb[k]);
      for (std::size_t k = 0; k < 3; ++k) dx += (a[k] - b[k]) * (a[k] - b[k]);
      CHECK(std::sqrt(df) <= bound * std::sqrt(dx) * (1.0 + 1e-9));
    }
  }

  TEST_CASE("backprop matches central differences") {
    for (bool sn : {false, true}) {
      NetConfig c = tiny_config(sn);
      NetModel m = init_model(c);
      Rng rng(8);
      Matrix x(6, 3);
      for (auto& v : x.data()) v = rng.normal();
      const std::vector<int> y{0, 1, 2, 1, 0, 2};
      const Gradients g = backprop_gradients(m, x, y);
      double worst = 0.0;
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& w = m.layers[l].w.data();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double keep = w[i];
          w[i] = keep + 1e-5;
          const double up = mean_cross_entropy(m, x, y);
          w[i] = keep - 1e-5;
          const double down = mean_cross_entropy(m, x, y);
          w[i] = keep;
          const double fd = (up - down) / 2e-5;
          const double an = g.dw[l].data()[i];
          worst = std::max(worst, std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-5}));
        }
        auto& b = m.layers[l].b;
        for (std::size_t i = 0; i < b.size(); ++i) {
          const double keep = b[i];
          b[i] = keep + 1e-5;
          const double up = mean_cross_entropy(m, x, y);
          b[i] = keep - 1e-5;
          const double down = mean_cross_entropy(m, x, y);
          b[i] = keep;
          const double fd = (up - down) / 2e-5;
          worst = std::max(worst, std::fabs(fd - g.db[l][i]) / std::max({std::fabs(fd), std::fabs(g.db[l][i]), 1e-5}));
        }
      }
      CHECK(worst < 1e-4);
      CHECK(g.loss == doctest::Approx(mean_cross_entropy(m, x, y)).epsilon(1e-12));
    }
  }

  TEST_CASE("head bias gradient vanishes at a symmetric stationary point") {
    NetConfig c = tiny_config(false);
    c.num_classes = 2;
    NetModel m = init_model(c);
    zero_model(m);
    const Matrix x{{1, 0, 0}, {-1, 0, 0}};
    const std::vector<int> y{0, 1};
    const Gradients g = backprop_gradients(m, x, y);
    for (double v : g.db.back()) CHECK(std::fabs(v) < 1e-15);
  }

  TEST_CASE("duplicated sample gives the single-sample gradient") {
    NetModel m = init_model(tiny_config(true));
    const Matrix one{{0.2, -0.7, 1.3}};
    const Matrix two{{0.2, -0.7, 1.3}, {0.2, -0.7, 1.3}};
    const std::vector<int> y1{2};
    const std::vector<int> y2{2, 2};
    const Gradients a = backprop_gradients(m, one, y1);
    const Gradients b = backprop_gradients(m, two, y2);
    for (std::size_t l = 0; l < a.dw.size(); ++l) {
      for (std::size_t i = 0; i < a.dw[l].data().size(); ++i) {
        CHECK(b.dw[l].data()[i] == doctest::Approx(a.dw[l].data()[i]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("two points are separated quickly") {
    Dataset d;
    d.x = Matrix{{-1.0, 0.0}, {1.0, 0.0}};
    d.y = {0, 1};
    d.ambiguous = {false, false};
    d.split = {Split::Train, Split::Train};
    d.num_classes = 2;
    NetConfig c;
    c.width = 16;
    c.num_residual_blocks = 2;
    c.epochs = 200;
    c.batch_size = 2;
    c.optimizer.lr = 1e-2;
    const TrainResult r = train_with_log(d, c);
    CHECK(r.log.back().loss < 0.01);
  }

  TEST_CASE("training is deterministic and fits two moons") {
    const Dataset d = two_moons(2000, 0.1, 0);
    NetConfig c = NetConfig::two_moons_default();
    c.seed = 3;
    const NetModel a = train(d, c);
    const NetModel b = train(d, c);
    CHECK(a.parameters_equal(b));
    CHECK(to_json(a).dump() == to_json(b).dump());
    const auto out = forward_batch(a, d.x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) correct += (out.probs(i, 1) > 0.5) == (d.y[i] == 1);
    CHECK(static_cast<double>(correct) / d.size() >= 0.97);
  }

  TEST_CASE("config validation and json round trip") {
    NetConfig c = tiny_config(true);
    c.width = 0;
    CHECK_THROWS(c.validate());
    c = tiny_config(true);
    c.leaky_slope = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config(true);
    c.sn_coefficient = -1.0;
    CHECK_THROWS(c.validate());

    const NetModel m = init_model(tiny_config(true));
    const NetModel back = net_model_from_json(to_json(m));
    CHECK(back.parameters_equal(m));
    const Vector x{0.1, 0.2, 0.3};
    CHECK(forward(back, x).probs == forward(m, x).probs);

    Json j = to_json(tiny_config(true));
    j.erase("width");
    CHECK_THROWS_AS(net_config_from_json(j), ConfigError);
  }
}
