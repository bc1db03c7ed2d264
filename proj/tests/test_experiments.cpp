#include <doctest.h>

#include <atomic>
#include <filesystem>

#include "ddu/errors.hpp"
#include "ddu/experiments.hpp"

using namespace ddu;
namespace fs = std::filesystem;

namespace {

Json tiny_net(std::size_t input_dim, bool sn = true) {
  NetConfig c;
  c.input_dim = input_dim;
  c.width = 8;
  c.num_residual_blocks = 1;
  c.epochs = 3;
  c.batch_size = 32;
  c.optimizer.lr = 1e-2;
  if (!sn) {
    c.use_residual = false;
    c.sn_coefficient.reset();
  }
  return to_json(c);
}

Json tiny_config(const std::string& name) {
  Json j{{"seeds", 2}, {"seed", 3}};
  if (name == "two_moons") {
    j.update({{"n_train", 200}, {"n_test", 60}, {"n_ood", 60}, {"grid", 4},
              {"ddu_net", tiny_net(2)}, {"fc_net", tiny_net(2, false)}});
  } else if (name == "toy1d") {
    j.update({{"members", 2}, {"grid", 21}, {"net", tiny_net(1)}});
  } else if (name == "histograms") {
    j.update({{"n_clean", 100}, {"n_ambiguous", 100}, {"n_eval", 40}, {"net", tiny_net(2)}});
  } else if (name == "active_learning") {
    j.update({{"n_clean", 60}, {"n_ambiguous", 60}, {"n_test", 40}, {"initial_size", 6}, {"acquisition_size", 3},
              {"budget", 12}, {"plateau_steps", 2}, {"net", tiny_net(2)}, {"growing_clean", 40},
              {"growing_ambiguous", 40}, {"growing_net", tiny_net(2)}});
  } else if (name == "dirichlet") {
    j.update({{"num_alphas", 4}, {"mc_samples", 4000}, {"ensemble_study", true},
              {"toy1d", {{"members", 2}, {"grid", 11}, {"net", tiny_net(1)}}}});
  } else {
    j.update({{"n", 150}, {"max_iterations", 200}});
  }
  return j;
}

fs::path scratch(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "ddu_experiment_tests" / leaf;
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("experiments") {
  TEST_CASE("parallel_for visits every index once and rethrows") {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, 3, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, 2, [](std::size_t i) {
                      if (i == 7) throw DomainError("boom");
                    }),
                    DomainError);
  }

  TEST_CASE("seed lists and version") {
    CHECK(seed_list(5, 3) == std::vector<std::uint64_t>{5, 6, 7});
    CHECK(version_string().rfind("0.1.0", 0) == 0);
  }

  TEST_CASE("unknown experiments list the valid names") {
    try {
      run_experiment("mnist", Json::object(), scratch("unknown"), {});
      FAIL("expected UnknownExperiment");
    } catch (const UnknownExperiment& e) {
      CHECK(std::string(e.what()).find("two_moons") != std::string::npos);
    }
    CHECK_THROWS_AS(run_experiment("toy1d", Json::array(), scratch("array"), {}), ConfigError);
  }

  TEST_CASE("every experiment writes its manifest and outputs") {
    for (const auto& name : experiment_names()) {
      CAPTURE(name);
      const fs::path dir = scratch(name);
      const ExperimentOutcome out = run_experiment(name, tiny_config(name), dir, {});
      CHECK_FALSE(out.checks.empty());
      CHECK(fs::exists(dir / "config.json"));
      const Json manifest = read_json_file(dir / "manifest.json");
      CHECK(manifest.at("experiment") == name);
      CHECK(manifest.at("seed") == 3);
      CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
      CHECK(manifest.at("passed") == out.passed());
      for (const auto& f : out.outputs) CHECK(fs::exists(dir / f));
      // The effective config reproduces the run.
      const Json effective = read_json_file(dir / "config.json");
      CHECK(effective.at("seeds") == 2);
    }
  }

  TEST_CASE("runs are deterministic across repeats and job counts") {
    const Json cfg = tiny_config("objective_mismatch");
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    run_experiment("objective_mismatch", cfg, a, {});
    RunOptions two_jobs;
    two_jobs.jobs = 2;
    run_experiment("objective_mismatch", cfg, b, two_jobs);
    CHECK(read_text_file(a / "scores.csv") == read_text_file(b / "scores.csv"));
    CHECK(read_text_file(a / "star_point.csv") == read_text_file(b / "star_point.csv"));
    CHECK(read_json_file(a / "manifest.json").at("config_hash") == read_json_file(b / "manifest.json").at("config_hash"));

    RunOptions other;
    other.seed_override = 9;
    const fs::path c = scratch("det_c");
    run_experiment("objective_mismatch", cfg, c, other);
    CHECK(read_json_file(c / "manifest.json").at("seed") == 9);
    CHECK(read_text_file(a / "scores.csv") != read_text_file(c / "scores.csv"));
  }

  TEST_CASE("toy1d ensemble satisfies the decomposition identity") {
    Toy1dSettings s = Toy1dSettings::from_json(tiny_config("toy1d"));
    const Toy1dSeedResult r = toy1d_seed(s, 1);
    REQUIRE(r.grid.size() == 21);
    for (std::size_t i = 0; i < r.grid.size(); ++i) {
      CHECK(std::fabs(r.pe[i] - r.mi[i] - r.expected_entropy[i]) < 1e-12);
    }
  }

  TEST_CASE("dirichlet rows agree with Monte Carlo") {
    const DirichletRow row = dirichlet_mc_row(DirichletParams({1.0, 1.0}), 100000, 5);
    CHECK(row.expected_entropy == doctest::Approx(0.5).epsilon(1e-12));
    REQUIRE(row.checks.size() == 6);
    for (const auto& c : row.checks) {
      CAPTURE(c.quantity);
      CHECK(c.z_score() <= 4.0);
    }
  }

  TEST_CASE("check helpers count seeds") {
    ObjectiveRun a;
    a.star_entropy_conditional = 0.7;
    a.star_entropy_joint = 0.05;
    ObjectiveRun b = a;
    b.star_entropy_conditional = 0.4;
    CHECK(star_point_check({a, b}).passed);
    b.star_entropy_conditional = 0.2;
    CHECK_FALSE(star_point_check({a, b}).passed);

    std::vector<GrowingDataPoint> good{{0.1, 10, -3.0, 0.3}, {0.2, 20, -2.0, 0.3}, {1.0, 100, -1.0, 0.3}};
    std::vector<GrowingDataPoint> bad{{0.1, 10, -1.0, 0.3}, {0.2, 20, -2.0, 0.3}, {1.0, 100, -3.0, 0.3}};
    CHECK(growing_data_majority({good, good, bad}).passed);
    CHECK_FALSE(growing_data_majority({good, bad}).passed);
  }
}
