#include "ddu/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "ddu/errors.hpp"
#include "ddu/experiments.hpp"
#include "ddu/gda.hpp"
#include "ddu/net.hpp"
#include "ddu/uncertainty.hpp"

namespace ddu {

namespace fs = std::filesystem;

Dataset dataset_from_config(const Json& j, std::uint64_t seed) {
  const std::string where = "dataset config";
  const auto kind = json_field<std::string>(j, "kind", where);
  if (kind == "two_moons") {
    return two_moons(json_field<std::size_t>(j, "n", where), j.value("noise", 0.1), seed);
  }
  if (kind == "three_gaussians") {
    return three_gaussians_label_noise(json_field<std::size_t>(j, "n", where), j.value("label_noise", 0.0), seed);
  }
  if (kind == "ambiguous_pool") {
    return ambiguous_pool(json_field<std::size_t>(j, "n_clean", where),
                          json_field<std::size_t>(j, "n_ambiguous", where), seed, j.value("noise", 0.1));
  }
  if (kind == "toy_1d") return toy_1d(seed);
  if (kind == "csv") {
    const auto path = json_field<std::string>(j, "path", where);
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset file " + path);
    return read_csv(in);
  }
  throw ConfigError("unknown dataset kind '" + kind +
                    "' (expected two_moons, three_gaussians, ambiguous_pool, toy_1d or csv)");
}

namespace {

struct TrainArgs {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

struct ScoreArgs {
  std::string artifacts = ".";
  std::string input;
  std::string out;
};

struct ExperimentArgs {
  std::string name;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool check = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const Json cfg = read_json_file(a.config);
  if (!cfg.is_object()) throw ConfigError(a.config + ": top level must be an object");
  const std::uint64_t seed = a.seed.value_or(cfg.value("seed", std::uint64_t{0}));
  NetConfig net = net_config_from_json(json_require(cfg, "net", "train config"));
  net.seed = seed;
  Dataset data = dataset_from_config(json_require(cfg, "dataset", "train config"), seed);
  data.validate();
  if (data.dim() != net.input_dim) throw ShapeMismatch("dataset dimension does not match net.input_dim");
  if (data.num_classes > net.num_classes) throw ShapeMismatch("dataset has more classes than net.num_classes");
  data.num_classes = net.num_classes;
  const double density_q = cfg.value("density_quantile", 0.01);
  const double entropy_q = cfg.value("entropy_quantile", 0.95);

  const TrainResult trained = train_with_log(data, net);
  const BatchForward fb = forward_batch(trained.model, data.x);
  const GdaModel gda = gda_fit(fb.features, data.y, data.num_classes);
  const Vector ld = log_density_rows(gda, fb.features);
  Vector ent(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) ent[i] = entropy(fb.probs.row(i));
  const Thresholds thresholds = compute_thresholds(ld, ent, density_q, entropy_q);

  const fs::path dir(a.out);
  write_json_file(dir / "model.json", to_json(trained.model));
  write_json_file(dir / "gda.json", to_json(gda));
  write_json_file(dir / "thresholds.json", to_json(thresholds));
  std::string log = "epoch,loss,accuracy\n";
  for (const auto& e : trained.log) {
    log += std::to_string(e.epoch) + ',' + format_double(e.loss) + ',' + format_double(e.accuracy) + '\n';
  }
  write_text_file(dir / "train_log.csv", log);
  out << "wrote model.json, gda.json, thresholds.json, train_log.csv to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_score(const ScoreArgs& a, std::ostream& out) {
  const fs::path dir(a.artifacts);
  const NetModel model = net_model_from_json(read_json_file(dir / "model.json"));
  const GdaModel gda = gda_from_json(read_json_file(dir / "gda.json"));
  const Thresholds t = thresholds_from_json(read_json_file(dir / "thresholds.json"));
  if (gda.dim != model.config.width) throw ShapeMismatch("GDA dimension does not match the model's feature width");

  std::ifstream in(a.input);
  if (!in) throw ConfigError("cannot open input " + a.input);
  const Dataset data = read_csv(in);
  if (data.dim() != model.config.input_dim) throw ShapeMismatch("input dimension does not match the model");

  std::vector<UncertaintyReport> reports;
  if (data.size() > 0) {
    const BatchForward fb = forward_batch(model, data.x);
    const Vector ld = log_density_rows(gda, fb.features);
    for (std::size_t i = 0; i < data.size(); ++i) reports.push_back(disentangle(fb.probs.row(i), ld[i], t));
  }
  std::ostringstream os;
  write_report_csv(os, reports);
  if (a.out.empty()) {
    out << os.str();
  } else {
    write_text_file(a.out, os.str());
  }
  return kExitOk;
}

int cmd_experiment(const ExperimentArgs& a, std::ostream& out) {
  const Json cfg = a.config.empty() ? Json::object() : read_json_file(a.config);
  const fs::path dir = a.out.empty() ? fs::path("runs") / a.name : fs::path(a.out);
  RunOptions opts;
  opts.seed_override = a.seed;
  opts.jobs = a.jobs;
  const ExperimentOutcome outcome = run_experiment(a.name, cfg, dir, opts);
  for (const auto& c : outcome.checks) {
    out << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << '\n';
  }
  out << "outputs in " << dir.string() << '\n';
  return a.check && !outcome.passed() ? kExitInternal : kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deterministic uncertainty toolkit: train, score and reproduce experiments"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a net, fit GDA and thresholds from a config");
  train_cmd->add_option("--config", train_args.config, "Train config (JSON)")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory");
  train_cmd->add_option("--seed", train_args.seed, "Override the config seed");

  ScoreArgs score_args;
  auto* score_cmd = app.add_subcommand("score", "Score CSV rows with trained artifacts");
  score_cmd->add_option("--artifacts", score_args.artifacts, "Directory with model.json, gda.json, thresholds.json");
  score_cmd->add_option("--input", score_args.input, "Input CSV with x0..xd-1 columns")->required();
  score_cmd->add_option("--out", score_args.out, "Report CSV (stdout when omitted)");

  ExperimentArgs exp_args;
  auto* exp_cmd = app.add_subcommand("experiment", "Run a canned experiment");
  exp_cmd->add_option("name", exp_args.name, "Experiment name")->required();
  exp_cmd->add_option("--config", exp_args.config, "Experiment config (JSON); defaults when omitted");
  exp_cmd->add_option("--out", exp_args.out, "Output directory");
  exp_cmd->add_option("--seed", exp_args.seed, "Override the config seed");
  exp_cmd->add_option("--jobs", exp_args.jobs, "Parallel seeds")->check(CLI::PositiveNumber);
  exp_cmd->add_flag("--check", exp_args.check, "Exit non-zero when a property check fails");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out);
    if (*score_cmd) return cmd_score(score_args, out);
    return cmd_experiment(exp_args, out);
  } catch (const UnknownExperiment& e) {
    err << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << e.what() << '\n';
    return kExitConfig;
  } catch (const ShapeMismatch& e) {
    err << e.what() << '\n';
    return kExitData;
  } catch (const ParseError& e) {
    err << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    // Remaining domain errors come from the data (counts, rates, labels).
    err << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace ddu
