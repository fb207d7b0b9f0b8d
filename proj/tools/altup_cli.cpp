// Copyright 2026 The AltUp Toolkit Authors.
// SPDX-License-Identifier: Apache-2.0

// altup: train, evaluate and account for AltUp models; run the collision
// study and the gradient-check suite.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or divergence error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "altup/cost_model.hpp"
#include "altup/errors.hpp"
#include "altup/gradcheck_suite.hpp"
#include "altup/harness/checkpoint.hpp"
#include "altup/harness/config.hpp"
#include "altup/harness/train.hpp"
#include "altup/lsh_analysis.hpp"
#include "altup/model.hpp"

namespace {

namespace fs = std::filesystem;
using altup::harness::RunConfig;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kConfigFailure = 1;
constexpr int kRuntimeFailure = 2;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", path, "JSON run configuration");
    app->add_option("--set", overrides, "override a config key, e.g. --set model.d_model=64")->take_all();
  }

  RunConfig load(std::optional<std::uint64_t> seed = std::nullopt) const {
    std::vector<std::string> all = overrides;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    return altup::harness::load_config(path, all);
  }
};

int cmd_train(const ConfigArgs& ca, std::uint64_t seed, const std::string& out_dir, bool timing, bool quiet) {
  RunConfig cfg = ca.load(seed);
  fs::create_directories(out_dir);
  altup::harness::TrainOptions opt;
  opt.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
  opt.summary_json = (fs::path(out_dir) / "summary.json").string();
  opt.checkpoint = (fs::path(out_dir) / "checkpoint.bin").string();
  opt.timing = timing;
  opt.log = quiet ? nullptr : &std::cerr;
  auto res = altup::harness::train(cfg, opt);
  const auto& last = res.rows.back();
  std::cout << "trained " << altup::variant_name(cfg.spec.variant) << " for " << last.step << " steps: train loss "
            << altup::harness::format_double(res.rows.front().train_loss) << " -> "
            << altup::harness::format_double(last.train_loss) << ", eval accuracy "
            << altup::harness::format_double(last.eval_token_accuracy) << "\n"
            << "wrote " << opt.metrics_csv << ", " << opt.summary_json << ", " << opt.checkpoint << "\n";
  return kOk;
}

int cmd_eval(const ConfigArgs& ca, const std::string& checkpoint, std::optional<std::uint64_t> seed) {
  RunConfig cfg = ca.load(seed);
  if (!cfg.seed) cfg.seed = 0;
  altup::Model model(cfg.spec, 0);
  altup::harness::load_checkpoint(checkpoint, model.parameters());
  altup::harness::Dataset data(cfg);
  const auto ev = altup::harness::evaluate(model, altup::harness::eval_set(cfg, data));
  json j{{"eval_loss", ev.loss}, {"eval_token_accuracy", ev.accuracy}, {"scored_tokens", ev.tokens}};
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_cost(const ConfigArgs& ca, std::size_t batch, std::size_t element_bytes, bool json_only) {
  RunConfig cfg = ca.load();
  const auto report = altup::count_params(cfg.spec, {batch, element_bytes});
  std::cout << json(report).dump(2) << "\n";
  if (!json_only) altup::write_text(std::cout, report);
  return kOk;
}

int cmd_census(const ConfigArgs& ca) {
  RunConfig cfg = ca.load();
  altup::Model model(cfg.spec, 0);
  for (const auto& p : model.parameters())
    std::cout << p.name << "  " << altup::to_string(p.tensor.shape()) << "  " << p.tensor.numel() << "\n";
  const auto c = model.census();
  const auto r = altup::count_params(cfg.spec);
  std::cout << "embedding " << c.embedding << "\nnon_embedding " << c.non_embedding << "\ntotal " << c.total()
            << "\ncost model agrees: "
            << (r.embedding_params == c.embedding && r.non_embedding_params == c.non_embedding ? "yes" : "NO")
            << "\n";
  return kOk;
}

struct CollideArgs {
  std::vector<std::string> schemes{"minhash", "spherical", "hyperplane"};
  std::vector<std::size_t> n{1024};
  std::vector<double> f{0.1, 0.25, 0.5};
  std::size_t l = 64, d = 64, trials = 50000;
  double width = 1.0;
  unsigned threads = 0;
  bool ordering = false;
  std::string csv;
};

int cmd_collide(const CollideArgs& a, std::uint64_t seed) {
  using namespace altup::lsh;
  std::vector<CollisionEstimate> rows;
  if (a.ordering) {
    for (std::size_t n : a.n)
      for (double f : a.f) {
        const OrderingReport r = verify_ordering(n, a.l, f, a.d, a.trials, seed, a.threads);
        rows.push_back(r.token_id);
        rows.push_back(r.spherical);
        for (const auto& h : r.hyperplane_sweep) rows.push_back(h);
        std::cout << "n=" << n << " f=" << f << " token_id=" << r.token_id.probability
                  << " spherical=" << r.spherical.probability << " hyperplane(best w=" << r.hyperplane.width
                  << ")=" << r.hyperplane.probability << " ordering " << (r.pass ? "holds" : "not separated")
                  << (r.in_regime ? "" : " (outside the large-n, small-f regime)") << "\n";
      }
  } else {
    EstimateOptions opt;
    opt.hyperplane_width = a.width;
    opt.threads = a.threads;
    for (const auto& s : a.schemes) {
      Scheme scheme;
      try {
        scheme = parse_scheme(s);
      } catch (const altup::RangeError& e) {
        throw altup::ConfigError(e.what());
      }
      for (std::size_t n : a.n)
        for (double f : a.f) rows.push_back(estimate_collision(scheme, n, a.l, f, a.d, a.trials, seed, opt));
    }
  }
  if (a.csv.empty()) {
    write_csv(std::cout, rows);
  } else {
    std::ofstream out(a.csv);
    if (!out) throw altup::Error("cannot write '" + a.csv + "'");
    write_csv(out, rows);
    std::cout << "wrote " << rows.size() << " rows to " << a.csv << "\n";
  }
  return kOk;
}

int cmd_gradcheck(double tolerance) {
  bool ok = true;
  for (const auto& c : altup::run_gradient_suite()) {
    const bool pass = c.report.max_relative_error < tolerance;
    ok = ok && pass;
    std::cout << (pass ? "PASS  " : "FAIL  ") << c.name << "  max rel err " << c.report.max_relative_error
              << " (" << c.report.worst_param << "[" << c.report.worst_index << "], " << c.report.entries_checked
              << " entries)\n";
  }
  return ok ? kOk : kRuntimeFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AltUp toolkit: alternating updates, sequence AltUp and memory lookups"};
  app.require_subcommand(1);

  ConfigArgs train_cfg, eval_cfg, cost_cfg, census_cfg;
  std::uint64_t train_seed = 0, collide_seed = 0;
  std::optional<std::uint64_t> eval_seed;
  std::string out_dir = "run", checkpoint;
  bool timing = false, quiet = false, json_only = false;
  std::size_t batch = 1, element_bytes = 1;
  double tolerance = 1e-4;
  CollideArgs collide;

  auto* train = app.add_subcommand("train", "train a model and write metrics, summary and checkpoint");
  train_cfg.attach(train);
  train->add_option("--seed", train_seed, "master seed")->required();
  train->add_option("-o,--out", out_dir, "output directory")->capture_default_str();
  train->add_flag("--timing", timing, "record tokens_per_second in the metrics CSV");
  train->add_flag("-q,--quiet", quiet, "no per-eval progress on stderr");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  eval_cfg.attach(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--seed", eval_seed, "seed of the evaluation split");

  auto* cost = app.add_subcommand("cost", "closed-form parameter, FLOP and memory report");
  cost_cfg.attach(cost);
  cost->add_option("--batch", batch, "batch size for activation memory")->capture_default_str();
  cost->add_option("--element-bytes", element_bytes, "bytes per activation unit")->capture_default_str();
  cost->add_flag("--json", json_only, "JSON only, no text table");

  auto* census = app.add_subcommand("census", "per-tensor parameter census of a constructed model");
  census_cfg.attach(census);

  auto* col = app.add_subcommand("collide", "collision probabilities of the lookup schemes");
  col->add_option("--seed", collide_seed, "master seed")->required();
  col->add_option("--scheme", collide.schemes, "hyperplane, spherical, minhash")->capture_default_str();
  col->add_option("-n", collide.n, "bucket counts")->capture_default_str();
  col->add_option("-f", collide.f, "overlap fractions")->capture_default_str();
  col->add_option("-l", collide.l, "sentence length")->capture_default_str();
  col->add_option("-d", collide.d, "embedding dimension")->capture_default_str();
  col->add_option("--trials", collide.trials, "Monte-Carlo trials")->capture_default_str();
  col->add_option("--width", collide.width, "hyperplane bucket width")->capture_default_str();
  col->add_option("--threads", collide.threads, "worker threads (0: all cores)")->capture_default_str();
  col->add_flag("--ordering", collide.ordering, "run the ordering check with the width sweep");
  col->add_option("--csv", collide.csv, "write the CSV here instead of stdout");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer variant");
  grad->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    if (*train) return cmd_train(train_cfg, train_seed, out_dir, timing, quiet);
    if (*eval) return cmd_eval(eval_cfg, checkpoint, eval_seed);
    if (*cost) return cmd_cost(cost_cfg, batch, element_bytes, json_only);
    if (*census) return cmd_census(census_cfg);
    if (*col) return cmd_collide(collide, collide_seed);
    if (*grad) return cmd_gradcheck(tolerance);
  } catch (const altup::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const altup::DivergenceError& e) {
    std::cerr << "diverged at step " << e.step() << ": " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kOk;
}
