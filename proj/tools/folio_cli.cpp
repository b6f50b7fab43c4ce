#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "folio/pipeline.hpp"
#include "folio/synthetic.hpp"

namespace fs = std::filesystem;
using namespace folio;

namespace {

struct Flags {
  std::string config_path;
  std::string out;
  std::string checkpoint;
  std::optional<std::size_t> epochs, seed, hidden, steps;
  std::optional<double> lr, return_weight;
  std::vector<double> sigma;
};

RunConfig resolve(const std::string& command, const Flags& f) {
  RunConfig c = load_run_config(f.config_path);
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.seed) c.train.seed = *f.seed;
  if (f.hidden) c.train.model.hidden = *f.hidden;
  if (f.lr) c.train.lr = *f.lr;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (!f.sigma.empty()) c.sigma_g = f.sigma;
  if (f.steps) c.improve.steps = *f.steps;
  if (f.return_weight) c.improve.return_weight = *f.return_weight;
  validate(c);
  if ((command == "risk" || command == "improve") && c.sigma_g.empty())
    throw ConfigError("no target risk given (use --sigma or sigma_g)");
  return c;
}

fs::path run_directory(const std::string& command, const RunConfig& c, const std::string& out) {
  fs::path dir;
  if (!out.empty()) {
    dir = out;
  } else {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    dir = fs::path(c.output_dir) / (command + "-" + stamp);
    for (int k = 1; fs::exists(dir); ++k) dir = fs::path(c.output_dir) / (command + "-" + stamp + "-" + std::to_string(k));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& c, nlohmann::json extra = {}) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = run_config_to_json(c);
  m["config_hash"] = config_hash(c);
  m["seed"] = c.train.seed;
  m["versions"] = {{"folio", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"checkpoint_format", kCheckpointFormat},
                   {"panel_format", kPanelFormat}};
  if (!extra.is_null()) m["outputs"] = extra;
  detail::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

Checkpoint require_checkpoint(const RunConfig& c) {
  if (!c.checkpoint) throw ConfigError("no checkpoint given (use --checkpoint or the 'checkpoint' key)");
  return load_checkpoint(*c.checkpoint);
}

std::string sigma_dir(std::size_t k) { return "sigma_" + std::to_string(k); }

/// Runs `job(k)` for every index on its own thread and rethrows the first failure.
template <class Job>
void fan_out(std::size_t count, Job job) {
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t k = 0; k < count; ++k)
    pool.emplace_back([&, k] {
      try {
        job(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

int cmd_ingest(const std::string& csv_path, const std::string& out, std::size_t min_obs) {
  LoadStats st;
  const MarketPanel p = load_ohlcv(csv_path, {}, min_obs, &st);
  save_panel(p, out);
  std::cout << "ingested " << st.rows << " rows: " << p.num_assets() << " assets x " << p.num_dates()
            << " dates (" << st.dropped_dates << " dates dropped) -> " << out << "\n";
  return 0;
}

int cmd_synth(const std::string& out, const SyntheticSpec& spec) {
  write_ohlcv_csv(synthetic_market(spec), out);
  std::cout << "wrote " << spec.drift.size() << " assets x " << spec.days << " days -> " << out << "\n";
  return 0;
}

int cmd_train(const Flags& f) {
  const RunConfig c = resolve("train", f);
  const MarketPanel panel = load_market(c);
  const TrainingRun run = run_training(c, panel);
  const fs::path dir = run_directory("train", c, f.out);
  save_checkpoint(run.checkpoint, (dir / "checkpoint.json").string());
  write_train_log(run.result.log, (dir / "train_log.csv").string());
  write_manifest(dir, "train", c,
                 {{"checkpoint", "checkpoint.json"},
                  {"train_log", "train_log.csv"},
                  {"selected_epoch", run.result.selected_epoch},
                  {"train_dates", run.train_dates},
                  {"validation_dates", run.validation_dates},
                  {"diverged", run.result.diverged}});
  if (run.result.diverged) std::cerr << "warning: " << run.result.message << "\n";
  std::cout << "trained " << run.result.log.size() << " epochs on " << run.train_dates << " dates, selected epoch "
            << run.result.selected_epoch << " -> " << (dir / "checkpoint.json").string() << "\n";
  return 0;
}

int cmd_backtest(const Flags& f, const std::string& strategy) {
  const RunConfig c = resolve("backtest", f);
  const MarketPanel panel = load_market(c);
  PortfolioSeries p;
  Dataset ds;
  if (strategy == "model") {
    const Checkpoint ck = require_checkpoint(c);
    const Prediction pred = model_test_prediction(c, panel, ck, &ds);
    p.dates = pred.dates;
    p.weights = pred.weights;
  } else if (strategy == "market" || strategy == "mvm") {
    ds = test_dataset(c, panel, std::nullopt);
    p = strategy == "market" ? baseline_market(ds.num_assets(), ds.decision_dates)
                             : baseline_mvm(ds.cov, ds.decision_dates);
  } else {
    throw ConfigError("unknown strategy '" + strategy + "' (expected market, mvm or model)");
  }
  BacktestReport rep = run_backtest(p, ds.returns, c.train.cost, ds.calendar, ds.assets, c.periods_per_year);
  rep.config = {{"strategy", strategy}, {"cost", c.train.cost}, {"periods_per_year", c.periods_per_year}};
  const fs::path dir = run_directory("backtest-" + strategy, c, f.out);
  emit_report(rep, dir);
  write_manifest(dir, "backtest", c, {{"strategy", strategy}});
  for (const auto& w : rep.metrics.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << strategy << ": CW " << csv::number(rep.metrics.cw) << " ASR " << csv::number(rep.metrics.asr)
            << " MDD " << csv::number(rep.metrics.mdd) << " -> " << dir.string() << "\n";
  return 0;
}

/// Shared by `risk` and `improve`; with zero improvement steps both write the same files.
int cmd_risk_or_improve(const Flags& f, bool improving) {
  const std::string command = improving ? "improve" : "risk";
  const RunConfig c = resolve(command, f);
  const MarketPanel panel = load_market(c);
  const Checkpoint ck = require_checkpoint(c);
  Dataset ds;
  const Prediction pred = model_test_prediction(c, panel, ck, &ds);
  const std::vector<Eigen::VectorXd> bm = min_variance_series(ds, pred.dates);
  std::vector<Eigen::MatrixXd> sigma;
  for (std::size_t t : pred.dates) sigma.push_back(ds.cov.at(t));
  const fs::path dir = run_directory(command, c, f.out);

  std::vector<std::size_t> clamped(c.sigma_g.size(), 0);
  std::vector<std::string> warnings(c.sigma_g.size());
  fan_out(c.sigma_g.size(), [&](std::size_t k) {
    const double target = c.sigma_g[k];
    std::vector<RiskAdjustment> adj;
    const fs::path sub = dir / sigma_dir(k);
    std::filesystem::create_directories(sub);
    if (improving) {
      const ImproveResult ir =
          improve(pred.logits, bm, sigma, target, c.improve, c.improve.return_weight != 0.0 ? &pred.predicted : nullptr);
      adj = ir.adjustments;
      warnings[k] = ir.warning;
      std::string log = "step,gamma_sum,objective,max_risk_error\n";
      for (std::size_t s = 0; s < ir.gamma_sum_history.size(); ++s)
        log += std::to_string(s) + ',' + csv::number(ir.gamma_sum_history[s]) + ',' +
               csv::number(ir.objective_history[s]) + ',' + csv::number(ir.max_risk_error[s]) + '\n';
      detail::write_text(sub / "improve_log.csv", log);
    } else {
      for (std::size_t t = 0; t < pred.dates.size(); ++t)
        adj.push_back(adjust_risk(softmax_weights(pred.logits[t]), bm[t], sigma[t], target));
    }
    for (const auto& a : adj) clamped[k] += a.clamped;
    detail::write_text(sub / "risk.csv", risk_csv(ds, pred.dates, adj));
    PortfolioSeries p;
    p.dates = pred.dates;
    for (const auto& a : adj) p.weights.push_back(a.weights);
    BacktestReport rep = run_backtest(p, ds.returns, c.train.cost, ds.calendar, ds.assets, c.periods_per_year);
    rep.config = {{"strategy", "risk-controlled model"}, {"sigma_g", target}, {"cost", c.train.cost},
                  {"periods_per_year", c.periods_per_year}};
    emit_report(rep, sub);
  });

  nlohmann::json outputs = nlohmann::json::array();
  for (std::size_t k = 0; k < c.sigma_g.size(); ++k) {
    outputs.push_back({{"sigma_g", c.sigma_g[k]}, {"dir", sigma_dir(k)}, {"clamped_dates", clamped[k]}});
    if (!warnings[k].empty()) std::cerr << "warning: sigma_g " << csv::number(c.sigma_g[k]) << ": " << warnings[k] << "\n";
    std::cout << "sigma_g " << csv::number(c.sigma_g[k]) << ": " << clamped[k] << " of " << pred.dates.size()
              << " dates clamped -> " << (dir / sigma_dir(k)).string() << "\n";
  }
  write_manifest(dir, command, c, outputs);
  return 0;
}

int cmd_report(const std::string& run) {
  if (!fs::is_directory(run)) throw DataError("run directory " + run + " does not exist");
  std::vector<fs::path> found;
  for (const auto& e : fs::recursive_directory_iterator(run))
    if (e.is_regular_file() && e.path().filename() == "metrics.json") found.push_back(e.path());
  if (found.empty()) throw DataError("no metrics.json under " + run);
  std::sort(found.begin(), found.end());
  std::string table = "run,CW,APR,AVOL,ASR,MDD,ACR\n";
  for (const auto& path : found) {
    const Metrics m = metrics_from_json(read_json_file(path.string()));
    std::string rel = fs::relative(path.parent_path(), run).generic_string();
    table += csv::quote(rel) + ',' + csv::number(m.cw) + ',' + csv::number(m.apr) + ',' + csv::number(m.avol) + ',' +
             csv::number(m.asr) + ',' + csv::number(m.mdd) + ',' + csv::number(m.acr) + '\n';
  }
  detail::write_text(fs::path(run) / "summary.csv", table);
  std::cout << table;
  return 0;
}

void fail(const char* kind, const std::string& msg) {
  std::string line = msg;
  for (char& ch : line)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::cerr << "error[" << kind << "]: " << line << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"folio: risk-controlled portfolio learning"};
  app.require_subcommand(1);
  Flags f;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", f.config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "run directory (default: timestamped under output_dir)");
  };
  auto add_checkpoint = [&](CLI::App* sub) { sub->add_option("--checkpoint", f.checkpoint, "trained checkpoint"); };

  std::string csv_path, panel_out;
  std::size_t min_obs = 22;
  auto* ingest = app.add_subcommand("ingest", "load a long-format OHLCV CSV into an aligned panel");
  ingest->add_option("--csv", csv_path)->required();
  ingest->add_option("--out", panel_out)->required();
  ingest->add_option("--min-observations", min_obs, "drop assets with fewer dates");

  SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write a random-walk OHLCV CSV with per-asset drift");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--days", spec.days);
  synth->add_option("--drift", spec.drift, "per-asset mean return per period")->delimiter(',');
  synth->add_option("--noise", spec.noise);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--start", spec.start);

  auto* trn = app.add_subcommand("train", "train the model and write a checkpoint");
  add_config(trn);
  trn->add_option("--epochs", f.epochs);
  trn->add_option("--seed", f.seed);
  trn->add_option("--hidden", f.hidden);
  trn->add_option("--lr", f.lr);

  std::string strategy;
  auto* bt = app.add_subcommand("backtest", "backtest a strategy over the test period");
  add_config(bt);
  add_checkpoint(bt);
  bt->add_option("--strategy", strategy, "market, mvm or model")->required();

  auto* risk = app.add_subcommand("risk", "rescale model portfolios to target risk levels");
  add_config(risk);
  add_checkpoint(risk);
  risk->add_option("--sigma", f.sigma, "target risk (variance); repeatable");

  auto* imp = app.add_subcommand("improve", "improve model portfolios at fixed target risk");
  add_config(imp);
  add_checkpoint(imp);
  imp->add_option("--sigma", f.sigma, "target risk (variance); repeatable");
  imp->add_option("--steps", f.steps);
  imp->add_option("--improve-return-weight", f.return_weight);

  std::string run_dir;
  auto* rep = app.add_subcommand("report", "summarize the metrics of a run directory");
  rep->add_option("--run", run_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("config", e.what());
    return 2;
  }

  try {
    if (*ingest) return cmd_ingest(csv_path, panel_out, min_obs);
    if (*synth) return cmd_synth(synth_out, spec);
    if (*trn) return cmd_train(f);
    if (*bt) return cmd_backtest(f, strategy);
    if (*risk) return cmd_risk_or_improve(f, false);
    if (*imp) return cmd_risk_or_improve(f, true);
    if (*rep) return cmd_report(run_dir);
  } catch (const ConfigError& e) {
    fail("config", e.what());
    return 2;
  } catch (const DataError& e) {
    fail("data", e.what());
    return 3;
  } catch (const NumericalError& e) {
    fail("numerical", e.what());
    return 4;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 0;
}
