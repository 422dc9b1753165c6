#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "scalei/harness.hpp"

namespace fs = std::filesystem;
using namespace scalei;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitStrict = 3;

int cmd_simulate(const std::string& config, int trial, const std::string& out, bool scores) {
  const ExperimentConfig cfg = load_config(config);
  const TrialSetup s = make_trial_setup(cfg, trial);
  const Dataset ds = generate_dataset(s.scm, s.mixing, s.envs, cfg.samples, s.sample_seed);
  const ScoreOracle oracle(s.scm, s.mixing, s.envs);
  json extra{{"trial", trial}, {"config", to_json(cfg)}};
  save_dataset(out, s.scm, s.mixing, ds, extra, scores ? &oracle : nullptr);
  std::cout << "wrote " << ds.envs.count() << " environments x " << cfg.samples << " samples to " << out << "\n";
  return kExitOk;
}

void print_audit_table(const AuditReport& rep) {
  std::printf("coverage: %s\n", rep.coverage_ok ? "ok" : "FAIL");
  std::printf("%-5s %-11s %-9s %-12s %-10s %-8s\n", "node", "regularity", "fraction", "vmatrix", "nn_rank",
              "verdict");
  for (std::size_t i = 0; i < rep.nodes.size(); ++i) {
    const auto& a = rep.nodes[i];
    const std::string vm = a.vmatrix.verdict == Verdict::not_applicable
                               ? "n/a"
                               : std::string(to_string(a.vmatrix.verdict)) + " " + std::to_string(a.vmatrix.rank) +
                                     "/" + std::to_string(a.vmatrix.required);
    const std::string nn = a.nn.verdict == Verdict::not_applicable
                               ? "n/a"
                               : std::string(to_string(a.nn.verdict)) + " " + std::to_string(a.nn.rank) + "/" +
                                     std::to_string(a.nn.required);
    std::printf("%-5zu %-11s %-9.4f %-12s %-10s %-8s\n", i + 1, to_string(a.regularity.verdict),
                a.regularity.fraction, vm.c_str(), nn.c_str(), to_string(a.verdict));
  }
  std::printf("(numerical surrogates: finite differences and random probe points)\n");
}

int cmd_audit(const std::string& config, int trial, bool as_json) {
  const ExperimentConfig cfg = load_config(config);
  const TrialSetup s = make_trial_setup(cfg, trial);
  const AuditReport rep = audit_model(s.scm, s.envs, s.audit_seed);
  if (as_json) {
    std::cout << to_json(rep).dump(2) << "\n";
  } else {
    std::cout << "graph:\n" << format_dag(s.dag);
    print_audit_table(rep);
  }
  return kExitOk;
}

int cmd_recover(const std::string& data, bool truth, const std::string& out, bool control_variates,
                const RecoveryConfig& rcfg, bool strict) {
  const LoadedDataset ld = load_dataset(data);
  const ScoreOracle oracle(ld.scm, ld.mixing, ld.data.envs);
  json result;
  int code = kExitOk;
  try {
    RecoveryReport rep = recover_dataset(oracle, ld.data, ld.scm.intervention_type, rcfg, control_variates,
                                         truth ? &ld.mixing : nullptr, truth ? &ld.scm.dag : nullptr);
    result = json{{"status", "success"}, {"recovery", to_json(rep)}};
    if (truth) {
      const auto sc = score_recovery(rep.decoder, ld.data.Z[0], ld.data.X[0], ld.scm.dag,
                                     ld.scm.intervention_type);
      result["score"] = to_json(sc);
    }
  } catch (const RefinementFailure& e) {
    result = json{{"status", "refinement_failure"}, {"message", e.what()}};
    code = strict ? kExitStrict : kExitOk;
  } catch (const IdentifiabilityFailure& e) {
    result = json{{"status", "identifiability_failure"}, {"message", e.what()},
                  {"environments", e.environments()}};
    code = strict ? kExitStrict : kExitOk;
  }
  const std::string text = result.dump(2) + "\n";
  if (out.empty()) std::cout << text;
  else write_text(out, text);
  return code;
}

int cmd_experiment(const std::string& config, const std::string& out, bool strict, int threads) {
  ExperimentConfig cfg = load_config(config);
  if (!out.empty()) cfg.output_dir = out;
  if (threads > 0) cfg.threads = threads;
  const BatchResult b = run_batch(cfg);
  const auto& s = b.summary;
  std::printf("trials %d  success %d  identifiability_failure %d  refinement_failure %d\n", s.trials,
              s.status_counts.at("success"), s.status_counts.at("identifiability_failure"),
              s.status_counts.at("refinement_failure"));
  std::printf("dag_exact_rate %.4f  consistency_pass_rate %.4f  mean_min_corr %.6f  mean_mixing_residual %.3g\n",
              s.dag_exact_rate, s.consistency_pass_rate, s.mean_min_corr, s.mean_mixing_residual);
  std::printf("outputs in %s\n", cfg.output_dir.c_str());
  if (strict && s.status_counts.at("success") != s.trials) return kExitStrict;
  return kExitOk;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& tsv) {
  std::string tsv_text = "run\ttrial\tstatus\tdag_exact\tshd\tmin_corr\tmixing_residual\torder\n";
  std::printf("%-32s %6s %8s %9s %9s %12s %14s\n", "run", "trials", "success", "dag_exact", "pass",
              "mean_corr", "mean_residual");
  for (const auto& in : inputs) {
    const fs::path csv = fs::is_directory(in) ? fs::path(in) / "results.csv" : fs::path(in);
    std::istringstream lines(read_text(csv));
    std::string line;
    std::getline(lines, line);
    if (line != "trial,status,dag_exact,shd,min_corr,mixing_residual,order")
      throw IoError(csv.string() + ": unexpected header");
    int trials = 0, success = 0, exact = 0, pass = 0, scored = 0;
    double corr = 0.0, resid = 0.0;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      auto c = split_csv_line(line);
      if (c.size() != 7) throw IoError(csv.string() + ": malformed row '" + line + "'");
      ++trials;
      if (c[1] == "success") ++success;
      if (c[2] == "true") ++exact;
      if (!c[4].empty()) {
        const double mc = std::stod(c[4]), mr = std::stod(c[5]);
        ++scored;
        corr += mc;
        resid += mr;
        if (mc >= kCorrelationPass && mr <= kResidualPass) ++pass;
      }
      tsv_text += in + "\t" + c[0] + "\t" + c[1] + "\t" + c[2] + "\t" + c[3] + "\t" + c[4] + "\t" + c[5] + "\t" +
                  c[6] + "\n";
    }
    const double tr = trials ? trials : 1;
    std::printf("%-32s %6d %8.3f %9.3f %9.3f %12.6f %14.3g\n", in.c_str(), trials, success / tr, exact / tr,
                pass / tr, scored ? corr / scored : 0.0, scored ? resid / scored : 0.0);
  }
  if (!tsv.empty()) write_text(tsv, tsv_text);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-based latent causal recovery from interventions"};
  app.require_subcommand(1);

  std::string config, out, data, tsv;
  int trial = 0, threads = 0;
  bool scores = false, as_json = false, truth = false, strict = false, no_cv = false;
  std::vector<std::string> inputs;
  RecoveryConfig rcfg;

  auto* sim = app.add_subcommand("simulate", "Write one trial's dataset (meta.json, Z_m/X_m[/S_m].csv)");
  sim->add_option("--config", config, "Experiment config file")->required()->check(CLI::ExistingFile);
  sim->add_option("--trial", trial, "Trial index whose draws to use")->check(CLI::NonNegativeNumber);
  sim->add_option("--out", out, "Output directory")->required();
  sim->add_flag("--scores", scores, "Also write oracle scores S_<m>.csv");

  auto* aud = app.add_subcommand("audit", "Per-node assumption audit for one trial's model");
  aud->add_option("--config", config, "Experiment config file")->required()->check(CLI::ExistingFile);
  aud->add_option("--trial", trial, "Trial index")->check(CLI::NonNegativeNumber);
  aud->add_flag("--json", as_json, "Print JSON instead of a table");

  auto* rec = app.add_subcommand("recover", "Run recovery on a dataset directory with oracle scores");
  rec->add_option("--data", data, "Dataset directory written by simulate")->required()->check(CLI::ExistingDirectory);
  rec->add_flag("--truth", truth, "Add ground-truth diagnostics (H, B, C, consistency)");
  rec->add_option("--out", out, "Write the JSON report here instead of stdout");
  rec->add_option("--tol", rcfg.equivalence.tol, "Equivalence tolerance");
  rec->add_option("--quantile", rcfg.equivalence.quantile, "Equivalence quantile");
  rec->add_option("--rank-tol", rcfg.rank_tol, "Relative singular-value threshold");
  rec->add_option("--independence-threshold", rcfg.independence_threshold, "Distance-correlation threshold");
  rec->add_flag("--no-control-variates", no_cv, "Plain least squares in the hard unmixing step");
  rec->add_flag("--strict", strict, "Exit 3 if recovery fails");

  auto* exp = app.add_subcommand("experiment", "Run a batch of seeded trials from a config file");
  exp->add_option("--config", config, "Experiment config file")->required()->check(CLI::ExistingFile);
  exp->add_option("--out", out, "Override experiment.output_dir");
  exp->add_option("--threads", threads, "Worker threads (overrides SCALEI_THREADS)")->check(CLI::PositiveNumber);
  exp->add_flag("--strict", strict, "Exit 3 if any trial fails");

  auto* rep = app.add_subcommand("report", "Summarize results.csv files and emit plot-ready TSV");
  rep->add_option("inputs", inputs, "Experiment directories or results.csv files")->required();
  rep->add_option("--tsv", tsv, "Write per-trial TSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*sim) return cmd_simulate(config, trial, out, scores);
    if (*aud) return cmd_audit(config, trial, as_json);
    if (*rec) {
      try {
        rcfg.equivalence.validate();
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
      return cmd_recover(data, truth, out, !no_cv, rcfg, strict);
    }
    if (*exp) return cmd_experiment(config, out, strict, threads);
    if (*rep) return cmd_report(inputs, tsv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
