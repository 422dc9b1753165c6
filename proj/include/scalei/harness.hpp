#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "assumption_audit.hpp"
#include "change_analysis.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "random.hpp"
#include "scale_i.hpp"
#include "scm.hpp"
#include "score_oracle.hpp"

namespace scalei {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class GraphKind { chain, diamond, triangle, random };

inline const char* to_string(GraphKind g) {
  switch (g) {
    case GraphKind::chain: return "chain";
    case GraphKind::diamond: return "diamond";
    case GraphKind::triangle: return "triangle";
    case GraphKind::random: return "random";
  }
  return "?";
}

/// One experiment: every trial draws its graph (when random), model, mixing,
/// environment layout and samples from (seed, trial).
struct ExperimentConfig {
  // [graph]; n_max > n draws n uniformly per trial (random graphs only)
  GraphKind graph = GraphKind::chain;
  int n = 3;
  int n_max = 0;
  double edge_prob = 0.5;
  std::uint64_t graph_seed = 0;  // 0: a fresh graph per trial
  // [model]
  MechanismKind mechanism = MechanismKind::quadratic;
  Coupling coupling = Coupling::additive;
  InterventionType intervention = InterventionType::soft;
  ScmOptions scm_options;
  // [observation]; d_max > d draws d uniformly per trial, d = 0 means d = n
  int d = 0;
  int d_max = 0;
  // [recovery]
  RecoveryConfig recovery;
  bool control_variates = true;
  // [experiment]
  int samples = 20000;
  int trials = 1;
  std::uint64_t seed = 1;
  std::string output_dir = "scalei_out";
  int threads = 0;  // 0: SCALEI_THREADS or hardware concurrency

  void validate() const {
    if (graph == GraphKind::diamond && n != 4) throw ConfigError("graph.n must be 4 for the diamond");
    if (graph == GraphKind::triangle && n != 3) throw ConfigError("graph.n must be 3 for the triangle");
    if (n < 1) throw ConfigError("graph.n must be positive");
    if (n_max != 0 && (n_max < n || graph != GraphKind::random))
      throw ConfigError("graph.n_max needs a random graph and n_max >= n");
    if (!(edge_prob >= 0.0 && edge_prob <= 1.0)) throw ConfigError("graph.edge_prob must lie in [0, 1]");
    if (d != 0 && d < std::max(n, n_max)) throw ConfigError("observation.d must be at least n");
    if (d_max != 0 && d_max < std::max(d, n)) throw ConfigError("observation.d_max must be at least d");
    if (samples < 1000) throw ConfigError("experiment.samples must be at least 1000");
    if (trials < 1) throw ConfigError("experiment.trials must be at least 1");
    if (threads < 0) throw ConfigError("experiment.threads must be nonnegative");
    if (scm_options.noise_scale <= 0.0) throw ConfigError("model.noise_scale must be positive");
    try {
      recovery.equivalence.validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (recovery.rank_tol <= 0.0) throw ConfigError("recovery.rank_tol must be positive");
    if (recovery.independence_threshold <= 0.0)
      throw ConfigError("recovery.independence_threshold must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

inline void apply_key(ExperimentConfig& c, const std::string& key, const std::string& v) {
  auto num = [&](auto& field) { field = parse_number<std::decay_t<decltype(field)>>(key, v); };
  try {
    if (key == "graph.kind") {
      c.graph = parse_enum(v, {GraphKind::chain, GraphKind::diamond, GraphKind::triangle, GraphKind::random},
                           "graph kind");
    } else if (key == "graph.n") num(c.n);
    else if (key == "graph.n_max") num(c.n_max);
    else if (key == "graph.edge_prob") num(c.edge_prob);
    else if (key == "graph.seed") num(c.graph_seed);
    else if (key == "model.mechanism") c.mechanism = parse_mechanism_kind(v);
    else if (key == "model.coupling") c.coupling = parse_coupling(v);
    else if (key == "model.intervention") c.intervention = parse_intervention(v);
    else if (key == "model.noise") c.scm_options.noise_family = parse_noise_family(v);
    else if (key == "model.noise_scale") num(c.scm_options.noise_scale);
    else if (key == "model.soft_variant") c.scm_options.soft_variant = parse_soft_variant(v);
    else if (key == "model.soft_noise_factor") num(c.scm_options.soft_noise_factor);
    else if (key == "model.hard_shift") num(c.scm_options.hard_shift);
    else if (key == "model.hard_noise_factor") num(c.scm_options.hard_noise_factor);
    else if (key == "observation.d") num(c.d);
    else if (key == "observation.d_max") num(c.d_max);
    else if (key == "recovery.tol") num(c.recovery.equivalence.tol);
    else if (key == "recovery.quantile") num(c.recovery.equivalence.quantile);
    else if (key == "recovery.min_samples") num(c.recovery.equivalence.min_samples);
    else if (key == "recovery.rank_tol") num(c.recovery.rank_tol);
    else if (key == "recovery.independence_threshold") num(c.recovery.independence_threshold);
    else if (key == "recovery.independence_samples") num(c.recovery.independence_samples);
    else if (key == "recovery.control_variates") c.control_variates = parse_bool(key, v);
    else if (key == "experiment.samples") num(c.samples);
    else if (key == "experiment.trials") num(c.trials);
    else if (key == "experiment.seed") num(c.seed);
    else if (key == "experiment.output_dir") c.output_dir = v;
    else if (key == "experiment.threads") num(c.threads);
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const DomainError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace detail

/// Flat `key = value` lines grouped under `[section]` headers; `#` starts a
/// comment. Keys are addressed as section.key.
inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    detail::apply_key(c, section.empty() ? key : section + "." + key, value);
  }
  c.validate();
  return c;
}

/// JSON form: {"graph": {"kind": "chain", ...}, "model": {...}, ...}.
inline ExperimentConfig parse_config_json(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  for (auto s = j.begin(); s != j.end(); ++s) {
    if (!s.value().is_object()) throw ConfigError("config section '" + s.key() + "' must be an object");
    for (auto k = s.value().begin(); k != s.value().end(); ++k) {
      const auto& v = k.value();
      std::string text;
      if (v.is_string()) text = v.get<std::string>();
      else if (v.is_boolean()) text = v.get<bool>() ? "true" : "false";
      else if (v.is_number_unsigned()) text = std::to_string(v.get<std::uint64_t>());
      else if (v.is_number_integer()) text = std::to_string(v.get<std::int64_t>());
      else if (v.is_number()) text = format_double(v.get<double>());
      else throw ConfigError("config value " + s.key() + "." + k.key() + " must be a scalar");
      detail::apply_key(c, s.key() + "." + k.key(), text);
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config_json(j);
  }
  return parse_config_text(text);
}

inline json to_json(const ExperimentConfig& c) {
  return json{{"graph", {{"kind", to_string(c.graph)}, {"n", c.n}, {"n_max", c.n_max},
                         {"edge_prob", c.edge_prob}, {"seed", c.graph_seed}}},
              {"model", {{"mechanism", to_string(c.mechanism)}, {"coupling", to_string(c.coupling)},
                         {"intervention", to_string(c.intervention)},
                         {"noise", to_string(c.scm_options.noise_family)},
                         {"noise_scale", c.scm_options.noise_scale},
                         {"soft_variant", to_string(c.scm_options.soft_variant)},
                         {"soft_noise_factor", c.scm_options.soft_noise_factor},
                         {"hard_shift", c.scm_options.hard_shift},
                         {"hard_noise_factor", c.scm_options.hard_noise_factor}}},
              {"observation", {{"d", c.d}, {"d_max", c.d_max}}},
              {"recovery", {{"tol", c.recovery.equivalence.tol},
                            {"quantile", c.recovery.equivalence.quantile},
                            {"min_samples", c.recovery.equivalence.min_samples},
                            {"rank_tol", c.recovery.rank_tol},
                            {"independence_threshold", c.recovery.independence_threshold},
                            {"independence_samples", c.recovery.independence_samples},
                            {"control_variates", c.control_variates}}},
              {"experiment", {{"samples", c.samples}, {"trials", c.trials}, {"seed", c.seed},
                              {"output_dir", c.output_dir}, {"threads", c.threads}}}};
}

// ---- trials ----------------------------------------------------------------

enum class TrialStatus { success, identifiability_failure, refinement_failure };

inline const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::success: return "success";
    case TrialStatus::identifiability_failure: return "identifiability_failure";
    case TrialStatus::refinement_failure: return "refinement_failure";
  }
  return "?";
}

/// Everything drawn for one trial before recovery runs.
struct TrialSetup {
  Dag dag;
  Scm scm;
  MixingMap mixing;
  EnvironmentSet envs;
  std::uint64_t sample_seed = 0;
  std::uint64_t audit_seed = 0;
};

inline TrialSetup make_trial_setup(const ExperimentConfig& cfg, int trial) {
  const std::uint64_t root = cfg.seed;
  const auto t = static_cast<std::uint64_t>(trial);
  Rng dims(derive_seed(root, {t, 0}));
  TrialSetup s;
  switch (cfg.graph) {
    case GraphKind::chain: s.dag = Dag::chain(cfg.n); break;
    case GraphKind::diamond: s.dag = Dag::diamond(); break;
    case GraphKind::triangle: s.dag = Dag::triangle(); break;
    case GraphKind::random: {
      int n = cfg.n;
      if (cfg.n_max > cfg.n) n = std::uniform_int_distribution<int>(cfg.n, cfg.n_max)(dims);
      const std::uint64_t gs = cfg.graph_seed ? cfg.graph_seed : derive_seed(root, {t, stream::graph});
      s.dag = Dag::random(n, cfg.edge_prob, gs);
      break;
    }
  }
  const int n = s.dag.size();
  int d = cfg.d ? cfg.d : n;
  if (cfg.d_max > d) d = std::uniform_int_distribution<int>(d, cfg.d_max)(dims);
  s.scm = random_scm(s.dag, cfg.mechanism, cfg.coupling, cfg.intervention,
                     derive_seed(root, {t, stream::mechanism}), cfg.scm_options);
  s.mixing = random_mixing(n, d, derive_seed(root, {t, stream::mixing}));
  s.envs = EnvironmentSet::shuffled(n, derive_seed(root, {t, stream::environments}));
  s.sample_seed = derive_seed(root, {t, stream::samples});
  s.audit_seed = derive_seed(root, {t, stream::audit});
  return s;
}

struct StageTimings {
  double setup_ms = 0, audit_ms = 0, sampling_ms = 0, recovery_ms = 0, metrics_ms = 0;
};

struct TrialResult {
  int trial = 0;
  TrialStatus status = TrialStatus::identifiability_failure;
  std::string message;
  Dag dag;
  int d = 0;
  EnvironmentSet envs;
  std::string scm_digest;
  AuditReport audit;
  std::optional<RecoveryReport> recovery;
  std::optional<ConsistencyScore> score;
  StageTimings timings;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Scores the estimate against the truth: scaling consistency for hard
/// interventions, mixing consistency for soft ones, plus structural recovery
/// under the matched order.
inline ConsistencyScore score_recovery(const DecoderEstimate& est, const MatrixXd& z, const MatrixXd& x,
                                       const Dag& dag, InterventionType type) {
  const MatrixXd zhat = estimate_latents(est, x);
  ConsistencyScore sc = type == InterventionType::hard
                            ? scaling_consistency(z, zhat, dag)
                            : mixing_consistency(z, zhat, dag, surround_map(dag));
  sc.dag_exact = dag_equal_up_to_order(dag, est.dag_hat, sc.matched_order);
  const int n = dag.size();
  std::vector<NodeSet> relabeled(n);
  for (int k = 0; k < n; ++k)
    for (int j : est.dag_hat.parents(k)) relabeled[sc.matched_order.pi[k]].push_back(sc.matched_order.pi[j]);
  try {
    sc.shd = shd(dag, Dag(relabeled));
  } catch (const StructuralError&) {
    // A relabeling that is not a bijection cannot happen for a valid order.
    sc.shd = -1;
  }
  return sc;
}

/// Recovery on one dataset with oracle scores. Throws the recovery errors.
inline RecoveryReport recover_dataset(const ScoreOracle& oracle, const Dataset& ds, InterventionType type,
                                      const RecoveryConfig& cfg, bool control_variates,
                                      const MixingMap* truth, const Dag* true_dag) {
  const int n = ds.envs.count() - 1;
  const auto scores = oracle.all_environment_scores(ds.X[0]);
  const MatrixXd image = image_basis(ds.X[0], n, cfg.rank_tol);
  DecoderEstimate est = soft_recover(scores, image, cfg);
  std::vector<UnmixingCoefficient> coeffs;
  bool refined = false;
  if (type == InterventionType::hard) {
    std::vector<MatrixXd> own;
    if (control_variates)
      for (int m = 0; m <= n; ++m) own.push_back(oracle.score_batch(ds.X[m], m));
    auto hr = hard_refine(est, ds.X, own, scores, cfg);
    est = std::move(hr.decoder);
    coeffs = std::move(hr.coefficients);
    refined = true;
  }
  RecoveryReport rep;
  if (truth && true_dag) {
    rep = analyze_against_truth(est, *truth, *true_dag);
  } else {
    rep.decoder = est;
    rep.subspace_ranks = est.subspace_ranks;
  }
  rep.hard_refined = refined;
  rep.unmixing_coeffs = std::move(coeffs);
  return rep;
}

/// Full pipeline for one trial; recovery failures land in the status.
inline TrialResult run_trial(const ExperimentConfig& cfg, int trial) {
  TrialResult r;
  r.trial = trial;
  auto t0 = std::chrono::steady_clock::now();
  const TrialSetup s = make_trial_setup(cfg, trial);
  r.dag = s.dag;
  r.d = s.mixing.observed_dim();
  r.envs = s.envs;
  r.scm_digest = scm_digest(s.scm);
  r.timings.setup_ms = detail::ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  r.audit = audit_model(s.scm, s.envs, s.audit_seed);
  r.timings.audit_ms = detail::ms_since(t0);

  t0 = std::chrono::steady_clock::now();
  const Dataset ds = generate_dataset(s.scm, s.mixing, s.envs, cfg.samples, s.sample_seed);
  r.timings.sampling_ms = detail::ms_since(t0);

  const ScoreOracle oracle(s.scm, s.mixing, s.envs);
  t0 = std::chrono::steady_clock::now();
  try {
    r.recovery = recover_dataset(oracle, ds, cfg.intervention, cfg.recovery, cfg.control_variates, &s.mixing, &s.dag);
    r.timings.recovery_ms = detail::ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    r.score = score_recovery(r.recovery->decoder, ds.Z[0], ds.X[0], s.dag, cfg.intervention);
    r.timings.metrics_ms = detail::ms_since(t0);
    r.status = TrialStatus::success;
  } catch (const RefinementFailure& e) {
    r.status = TrialStatus::refinement_failure;
    r.message = e.what();
  } catch (const IdentifiabilityFailure& e) {
    r.status = TrialStatus::identifiability_failure;
    r.message = e.what();
  } catch (const DomainError& e) {
    // Rank-deficient data and similar degeneracies also block identification.
    r.status = TrialStatus::identifiability_failure;
    r.message = e.what();
  }
  return r;
}

/// Trial JSON without timings so reruns are byte-identical.
inline json to_json(const TrialResult& r) {
  json j{{"trial", r.trial},
         {"status", to_string(r.status)},
         {"message", r.message},
         {"n", r.dag.size()},
         {"d", r.d},
         {"dag", to_json(r.dag)},
         {"targets", to_json(r.envs)},
         {"scm_digest", r.scm_digest},
         {"audit", to_json(r.audit)}};
  if (r.recovery) j["recovery"] = to_json(*r.recovery);
  if (r.score) j["score"] = to_json(*r.score);
  return j;
}

inline std::string results_csv_header() { return "trial,status,dag_exact,shd,min_corr,mixing_residual,order\n"; }

inline std::string results_csv_row(const TrialResult& r) {
  std::string row = std::to_string(r.trial) + "," + to_string(r.status) + ",";
  if (r.score) {
    row += std::string(r.score->dag_exact ? "true" : "false") + "," + std::to_string(r.score->shd) + "," +
           format_double(r.score->min_corr) + "," + format_double(r.score->mixing_residual) + "," +
           format_order(r.score->matched_order);
  } else {
    row += ",,,,";
  }
  return row + "\n";
}

struct BatchSummary {
  int trials = 0;
  std::map<std::string, int> status_counts;
  double success_rate = 0.0;
  double dag_exact_rate = 0.0;
  double consistency_pass_rate = 0.0;
  double mean_min_corr = 0.0;
  double mean_mixing_residual = 0.0;
  double mean_shd = 0.0;
};

inline BatchSummary summarize(const std::vector<TrialResult>& results) {
  BatchSummary s;
  s.trials = static_cast<int>(results.size());
  for (auto st : {TrialStatus::success, TrialStatus::identifiability_failure, TrialStatus::refinement_failure})
    s.status_counts[to_string(st)] = 0;
  int scored = 0;
  int exact = 0, passes = 0;
  for (const auto& r : results) {
    ++s.status_counts[to_string(r.status)];
    if (!r.score) continue;
    ++scored;
    exact += r.score->dag_exact;
    passes += r.score->passes();
    s.mean_min_corr += r.score->min_corr;
    s.mean_mixing_residual += r.score->mixing_residual;
    s.mean_shd += r.score->shd;
  }
  if (s.trials) {
    s.success_rate = static_cast<double>(s.status_counts["success"]) / s.trials;
    s.dag_exact_rate = static_cast<double>(exact) / s.trials;
    s.consistency_pass_rate = static_cast<double>(passes) / s.trials;
  }
  if (scored) {
    s.mean_min_corr /= scored;
    s.mean_mixing_residual /= scored;
    s.mean_shd /= scored;
  }
  return s;
}

inline json to_json(const BatchSummary& s) {
  return json{{"trials", s.trials},
              {"status_counts", s.status_counts},
              {"success_rate", s.success_rate},
              {"dag_exact_rate", s.dag_exact_rate},
              {"consistency_pass_rate", s.consistency_pass_rate},
              {"mean_min_corr", s.mean_min_corr},
              {"mean_mixing_residual", s.mean_mixing_residual},
              {"mean_shd", s.mean_shd}};
}

inline int worker_count(const ExperimentConfig& cfg) {
  int w = cfg.threads;
  if (w == 0) {
    if (const char* env = std::getenv("SCALEI_THREADS")) w = std::atoi(env);
  }
  if (w <= 0) w = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::min(w, cfg.trials);
}

struct BatchResult {
  std::vector<TrialResult> trials;
  BatchSummary summary;
};

/// Runs all trials on a bounded pool. Each trial writes its own JSON;
/// results.csv, timings.csv and summary.json are written once all finish.
/// Pass an empty output_dir to skip files.
inline BatchResult run_batch(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const bool write = !cfg.output_dir.empty();
  const fs::path out = cfg.output_dir;
  if (write) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  }
  BatchResult batch;
  batch.trials.resize(static_cast<std::size_t>(cfg.trials));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::string io_error;
  auto worker = [&] {
    for (int t = next++; t < cfg.trials; t = next++) {
      TrialResult r = run_trial(cfg, t);
      if (write) {
        try {
          write_json(out / ("trial_" + std::to_string(t) + ".json"), to_json(r));
        } catch (const IoError& e) {
          std::lock_guard lock(err_mu);
          if (io_error.empty()) io_error = e.what();
        }
      }
      batch.trials[static_cast<std::size_t>(t)] = std::move(r);
    }
  };
  const int workers = worker_count(cfg);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (!io_error.empty()) throw IoError(io_error);

  batch.summary = summarize(batch.trials);
  if (write) {
    std::string csv = results_csv_header();
    std::string timing = "trial,setup_ms,audit_ms,sampling_ms,recovery_ms,metrics_ms\n";
    for (const auto& r : batch.trials) {
      csv += results_csv_row(r);
      const auto& tm = r.timings;
      timing += std::to_string(r.trial) + "," + format_double(tm.setup_ms) + "," + format_double(tm.audit_ms) +
                "," + format_double(tm.sampling_ms) + "," + format_double(tm.recovery_ms) + "," +
                format_double(tm.metrics_ms) + "\n";
    }
    write_text(out / "results.csv", csv);
    write_text(out / "timings.csv", timing);
    json summary = to_json(batch.summary);
    summary["config"] = to_json(cfg);
    write_json(out / "summary.json", summary);
  }
  return batch;
}

}  // namespace scalei
