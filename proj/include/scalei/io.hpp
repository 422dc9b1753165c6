#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "assumption_audit.hpp"
#include "change_analysis.hpp"
#include "errors.hpp"
#include "graph.hpp"
#include "metrics.hpp"
#include "scale_i.hpp"
#include "scm.hpp"
#include "score_oracle.hpp"

namespace scalei {

using json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---- enum names ----------------------------------------------------------

inline const char* to_string(MechanismKind k) {
  switch (k) {
    case MechanismKind::linear: return "linear";
    case MechanismKind::quadratic: return "quadratic";
    case MechanismKind::two_layer_nn: return "two_layer_nn";
    case MechanismKind::generalized_linear: return "generalized_linear";
    case MechanismKind::constant: return "constant";
  }
  return "?";
}
inline const char* to_string(Coupling c) { return c == Coupling::additive ? "additive" : "multiplicative"; }
inline const char* to_string(InterventionType t) { return t == InterventionType::soft ? "soft" : "hard"; }
inline const char* to_string(NoiseFamily f) { return f == NoiseFamily::gaussian ? "gaussian" : "logistic"; }
inline const char* to_string(SoftVariant v) {
  switch (v) {
    case SoftVariant::both: return "both";
    case SoftVariant::mechanism_only: return "mechanism_only";
    case SoftVariant::noise_only: return "noise_only";
  }
  return "?";
}

template <class E>
E parse_enum(const std::string& s, std::initializer_list<E> values, const char* what) {
  for (E v : values)
    if (s == to_string(v)) return v;
  throw DomainError(std::string("unknown ") + what + " '" + s + "'");
}

inline MechanismKind parse_mechanism_kind(const std::string& s) {
  return parse_enum(s,
                    {MechanismKind::linear, MechanismKind::quadratic, MechanismKind::two_layer_nn,
                     MechanismKind::generalized_linear, MechanismKind::constant},
                    "mechanism kind");
}
inline Coupling parse_coupling(const std::string& s) {
  return parse_enum(s, {Coupling::additive, Coupling::multiplicative}, "coupling");
}
inline InterventionType parse_intervention(const std::string& s) {
  return parse_enum(s, {InterventionType::soft, InterventionType::hard}, "intervention type");
}
inline NoiseFamily parse_noise_family(const std::string& s) {
  return parse_enum(s, {NoiseFamily::gaussian, NoiseFamily::logistic}, "noise family");
}
inline SoftVariant parse_soft_variant(const std::string& s) {
  return parse_enum(s, {SoftVariant::both, SoftVariant::mechanism_only, SoftVariant::noise_only},
                    "soft variant");
}

// ---- matrices --------------------------------------------------------------

inline json matrix_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols) throw IoError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline json vector_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline VectorXd vector_from_json(const json& j) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

// 1-based labels in every serialized index.
inline json labels_json(const std::vector<int>& idx) {
  json a = json::array();
  for (int i : idx) a.push_back(i + 1);
  return a;
}

inline std::vector<int> labels_from_json(const json& j) {
  std::vector<int> out;
  for (const auto& v : j) out.push_back(v.get<int>() - 1);
  return out;
}

// ---- model pieces ---------------------------------------------------------

inline json to_json(const Dag& dag) {
  json parents = json::array();
  for (int i = 0; i < dag.size(); ++i) parents.push_back(labels_json(dag.parents(i)));
  return json{{"n", dag.size()}, {"parents", parents}, {"text", format_dag(dag)}};
}

inline Dag dag_from_json(const json& j) {
  std::vector<NodeSet> pa;
  for (const auto& p : j.at("parents")) pa.push_back(labels_from_json(p));
  if (static_cast<int>(pa.size()) != j.at("n").get<int>()) throw IoError("dag: n does not match parents");
  return Dag(std::move(pa));
}

inline json to_json(const Mechanism& m) {
  json j{{"kind", to_string(m.kind)}};
  switch (m.kind) {
    case MechanismKind::constant: j["constant"] = m.constant; break;
    case MechanismKind::linear:
      j["weights"] = vector_json(m.weights);
      j["bias"] = m.bias;
      break;
    case MechanismKind::quadratic: j["matrix"] = matrix_json(m.quad); break;
    case MechanismKind::two_layer_nn:
      j["layer"] = matrix_json(m.layer);
      j["output"] = vector_json(m.output);
      j["output_bias"] = m.output_bias;
      break;
    case MechanismKind::generalized_linear:
      j["weights"] = vector_json(m.weights);
      j["amplitude"] = m.scale;
      j["bias"] = m.bias;
      break;
  }
  return j;
}

inline Mechanism mechanism_from_json(const json& j) {
  switch (parse_mechanism_kind(j.at("kind").get<std::string>())) {
    case MechanismKind::constant: return Mechanism::make_constant(j.at("constant").get<double>());
    case MechanismKind::linear:
      return Mechanism::make_linear(vector_from_json(j.at("weights")), j.at("bias").get<double>());
    case MechanismKind::quadratic: return Mechanism::make_quadratic(matrix_from_json(j.at("matrix")));
    case MechanismKind::two_layer_nn:
      return Mechanism::make_two_layer_nn(matrix_from_json(j.at("layer")), vector_from_json(j.at("output")),
                                          j.at("output_bias").get<double>());
    case MechanismKind::generalized_linear:
      return Mechanism::make_generalized_linear(vector_from_json(j.at("weights")),
                                                j.at("amplitude").get<double>(), j.at("bias").get<double>());
  }
  throw IoError("unreachable mechanism kind");
}

inline json to_json(const NoiseLaw& h) { return json{{"family", to_string(h.family)}, {"scale", h.scale}}; }

inline NoiseLaw noise_from_json(const json& j) {
  return NoiseLaw{parse_noise_family(j.at("family").get<std::string>()), j.at("scale").get<double>()};
}

inline json to_json(const Scm& scm) {
  json nodes = json::array();
  for (int i = 0; i < scm.size(); ++i)
    nodes.push_back(json{{"node", i + 1},
                         {"observational", to_json(scm.obs_mech[i])},
                         {"interventional", to_json(scm.int_mech[i])},
                         {"observational_noise", to_json(scm.obs_noise[i])},
                         {"interventional_noise", to_json(scm.int_noise[i])}});
  return json{{"dag", to_json(scm.dag)},
              {"coupling", to_string(scm.coupling)},
              {"intervention_type", to_string(scm.intervention_type)},
              {"nodes", nodes}};
}

inline Scm scm_from_json(const json& j) {
  Scm scm;
  scm.dag = dag_from_json(j.at("dag"));
  scm.coupling = parse_coupling(j.at("coupling").get<std::string>());
  scm.intervention_type = parse_intervention(j.at("intervention_type").get<std::string>());
  for (const auto& node : j.at("nodes")) {
    scm.obs_mech.push_back(mechanism_from_json(node.at("observational")));
    scm.int_mech.push_back(mechanism_from_json(node.at("interventional")));
    scm.obs_noise.push_back(noise_from_json(node.at("observational_noise")));
    scm.int_noise.push_back(noise_from_json(node.at("interventional_noise")));
  }
  scm.validate();
  return scm;
}

inline json to_json(const EnvironmentSet& envs) {
  json t = json::array();
  for (const auto& s : envs.targets) t.push_back(labels_json(s));
  return t;
}

inline EnvironmentSet environments_from_json(const json& j) {
  EnvironmentSet e;
  for (const auto& s : j) e.targets.push_back(labels_from_json(s));
  return e;
}

/// FNV-1a over the compact JSON form of the model.
inline std::string scm_digest(const Scm& scm) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_json(scm).dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json to_json(const ChangeMatrix& d) { return d.rows(); }

inline std::string format_order(const CausalOrder& o) {
  std::string s;
  for (std::size_t k = 0; k < o.pi.size(); ++k) {
    if (k) s += ' ';
    s += std::to_string(o.pi[k] + 1);
  }
  return s;
}

// ---- reports --------------------------------------------------------------

inline json to_json(const AuditReport& rep) {
  json nodes = json::array();
  for (std::size_t i = 0; i < rep.nodes.size(); ++i) {
    const auto& a = rep.nodes[i];
    json r{{"node", static_cast<int>(i) + 1},
           {"regularity", to_string(a.regularity.verdict)},
           {"regularity_fraction", a.regularity.fraction},
           {"vmatrix", to_string(a.vmatrix.verdict)},
           {"vmatrix_rank", a.vmatrix.rank},
           {"vmatrix_required", a.vmatrix.required},
           {"nn_rank", to_string(a.nn.verdict)},
           {"nn_rank_value", a.nn.rank},
           {"nn_rank_required", a.nn.required},
           {"verdict", to_string(a.verdict)}};
    if (a.regularity.witness.size() > 0) r["regularity_witness"] = vector_json(a.regularity.witness);
    nodes.push_back(std::move(r));
  }
  return json{{"coverage_ok", rep.coverage_ok},
              {"note", "numerical surrogates: finite differences and random probe points"},
              {"nodes", nodes}};
}

inline json to_json(const DecoderEstimate& d) {
  return json{{"delta", to_json(d.delta)},
              {"K", to_json(d.K)},
              {"p2", labels_json(d.p2)},
              {"order", labels_json(d.order.pi)},
              {"dag_hat", to_json(d.dag_hat)},
              {"l0", l0(d.delta)},
              {"subspace_ranks", d.subspace_ranks},
              {"environment_of", d.environment_of},
              {"encoder", matrix_json(d.encoder)}};
}

inline json to_json(const std::vector<UnmixingCoefficient>& coeffs) {
  json a = json::array();
  for (const auto& c : coeffs)
    a.push_back(json{{"node", c.node + 1}, {"surrounding", c.surrounding + 1}, {"beta", c.beta},
                     {"dependence", c.dependence}});
  return a;
}

inline json to_json(const RecoveryReport& rep) {
  json j{{"decoder", to_json(rep.decoder)},
         {"hard_refined", rep.hard_refined},
         {"unmixing_coeffs", to_json(rep.unmixing_coeffs)},
         {"score_convention", "s_X = (T^+)^T s_Z(T^+ x), the representative inside image(T)"}};
  if (rep.h_matrix) {
    j["truth"] = json{{"H", matrix_json(*rep.h_matrix)},
                      {"p1", labels_json(rep.p1)},
                      {"matched_order", labels_json(rep.matched_order.pi)},
                      {"C", vector_json(rep.C.diagonal())},
                      {"B", matrix_json(rep.B)},
                      {"h_bar_mask_ok", rep.h_bar_mask_ok},
                      {"h_bar_inv_mask_ok", rep.h_bar_inv_mask_ok},
                      {"dag_matches", rep.dag_matches},
                      {"k_matches_truth", rep.k_matches_truth},
                      {"max_disallowed_mixing", rep.max_disallowed_mixing}};
  }
  return j;
}

inline json to_json(const ConsistencyScore& s) {
  return json{{"matched_order", labels_json(s.matched_order.pi)},
              {"per_node_corr", s.per_node_corr},
              {"min_corr", s.min_corr},
              {"mixing_residual", s.mixing_residual},
              {"dag_exact", s.dag_exact},
              {"shd", s.shd},
              {"passes", s.passes()}};
}

// ---- files ------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Comma-separated, one row per sample, 17 significant digits.
inline void write_csv(const std::filesystem::path& path, const MatrixXd& m) {
  std::string text;
  text.reserve(static_cast<std::size_t>(m.size()) * 24);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) text += ',';
      text += format_double(m(i, j));
    }
    text += '\n';
  }
  write_text(path, text);
}

inline MatrixXd read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<double> vals;
  Eigen::Index cols = -1, rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Eigen::Index c = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const auto next = line.find(',', pos);
      const std::string cell = line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw IoError(path.string() + ": bad number '" + cell + "' on row " + std::to_string(rows + 1));
      }
      ++c;
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (cols < 0) cols = c;
    if (c != cols) throw IoError(path.string() + ": ragged row " + std::to_string(rows + 1));
    ++rows;
  }
  MatrixXd m(rows, std::max<Eigen::Index>(cols, 0));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = vals[static_cast<std::size_t>(i * cols + j)];
  return m;
}

// ---- dataset directories ------------------------------------------------

/// Writes meta.json plus Z_<m>.csv and X_<m>.csv per environment; with an
/// oracle also S_<m>.csv (scores of environment m at the rows of X_<m>).
inline void save_dataset(const std::filesystem::path& dir, const Scm& scm, const MixingMap& map,
                         const Dataset& ds, const json& extra = json::object(),
                         const ScoreOracle* oracle = nullptr) {
  std::filesystem::create_directories(dir);
  json meta{{"n", scm.size()},
            {"d", map.observed_dim()},
            {"samples_per_env", ds.samples_per_env},
            {"environments", ds.envs.count()},
            {"seed", ds.seed},
            {"targets", to_json(ds.envs)},
            {"scm_digest", scm_digest(scm)},
            {"scm", to_json(scm)},
            {"T", matrix_json(map.T)},
            {"scores_written", oracle != nullptr}};
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  write_json(dir / "meta.json", meta);
  for (int m = 0; m < ds.envs.count(); ++m) {
    write_csv(dir / ("Z_" + std::to_string(m) + ".csv"), ds.Z[m]);
    write_csv(dir / ("X_" + std::to_string(m) + ".csv"), ds.X[m]);
    if (oracle) write_csv(dir / ("S_" + std::to_string(m) + ".csv"), oracle->score_batch(ds.X[m], m));
  }
}

struct LoadedDataset {
  Scm scm;
  MixingMap mixing;
  Dataset data;
  json meta;
};

inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  out.meta = read_json(dir / "meta.json");
  try {
    out.scm = scm_from_json(out.meta.at("scm"));
    out.mixing = MixingMap(matrix_from_json(out.meta.at("T")));
    out.data.envs = environments_from_json(out.meta.at("targets"));
    out.data.seed = out.meta.at("seed").get<std::uint64_t>();
    out.data.samples_per_env = out.meta.at("samples_per_env").get<int>();
  } catch (const json::exception& e) {
    throw IoError((dir / "meta.json").string() + ": " + e.what());
  }
  out.data.scm_digest = scm_digest(out.scm);
  for (int m = 0; m < out.data.envs.count(); ++m) {
    out.data.Z.push_back(read_csv(dir / ("Z_" + std::to_string(m) + ".csv")));
    out.data.X.push_back(read_csv(dir / ("X_" + std::to_string(m) + ".csv")));
  }
  return out;
}

}  // namespace scalei
