#include "localsa/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "localsa/error.hpp"

namespace localsa {

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number(v(i)));
  return out;
}

json to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number(m(r, c)));
    out.push_back(std::move(row));
  }
  return out;
}

Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::Config, "expected a numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw Error(ErrorKind::Config, "expected a matrix (array of rows)");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorKind::Config, "matrix rows have unequal length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json to_json(const CheckReport& report) {
  json details = json::array();
  for (const auto& v : report.details) {
    details.push_back({{"k", v.k}, {"agent", v.agent}, {"t", v.t}, {"what", v.what},
                       {"lhs", number(v.lhs)}, {"rhs", number(v.rhs)}});
  }
  json info = json::object();
  for (const auto& [key, value] : report.info) info[key] = number(value);
  return {{"name", report.name},
          {"passed", report.passed()},
          {"total_checks", report.total_checks},
          {"violations", report.violations},
          {"worst_margin", number(report.worst_margin)},
          {"statistical", report.statistical},
          {"details", details},
          {"info", info}};
}

CheckReport check_report_from_json(const json& j) {
  CheckReport r;
  r.name = j.at("name").get<std::string>();
  r.total_checks = j.at("total_checks").get<std::size_t>();
  r.violations = j.at("violations").get<std::size_t>();
  r.worst_margin = number_from(j.at("worst_margin"));
  r.statistical = j.at("statistical").get<bool>();
  for (const auto& d : j.at("details")) {
    r.details.push_back({d.at("k").get<std::size_t>(), d.at("agent").get<std::size_t>(), d.at("t").get<std::size_t>(),
                         d.at("what").get<std::string>(), number_from(d.at("lhs")), number_from(d.at("rhs"))});
  }
  for (const auto& [key, value] : j.at("info").items()) r.info[key] = number_from(value);
  return r;
}

json federation_to_json(const Federation& fed) {
  json agents = json::array();
  for (std::size_t i = 0; i < fed.N(); ++i) {
    const auto& op = fed.ops[i];
    if (!op.is_linear()) throw Error(ErrorKind::InvalidArgument, "only linear federations serialize to JSON");
    json states = json::array();
    for (std::size_t x = 0; x < op.n_states(); ++x) {
      states.push_back({{"A", to_json(op.a(x))}, {"b", to_json(op.b(x))}});
    }
    agents.push_back({{"chain", to_json(fed.chains[i].transition())}, {"states", states}});
  }
  return {{"dim", fed.dim()}, {"agents", agents}};
}

LinearFederationParts federation_parts_from_json(const json& j) {
  LinearFederationParts parts;
  const auto& agents = j.at("agents");
  if (!agents.is_array() || agents.empty()) throw Error(ErrorKind::Config, "federation needs a non-empty 'agents' array");
  for (const auto& agent : agents) {
    std::vector<Matrix> a;
    std::vector<Vector> b;
    for (const auto& state : agent.at("states")) {
      a.push_back(matrix_from_json(state.at("A")));
      b.push_back(vector_from_json(state.at("b")));
    }
    parts.ops.push_back(OperatorSpec::linear(std::move(a), std::move(b)));
    parts.chains.emplace_back(matrix_from_json(agent.at("chain")), std::vector<std::string>{}, true);
  }
  return parts;
}

json mdp_to_json(const MDP& mdp) {
  return {{"S", mdp.S}, {"A", mdp.A}, {"gamma", mdp.gamma}, {"R_max", mdp.R_max},
          {"P", mdp.P}, {"R", to_json(mdp.R)}};
}

MDP mdp_from_json(const json& j) {
  MDP mdp;
  mdp.S = j.at("S").get<std::size_t>();
  mdp.A = j.at("A").get<std::size_t>();
  mdp.gamma = j.at("gamma").get<double>();
  mdp.R_max = j.at("R_max").get<double>();
  mdp.P = j.at("P").get<std::vector<double>>();
  mdp.R = matrix_from_json(j.at("R"));
  mdp.validate();
  return mdp;
}

json features_to_json(const FeatureMap& f) {
  return {{"n_actions", f.n_actions}, {"phi", to_json(f.phi)}};
}

FeatureMap features_from_json(const json& j) {
  return {matrix_from_json(j.at("phi")), j.value("n_actions", std::size_t{0})};
}

std::string content_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buffer[17];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(h));
  return buffer;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, "'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

}  // namespace localsa
