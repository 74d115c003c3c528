#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "localsa/apps.hpp"
#include "localsa/theory.hpp"

namespace localsa {

using json = nlohmann::json;

json to_json(const Vector& v);
json to_json(const Matrix& m);
Vector vector_from_json(const json& j);
Matrix matrix_from_json(const json& j);

json to_json(const CheckReport& report);
CheckReport check_report_from_json(const json& j);

/// Linear federations: per agent the chain matrix and per-state A(x), b(x).
json federation_to_json(const Federation& federation);
/// Chains are read with `allow_non_ergodic` so validators can report on them.
struct LinearFederationParts {
  std::vector<OperatorSpec> ops;
  std::vector<MarkovChain> chains;
};
LinearFederationParts federation_parts_from_json(const json& j);

json mdp_to_json(const MDP& mdp);
MDP mdp_from_json(const json& j);
json features_to_json(const FeatureMap& features);
FeatureMap features_from_json(const json& j);

/// FNV-1a over the compact dump, as 16 hex digits.
std::string content_hash(const json& j);

json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace localsa
