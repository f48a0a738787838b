#pragma once

#include <json.hpp>

#include "sot/map_learn.hpp"

namespace sot {

using nlohmann::json;

constexpr int kCheckpointVersion = 1;

json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j);
json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const json& j);

json spec_to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const json& j);
json params_to_json(const MlpParams& p);
MlpParams params_from_json(const json& j);

json potential_to_json(const DualPotential& u);
DualPotential potential_from_json(const json& j);

json monge_map_to_json(const MongeMap& f);
MongeMap monge_map_from_json(const json& j);

json reg_to_json(const Regularization& reg);
Regularization reg_from_json(const json& j);
std::string cost_kind_name(CostKind kind);
CostKind cost_kind_from_name(const std::string& name);

// Structured-text checkpoint files. Doubles keep full round-trip precision,
// so save -> load is bitwise stable.
void save_checkpoint(const json& checkpoint, const std::string& path);
json load_checkpoint(const std::string& path);

json make_dual_checkpoint(const DualPotential& u, const DualPotential& v,
                          const Regularization& reg, CostKind cost_kind, int dim,
                          long clamp_count, const json& config_echo);

json make_map_checkpoint(const MongeMap& map, const Regularization& reg,
                         CostKind cost_kind, bool reverse, const json& input_measure,
                         const json& config_echo);

}  // namespace sot
