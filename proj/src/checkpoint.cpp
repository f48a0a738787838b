#include "sot/checkpoint.hpp"

#include <fstream>

namespace sot {

json vector_to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Vector vector_from_json(const json& j) {
    require(j.is_array(), "expected a JSON array for a vector");
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v[Eigen::Index(i)] = j[i].get<double>();
    return v;
}

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    require(j.is_array() && !j.empty() && j[0].is_array(),
            "expected a JSON array of arrays for a matrix");
    const size_t rows = j.size(), cols = j[0].size();
    Matrix m(rows, cols);
    for (size_t i = 0; i < rows; ++i) {
        require(j[i].size() == cols, "ragged matrix rows in JSON");
        for (size_t c = 0; c < cols; ++c) m(Eigen::Index(i), Eigen::Index(c)) = j[i][c].get<double>();
    }
    return m;
}

json spec_to_json(const MlpSpec& spec) {
    return {{"layers", spec.layer_sizes},
            {"output", spec.output_activation == OutputActivation::Tanh ? "tanh" : "identity"}};
}

MlpSpec spec_from_json(const json& j) {
    MlpSpec spec;
    spec.layer_sizes = j.at("layers").get<std::vector<int>>();
    const std::string out = j.at("output").get<std::string>();
    if (out == "tanh") spec.output_activation = OutputActivation::Tanh;
    else if (out == "identity") spec.output_activation = OutputActivation::Identity;
    else throw ConfigError("unknown output activation: " + out);
    validate_spec(spec);
    return spec;
}

json params_to_json(const MlpParams& p) {
    json weights = json::array(), biases = json::array();
    for (const auto& w : p.weights) weights.push_back(matrix_to_json(w));
    for (const auto& b : p.biases) biases.push_back(vector_to_json(b));
    return {{"weights", std::move(weights)}, {"biases", std::move(biases)}};
}

MlpParams params_from_json(const json& j) {
    MlpParams p;
    for (const auto& w : j.at("weights")) p.weights.push_back(matrix_from_json(w));
    for (const auto& b : j.at("biases")) p.biases.push_back(vector_from_json(b));
    require(p.weights.size() == p.biases.size(), "weights/biases layer count mismatch");
    if (!p.all_finite()) throw ConfigError("non-finite parameters in checkpoint");
    return p;
}

json potential_to_json(const DualPotential& u) {
    if (const auto* vp = std::get_if<VectorPotential>(&u))
        return {{"type", "vector"}, {"values", vector_to_json(vp->values)}};
    const auto& np = std::get<NetworkPotential>(u);
    return {{"type", "network"},
            {"spec", spec_to_json(np.spec)},
            {"params", params_to_json(np.params)}};
}

DualPotential potential_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "vector") return VectorPotential{vector_from_json(j.at("values"))};
    if (type == "network")
        return NetworkPotential{spec_from_json(j.at("spec")), params_from_json(j.at("params"))};
    throw ConfigError("unknown potential type: " + type);
}

json monge_map_to_json(const MongeMap& f) {
    return {{"spec", spec_to_json(f.spec)},
            {"params", params_to_json(f.params)},
            {"norm_mean", vector_to_json(f.norm_mean)},
            {"norm_std", vector_to_json(f.norm_std)}};
}

MongeMap monge_map_from_json(const json& j) {
    MongeMap f;
    f.spec = spec_from_json(j.at("spec"));
    f.params = params_from_json(j.at("params"));
    f.norm_mean = vector_from_json(j.at("norm_mean"));
    f.norm_std = vector_from_json(j.at("norm_std"));
    require(f.norm_mean.size() == f.spec.input_dim() && f.norm_std.size() == f.spec.input_dim(),
            "normalization size mismatch in checkpoint");
    return f;
}

json reg_to_json(const Regularization& reg) {
    return {{"kind", reg.kind == RegKind::Entropy ? "entropy" : "l2"},
            {"epsilon", reg.epsilon}};
}

Regularization reg_from_json(const json& j) {
    Regularization reg;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "entropy") reg.kind = RegKind::Entropy;
    else if (kind == "l2") reg.kind = RegKind::L2;
    else throw ConfigError("unknown regularization kind: " + kind);
    reg.epsilon = j.at("epsilon").get<double>();
    validate_reg(reg);
    return reg;
}

std::string cost_kind_name(CostKind kind) {
    switch (kind) {
        case CostKind::SquaredEuclidean: return "sqeuclidean";
        case CostKind::Euclidean: return "euclidean";
        case CostKind::Custom: return "custom";
    }
    return "sqeuclidean";
}

CostKind cost_kind_from_name(const std::string& name) {
    if (name == "sqeuclidean") return CostKind::SquaredEuclidean;
    if (name == "euclidean") return CostKind::Euclidean;
    throw ConfigError("unknown cost kind: " + name);
}

void save_checkpoint(const json& checkpoint, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out << checkpoint.dump(1) << "\n";
    if (!out) throw ConfigError("failed writing checkpoint: " + path);
}

json load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed checkpoint " + path + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("version"))
        throw ConfigError("checkpoint lacks a version field: " + path);
    if (j["version"].get<int>() != kCheckpointVersion)
        throw ConfigError("unsupported checkpoint version in " + path);
    return j;
}

json make_dual_checkpoint(const DualPotential& u, const DualPotential& v,
                          const Regularization& reg, CostKind cost_kind, int dim,
                          long clamp_count, const json& config_echo) {
    return {{"version", kCheckpointVersion},
            {"kind", "dual_potentials"},
            {"metadata",
             {{"reg", reg_to_json(reg)},
              {"cost", cost_kind_name(cost_kind)},
              {"dim", dim},
              {"config", config_echo}}},
            {"payload",
             {{"u", potential_to_json(u)},
              {"v", potential_to_json(v)},
              {"clamp_count", clamp_count}}}};
}

json make_map_checkpoint(const MongeMap& map, const Regularization& reg,
                         CostKind cost_kind, bool reverse, const json& input_measure,
                         const json& config_echo) {
    return {{"version", kCheckpointVersion},
            {"kind", "monge_map"},
            {"metadata",
             {{"reg", reg_to_json(reg)},
              {"cost", cost_kind_name(cost_kind)},
              {"dim", map.spec.input_dim()},
              {"reverse", reverse},
              {"config", config_echo}}},
            {"payload",
             {{"map", monge_map_to_json(map)}, {"input_measure", input_measure}}}};
}

}  // namespace sot
