#include "sot/pipelines.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sot::pipelines {

namespace {

namespace fs = std::filesystem;

double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

std::string with_suffix(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    fs::path out = p.parent_path() / (p.stem().string() + suffix + p.extension().string());
    return out.string();
}

std::string format_eps(double eps) {
    std::ostringstream ss;
    ss << eps;
    return ss.str();
}

void write_points_csv(const std::string& path, const Matrix& pts) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write CSV: " + path);
    out.precision(17);
    for (Eigen::Index c = 0; c < pts.cols(); ++c) out << (c ? "," : "") << "x" << c;
    out << "\n";
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (Eigen::Index c = 0; c < pts.cols(); ++c) out << (c ? "," : "") << pts(i, c);
        out << "\n";
    }
}

bool deterministic_mode(const json& config) { return config.value("deterministic", true); }

}  // namespace

IntVector knn_classify(const Matrix& train_points, const IntVector& train_labels,
                       const Matrix& query_points) {
    require(train_points.rows() >= 1, "knn: empty training set");
    require(train_points.rows() == train_labels.size(), "knn: points/labels mismatch");
    require(train_points.cols() == query_points.cols(), "knn: dimension mismatch");
    IntVector pred(query_points.rows());
    for (Eigen::Index q = 0; q < query_points.rows(); ++q) {
        Eigen::Index best = 0;
        double best_d = sq_dist(query_points, q, train_points, 0);
        for (Eigen::Index i = 1; i < train_points.rows(); ++i) {
            const double d = sq_dist(query_points, q, train_points, i);
            if (d < best_d) {  // strict: ties keep the lowest index
                best_d = d;
                best = i;
            }
        }
        pred[q] = train_labels[best];
    }
    return pred;
}

double accuracy(const IntVector& predicted, const IntVector& truth) {
    require(predicted.size() == truth.size() && truth.size() > 0, "accuracy: size mismatch");
    return double((predicted.array() == truth.array()).count()) / double(truth.size());
}

MeasureSource measure_from_json(const json& spec) {
    require(spec.is_object() && spec.contains("type"), "measure spec needs a type");
    const std::string type = spec["type"].get<std::string>();
    if (type == "csv") {
        return load_csv(spec.at("path").get<std::string>(), spec.value("has_weights", false),
                        spec.value("has_labels", false));
    }
    if (type == "gaussian") {
        return GaussianMeasure(vector_from_json(spec.at("mean")),
                               matrix_from_json(spec.at("cov")));
    }
    if (type == "gaussian_fit") {
        MeasureSource ref = measure_from_json(spec.at("to"));
        Moments mom = source_moments(ref);
        // keep the covariance safely positive definite
        mom.covariance += 1e-9 * Matrix::Identity(mom.mean.size(), mom.mean.size());
        return GaussianMeasure(mom.mean, mom.covariance);
    }
    if (type == "mixture") {
        std::vector<std::pair<double, GaussianMeasure>> comps;
        for (const auto& c : spec.at("components"))
            comps.emplace_back(c.at("weight").get<double>(),
                               GaussianMeasure(vector_from_json(c.at("mean")),
                                               matrix_from_json(c.at("cov"))));
        return GaussianMixture(std::move(comps));
    }
    if (type == "discrete") {
        Matrix pts = matrix_from_json(spec.at("points"));
        std::optional<IntVector> labels;
        if (spec.contains("labels")) {
            Vector lf = vector_from_json(spec["labels"]);
            IntVector l(lf.size());
            for (Eigen::Index i = 0; i < lf.size(); ++i) l[i] = int(std::lround(lf[i]));
            labels = l;
        }
        if (spec.contains("weights"))
            return DiscreteMeasure(std::move(pts), vector_from_json(spec["weights"]),
                                   std::move(labels));
        return DiscreteMeasure::uniform(std::move(pts), std::move(labels));
    }
    if (type == "ring") {
        const int k = spec.value("atoms", 8);
        const double radius = spec.value("radius", 0.7);
        require(k >= 1, "ring needs at least one atom");
        Matrix pts(k, 2);
        for (int i = 0; i < k; ++i) {
            const double ang = 2.0 * std::numbers::pi * i / k;
            pts(i, 0) = radius * std::cos(ang);
            pts(i, 1) = radius * std::sin(ang);
        }
        return DiscreteMeasure::uniform(std::move(pts));
    }
    if (type == "blobs") {
        Rng rng(spec.value("seed", std::uint64_t(0)));
        double rotation = spec.value("rotation", 0.0);
        if (spec.contains("rotation_deg"))
            rotation = spec["rotation_deg"].get<double>() * std::numbers::pi / 180.0;
        const int d = spec.value("d", 2);
        Vector shift = spec.contains("shift") ? vector_from_json(spec["shift"])
                                              : Vector::Zero(d);
        BlobPair pair = make_blobs(spec.value("k", 3), spec.value("per_class", 100), d,
                                   shift, rotation, rng);
        const std::string role = spec.value("role", "source");
        if (role == "source") return pair.source;
        if (role == "target") return pair.target;
        throw ConfigError("blobs role must be source or target");
    }
    throw ConfigError("unknown measure type: " + type);
}

json measure_to_json(const MeasureSource& src) {
    if (const auto* dm = std::get_if<DiscreteMeasure>(&src)) {
        json j = {{"type", "discrete"}, {"points", matrix_to_json(dm->points())},
                  {"weights", vector_to_json(dm->weights())}};
        if (dm->labels()) {
            json l = json::array();
            for (Eigen::Index i = 0; i < dm->labels()->size(); ++i)
                l.push_back((*dm->labels())[i]);
            j["labels"] = std::move(l);
        }
        return j;
    }
    if (const auto* gm = std::get_if<GaussianMeasure>(&src)) {
        return {{"type", "gaussian"}, {"mean", vector_to_json(gm->mean)},
                {"cov", matrix_to_json(gm->covariance)}};
    }
    const auto& mix = std::get<GaussianMixture>(src);
    json comps = json::array();
    for (const auto& [w, g] : mix.components)
        comps.push_back({{"weight", w}, {"mean", vector_to_json(g.mean)},
                         {"cov", matrix_to_json(g.covariance)}});
    return {{"type", "mixture"}, {"components", std::move(comps)}};
}

void write_trace_csv(const std::string& path, const TrainTrace& trace, bool deterministic) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write trace CSV: " + path);
    out.precision(17);
    out << "iteration,wall_ms,objective\n";
    for (const auto& p : trace)
        out << p.iteration << "," << (deterministic ? 0.0 : p.wall_ms) << ","
            << p.objective << "\n";
}

TrainTrace load_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace CSV: " + path);
    TrainTrace trace;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TracePoint p{};
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        p.iteration = std::stol(cell);
        std::getline(ss, cell, ',');
        p.wall_ms = std::stod(cell);
        std::getline(ss, cell, ',');
        p.objective = std::stod(cell);
        trace.push_back(p);
    }
    return trace;
}

DualSolverConfig solver_config_from_json(const json& j) {
    DualSolverConfig cfg;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.vector_learning_rate = j.value("vector_learning_rate", cfg.vector_learning_rate);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.lr_decay_after = j.value("lr_decay_after", cfg.lr_decay_after);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.log_every = j.value("log_every", cfg.log_every);
    if (j.contains("hidden_sizes")) cfg.hidden_sizes = j["hidden_sizes"].get<std::vector<int>>();
    cfg.eval_batches = j.value("eval_batches", cfg.eval_batches);
    cfg.eval_batch_size = j.value("eval_batch_size", cfg.eval_batch_size);
    return cfg;
}

MapTrainConfig map_config_from_json(const json& j) {
    MapTrainConfig cfg;
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.log_every = j.value("log_every", cfg.log_every);
    if (j.contains("hidden_sizes")) cfg.hidden_sizes = j["hidden_sizes"].get<std::vector<int>>();
    if (j.contains("output_activation")) {
        const std::string a = j["output_activation"].get<std::string>();
        if (a == "tanh") cfg.output_activation = OutputActivation::Tanh;
        else if (a == "identity") cfg.output_activation = OutputActivation::Identity;
        else throw ConfigError("unknown output activation: " + a);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

json cmd_solve(const json& config) {
    const MeasureSource mu = measure_from_json(config.at("source"));
    const MeasureSource nu = measure_from_json(config.at("target"));
    require(source_dim(mu) == source_dim(nu), "source/target dimension mismatch");

    const json& reg_cfg = config.at("reg");
    Regularization base_reg;
    base_reg = reg_from_json(json{{"kind", reg_cfg.at("kind")},
                                  {"epsilon", reg_cfg.contains("epsilon_grid")
                                                  ? reg_cfg["epsilon_grid"][0].get<double>()
                                                  : reg_cfg.at("epsilon").get<double>()}});
    std::vector<double> eps_grid;
    if (reg_cfg.contains("epsilon_grid"))
        eps_grid = reg_cfg["epsilon_grid"].get<std::vector<double>>();
    else
        eps_grid = {reg_cfg.at("epsilon").get<double>()};

    const CostKind cost_kind = cost_kind_from_name(config.value("cost", "sqeuclidean"));
    const CostFn cost{cost_kind, nullptr};
    const json solver_cfg_json = config.value("solver", json::object());
    std::vector<double> lr_grid;
    std::vector<int> batch_grid;
    if (solver_cfg_json.contains("learning_rate_grid"))
        lr_grid = solver_cfg_json["learning_rate_grid"].get<std::vector<double>>();
    if (solver_cfg_json.contains("batch_size_grid"))
        batch_grid = solver_cfg_json["batch_size_grid"].get<std::vector<int>>();
    require(lr_grid.empty() || lr_grid.size() == eps_grid.size(),
            "learning_rate_grid must align with epsilon_grid");
    require(batch_grid.empty() || batch_grid.size() == eps_grid.size(),
            "batch_size_grid must align with epsilon_grid");

    const json out = config.value("out", json::object());
    const bool deterministic = deterministic_mode(config);
    const bool grid_mode = eps_grid.size() > 1;

    json runs = json::array();
    json csv_files = json::array();
    for (size_t k = 0; k < eps_grid.size(); ++k) {
        Regularization reg{base_reg.kind, eps_grid[k]};
        validate_reg(reg);
        DualSolverConfig cfg = solver_config_from_json(solver_cfg_json);
        if (!lr_grid.empty()) cfg.learning_rate = lr_grid[k];
        if (!batch_grid.empty()) cfg.batch_size = batch_grid[k];

        DualSolution sol = solve_dual(mu, nu, cost, reg, cfg);

        json run = {{"epsilon", reg.epsilon},
                    {"learning_rate", cfg.learning_rate},
                    {"batch_size", cfg.batch_size},
                    {"final_objective", sol.trace.back().objective},
                    {"clamp_count", sol.clamp_count}};
        if (out.contains("checkpoint")) {
            std::string path = out["checkpoint"].get<std::string>();
            if (grid_mode) path = with_suffix(path, "_eps" + format_eps(reg.epsilon));
            save_checkpoint(make_dual_checkpoint(sol.u, sol.v, reg, cost_kind,
                                                 int(source_dim(mu)), sol.clamp_count,
                                                 config),
                            path);
            run["checkpoint"] = path;
        }
        if (out.contains("trace")) {
            std::string path = out["trace"].get<std::string>();
            if (grid_mode) path = with_suffix(path, "_eps" + format_eps(reg.epsilon));
            write_trace_csv(path, sol.trace, deterministic);
            run["trace"] = path;
            csv_files.push_back(path);
        }
        runs.push_back(std::move(run));
    }
    return {{"metrics", {{"runs", runs}}}, {"csv_files", csv_files}, {"config", config}};
}

// ---------------------------------------------------------------------------
// map-train
// ---------------------------------------------------------------------------

json cmd_map_train(const json& config) {
    const json ckpt = load_checkpoint(config.at("dual_checkpoint").get<std::string>());
    require(ckpt.at("kind") == "dual_potentials", "expected a dual-potentials checkpoint");

    const Regularization reg = reg_from_json(config.at("reg"));
    const Regularization ckpt_reg = reg_from_json(ckpt.at("metadata").at("reg"));
    require(reg.kind == ckpt_reg.kind && std::abs(reg.epsilon - ckpt_reg.epsilon) <= 1e-12,
            "regularization mismatch between config and dual checkpoint");
    const std::string cost_name = config.value("cost", "sqeuclidean");
    require(cost_name == ckpt.at("metadata").at("cost").get<std::string>(),
            "cost mismatch between config and dual checkpoint");
    const CostKind cost_kind = cost_kind_from_name(cost_name);
    const CostFn cost{cost_kind, nullptr};

    const MeasureSource mu = measure_from_json(config.at("source"));
    const MeasureSource nu = measure_from_json(config.at("target"));
    require(int(source_dim(mu)) == ckpt.at("metadata").at("dim").get<int>(),
            "dimension mismatch between measures and dual checkpoint");

    DualPotential u = potential_from_json(ckpt.at("payload").at("u"));
    DualPotential v = potential_from_json(ckpt.at("payload").at("v"));
    if (const auto* vp = std::get_if<VectorPotential>(&u))
        require(is_discrete(mu) &&
                    vp->values.size() == std::get<DiscreteMeasure>(mu).size(),
                "u potential does not match the source support");
    if (const auto* vp = std::get_if<VectorPotential>(&v))
        require(is_discrete(nu) &&
                    vp->values.size() == std::get<DiscreteMeasure>(nu).size(),
                "v potential does not match the target support");

    const bool reverse = config.value("reverse", false);
    const MapTrainConfig cfg = map_config_from_json(config.value("map", json::object()));
    const json out = config.value("out", json::object());
    const bool deterministic = deterministic_mode(config);

    json report = {{"config", config}};
    json csv_files = json::array();
    MongeMap map;
    if (reverse) {
        map = train_reverse_map(mu, nu, u, v, cost, reg, cfg);
    } else {
        MapSolution sol = train_map(mu, nu, u, v, cost, reg, cfg);
        map = std::move(sol.map);
        if (out.contains("trace")) {
            const std::string path = out["trace"].get<std::string>();
            write_trace_csv(path, sol.trace, deterministic);
            csv_files.push_back(path);
            report["metrics"] = {{"final_loss", sol.trace.back().objective}};
        }
    }
    if (out.contains("checkpoint")) {
        const json input_measure = measure_to_json(reverse ? nu : mu);
        save_checkpoint(
            make_map_checkpoint(map, reg, cost_kind, reverse, input_measure, config),
            out["checkpoint"].get<std::string>());
        report["checkpoint"] = out["checkpoint"];
    }
    report["csv_files"] = csv_files;
    return report;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

json cmd_generate(const json& config) {
    const json ckpt = load_checkpoint(config.at("map_checkpoint").get<std::string>());
    require(ckpt.at("kind") == "monge_map", "expected a monge-map checkpoint");
    const MongeMap map = monge_map_from_json(ckpt.at("payload").at("map"));
    require(ckpt.at("payload").contains("input_measure"),
            "map checkpoint lacks an input measure to sample from");
    const MeasureSource mu = measure_from_json(ckpt.at("payload").at("input_measure"));
    require(source_dim(mu) == map.spec.input_dim(), "map/source dimension mismatch");

    const long k = config.value("samples", 100000L);
    require(k >= 1, "samples must be positive");
    Rng rng(config.value("seed", std::uint64_t(0)));

    Matrix mapped(k, map.spec.output_dim());
    const long chunk = 65536;
    for (long r0 = 0; r0 < k; r0 += chunk) {
        const long rows = std::min(chunk, k - r0);
        Batch b = sample_batch(mu, int(rows), rng);
        mapped.middleRows(r0, rows) = apply_map(map, b.points);
    }

    const json out = config.value("out", json::object());
    json report = {{"config", config}, {"metrics", {{"samples", k}}}};
    json csv_files = json::array();
    if (out.contains("points")) {
        write_points_csv(out["points"].get<std::string>(), mapped);
        csv_files.push_back(out["points"]);
    }
    if (out.contains("histogram")) {
        require(mapped.cols() >= 2, "histogram needs at least two output dimensions");
        const int bins = config.value("bins", 50);
        require(bins >= 1, "bins must be positive");
        const double x0 = mapped.col(0).minCoeff(), x1 = mapped.col(0).maxCoeff();
        const double y0 = mapped.col(1).minCoeff(), y1 = mapped.col(1).maxCoeff();
        const double dx = std::max(x1 - x0, 1e-12) / bins;
        const double dy = std::max(y1 - y0, 1e-12) / bins;
        Matrix hist = Matrix::Zero(bins, bins);
        for (long i = 0; i < k; ++i) {
            int bx = std::min(bins - 1, int((mapped(i, 0) - x0) / dx));
            int by = std::min(bins - 1, int((mapped(i, 1) - y0) / dy));
            hist(bx, by) += 1.0;
        }
        hist /= double(k);
        const std::string path = out["histogram"].get<std::string>();
        std::ofstream hout(path);
        if (!hout) throw ConfigError("cannot write histogram CSV: " + path);
        hout.precision(17);
        hout << "x_center,y_center,mass\n";
        for (int bx = 0; bx < bins; ++bx)
            for (int by = 0; by < bins; ++by)
                hout << x0 + (bx + 0.5) * dx << "," << y0 + (by + 0.5) * dy << ","
                     << hist(bx, by) << "\n";
        csv_files.push_back(path);
        report["metrics"]["histogram_mass"] = hist.sum();
    }
    report["csv_files"] = csv_files;
    return report;
}

// ---------------------------------------------------------------------------
// da
// ---------------------------------------------------------------------------

namespace {

struct DaMethodResult {
    double best_accuracy = 0.0;
    json grid = json::array();
};

// Dual solve + plan projection + map training for one regularizer over an
// epsilon grid; picks the best target accuracy per method when several
// epsilons are given (oracle model selection).
void run_da_reg(const DiscreteMeasure& src, const DiscreteMeasure& tgt,
                const CostFn& cost, RegKind kind, const std::vector<double>& eps_grid,
                const json& solver_json, const json& map_json, const IntVector& tgt_labels,
                DaMethodResult& barproj, DaMethodResult& monge) {
    const MeasureSource mu{src}, nu{tgt};
    for (double eps : eps_grid) {
        const Regularization reg{kind, eps};
        DualSolverConfig scfg = solver_config_from_json(solver_json);
        DualSolution sol = solve_dual(mu, nu, cost, reg, scfg);

        TransportPlan plan = recover_discrete_plan(sol.u, sol.v, src, tgt, cost, reg);
        const Matrix projected = barycentric_projection_discrete(plan, tgt.points());
        const double acc_b = accuracy(
            knn_classify(projected, *src.labels(), tgt.points()), tgt_labels);
        barproj.grid.push_back({{"epsilon", eps}, {"accuracy", acc_b}});
        barproj.best_accuracy = std::max(barproj.best_accuracy, acc_b);

        MapTrainConfig mcfg = map_config_from_json(map_json);
        MapSolution ms = train_map(mu, nu, sol.u, sol.v, cost, reg, mcfg);
        const Matrix mapped = apply_map(ms.map, src.points());
        const double acc_m = accuracy(
            knn_classify(mapped, *src.labels(), tgt.points()), tgt_labels);
        monge.grid.push_back({{"epsilon", eps}, {"accuracy", acc_m}});
        monge.best_accuracy = std::max(monge.best_accuracy, acc_m);
    }
}

}  // namespace

json cmd_da(const json& config) {
    const json& blobs = config.at("blobs");
    Rng rng(blobs.value("seed", std::uint64_t(0)));
    double rotation = blobs.value("rotation", 0.0);
    if (blobs.contains("rotation_deg"))
        rotation = blobs["rotation_deg"].get<double>() * std::numbers::pi / 180.0;
    const int d = blobs.value("d", 2);
    Vector shift = blobs.contains("shift") ? vector_from_json(blobs["shift"])
                                           : Vector::Zero(d);
    BlobPair pair = make_blobs(blobs.value("k", 3), blobs.value("per_class", 100), d,
                               shift, rotation, rng);
    const DiscreteMeasure& src = pair.source;
    const DiscreteMeasure& tgt = pair.target;
    require(src.labels().has_value() && tgt.labels().has_value(), "blobs must carry labels");
    // Target labels are only ever used to score accuracies below.
    const IntVector& tgt_labels = *tgt.labels();

    const CostKind cost_kind = cost_kind_from_name(config.value("cost", "sqeuclidean"));
    const CostFn cost{cost_kind, nullptr};
    const Matrix C = cost_matrix(cost, src.points(), tgt.points());

    json metrics;

    // 1-NN straight from the source domain.
    const double acc_source =
        accuracy(knn_classify(src.points(), *src.labels(), tgt.points()), tgt_labels);
    metrics["source_only"] = acc_source;

    // Barycentric projection of the exact plan.
    ExactOtResult exact = exact_ot_simplex(src.weights(), tgt.weights(), C);
    {
        const Matrix projected = barycentric_projection_discrete(exact.plan, tgt.points());
        metrics["barproj_exact"] = accuracy(
            knn_classify(projected, *src.labels(), tgt.points()), tgt_labels);
    }

    // Barycentric projection of the Sinkhorn plan.
    {
        const json sk = config.value("sinkhorn", json::object());
        const double eps = sk.value("epsilon", 1.0);
        SinkhornResult sres = sinkhorn(src.weights(), tgt.weights(), C, eps,
                                       sk.value("max_iters", 20000L), sk.value("tol", 1e-9));
        const Matrix projected = barycentric_projection_discrete(sres.plan, tgt.points());
        metrics["barproj_sinkhorn"] = accuracy(
            knn_classify(projected, *src.labels(), tgt.points()), tgt_labels);
        metrics["sinkhorn_epsilon"] = eps;
    }

    // Stochastic-dual plans and learned Monge maps, entropy and L2.
    auto grid_of = [&](const char* key, const char* grid_key) {
        if (config.contains(grid_key))
            return config[grid_key].get<std::vector<double>>();
        return std::vector<double>{config.value(key, 1.0)};
    };
    const std::vector<double> ent_grid = grid_of("entropy_epsilon", "entropy_epsilon_grid");
    const std::vector<double> l2_grid = grid_of("l2_epsilon", "l2_epsilon_grid");
    const bool oracle = config.value("oracle_selection",
                                     ent_grid.size() > 1 || l2_grid.size() > 1);

    const json solver_json = config.value("solver", json::object());
    const json map_json = config.value("map", json::object());

    DaMethodResult bp_ent, mm_ent, bp_l2, mm_l2;
    run_da_reg(src, tgt, cost, RegKind::Entropy, ent_grid, solver_json, map_json,
               tgt_labels, bp_ent, mm_ent);
    run_da_reg(src, tgt, cost, RegKind::L2, l2_grid, solver_json, map_json, tgt_labels,
               bp_l2, mm_l2);

    metrics["barproj_dual_entropy"] = bp_ent.best_accuracy;
    metrics["barproj_dual_l2"] = bp_l2.best_accuracy;
    metrics["monge_map_entropy"] = mm_ent.best_accuracy;
    metrics["monge_map_l2"] = mm_l2.best_accuracy;
    metrics["model_selection"] = oracle ? "oracle(best accuracy over grid)" : "single";
    metrics["grids"] = {{"barproj_dual_entropy", bp_ent.grid},
                        {"barproj_dual_l2", bp_l2.grid},
                        {"monge_map_entropy", mm_ent.grid},
                        {"monge_map_l2", mm_l2.grid}};

    json report = {{"metrics", metrics}, {"config", config}, {"csv_files", json::array()}};
    const json out = config.value("out", json::object());
    if (out.contains("report")) {
        std::ofstream f(out["report"].get<std::string>());
        if (!f) throw ConfigError("cannot write report");
        f << report.dump(1) << "\n";
    }
    return report;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

namespace {

DiscreteMeasure uniform_cloud(Eigen::Index n, int d, Rng& rng, double offset) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix pts(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) pts(i, j) = unif(rng) + (j == 0 ? offset : 0.0);
    return DiscreteMeasure::uniform(std::move(pts));
}

double objective_on_pairs(const DualPotential& u, const DualPotential& v, const Batch& bx,
                          const Batch& by, const CostFn& cost, const Regularization& reg) {
    const Vector uv = potential_eval(u, bx.points, bx.indices);
    const Vector vv = potential_eval(v, by.points, by.indices);
    Matrix s = (-cost_matrix(cost, bx.points, by.points)).eval();
    s.colwise() += uv;
    s.rowwise() += vv.transpose();
    return uv.mean() + vv.mean() + f_eps_matrix(reg, s).mean();
}

// Dual SGD with the objective traced on a fixed evaluation set; evaluation
// time is excluded from the recorded wall clock.
TrainTrace dual_trace_on_eval(const MeasureSource& mu, const MeasureSource& nu,
                              const CostFn& cost, const Regularization& reg,
                              const DualSolverConfig& cfg, const Batch& ex,
                              const Batch& ey) {
    const auto& dmu = std::get<DiscreteMeasure>(mu);
    const auto& dnu = std::get<DiscreteMeasure>(nu);
    DualAscent ascent(VectorPotential{Vector::Zero(dmu.size())},
                      VectorPotential{Vector::Zero(dnu.size())}, cost, reg);
    Rng rng(cfg.seed);
    TrainTrace trace;
    double train_ms = 0.0;
    trace.push_back({0, 0.0, objective_on_pairs(ascent.u(), ascent.v(), ex, ey, cost, reg)});
    for (long it = 1; it <= cfg.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        Batch bx = sample_batch(mu, cfg.batch_size, rng);
        Batch by = sample_batch(nu, cfg.batch_size, rng);
        ascent.step(bx, by, cfg.learning_rate);
        const auto t1 = std::chrono::steady_clock::now();
        train_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
        if ((cfg.log_every > 0 && it % cfg.log_every == 0) || it == cfg.iterations)
            trace.push_back({it, train_ms,
                             objective_on_pairs(ascent.u(), ascent.v(), ex, ey, cost, reg)});
    }
    return trace;
}

double first_crossing_ms(const TrainTrace& trace, double threshold) {
    for (const auto& p : trace)
        if (p.objective >= threshold) return p.wall_ms;
    return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

json cmd_benchmark(const json& config) {
    const std::vector<long> sizes =
        config.value("sizes", std::vector<long>{1000, 10000, 100000});
    const int p = config.value("batch_size", 100);
    const double eps = config.value("epsilon", 1.0);
    const std::uint64_t seed = config.value("seed", std::uint64_t(0));
    const int reps = config.value("repetitions", 3);
    const CostFn cost = CostFn::squared_euclidean();
    const Regularization reg{RegKind::Entropy, eps};

    json metrics;
    json timing_rows = json::array();

    // Per-iteration timing at fixed batch size across support sizes.
    for (long n : sizes) {
        Rng rng(seed + std::uint64_t(n));
        DiscreteMeasure mu = uniform_cloud(n, 2, rng, 0.0);
        DiscreteMeasure nu = uniform_cloud(n, 2, rng, 0.5);
        const MeasureSource ms{mu}, ns{nu};

        double dual_best = std::numeric_limits<double>::infinity();
        const long dual_iters = config.value("dual_timing_iters", 1000L);
        for (int r = 0; r < reps; ++r) {
            DualSolverConfig cfg;
            cfg.batch_size = p;
            cfg.learning_rate = 1.0;
            cfg.iterations = dual_iters;
            cfg.seed = seed + std::uint64_t(r);
            cfg.log_every = 0;
            cfg.eval_batches = 1;
            cfg.eval_batch_size = 16;
            DualSolution sol = solve_dual(ms, ns, cost, reg, cfg);
            dual_best = std::min(dual_best, sol.trace.back().wall_ms / double(dual_iters));
        }

        double semi_best = std::numeric_limits<double>::infinity();
        const long semi_iters = std::clamp(3'000'000L / n, 30L, 500L);
        for (int r = 0; r < reps; ++r) {
            SemiDualConfig cfg;
            cfg.batch_size = p;
            cfg.learning_rate = 1.0;
            cfg.iterations = semi_iters;
            cfg.seed = seed + std::uint64_t(r);
            cfg.log_every = 0;
            cfg.eval_points = 16;
            SemiDualSolution sol = semi_dual_sgd(ms, nu, cost, eps, cfg);
            semi_best = std::min(semi_best, sol.trace.back().wall_ms / double(semi_iters));
        }
        timing_rows.push_back({{"n", n},
                               {"dual_ms_per_iter", dual_best},
                               {"semi_dual_ms_per_iter", semi_best}});
    }
    metrics["timing"] = timing_rows;
    {
        double dual_min = std::numeric_limits<double>::infinity(), dual_max = 0.0;
        for (const auto& row : timing_rows) {
            dual_min = std::min(dual_min, row["dual_ms_per_iter"].get<double>());
            dual_max = std::max(dual_max, row["dual_ms_per_iter"].get<double>());
        }
        metrics["dual_time_spread"] = dual_max / dual_min;
        metrics["semi_dual_time_ratio_extremes"] =
            timing_rows.back()["semi_dual_ms_per_iter"].get<double>() /
            timing_rows.front()["semi_dual_ms_per_iter"].get<double>();
    }

    // Objective-versus-wall-time race on one instance.
    const json race = config.value("race", json::object());
    if (race.value("enabled", true)) {
        const long n = race.value("n", 10000L);
        Rng rng(seed + 77);
        DiscreteMeasure mu = uniform_cloud(n, 2, rng, 0.0);
        DiscreteMeasure nu = uniform_cloud(n, 2, rng, 0.5);
        const MeasureSource ms{mu}, ns{nu};

        SinkhornStreamResult sink =
            sinkhorn_streaming(mu.weights(), nu.weights(), mu.points(), nu.points(), cost,
                               eps, race.value("sinkhorn_max_iters", 500L),
                               race.value("sinkhorn_tol", 1e-4));

        const int eval_n = race.value("eval_points", 1024);
        Rng eval_rng(seed + 99);
        const Batch ex = sample_batch(ms, eval_n, eval_rng);
        const Batch ey = sample_batch(ns, eval_n, eval_rng);

        const DualPotential su = VectorPotential{sink.u};
        const DualPotential sv = VectorPotential{sink.v};
        const double dual_opt = objective_on_pairs(su, sv, ex, ey, cost, reg);
        const double margin = race.value("margin", 1e-2);

        DualSolverConfig dcfg;
        dcfg.batch_size = p;
        dcfg.learning_rate = race.value("learning_rate", 5.0);
        dcfg.iterations = race.value("dual_iterations", 20000L);
        dcfg.seed = seed + 5;
        dcfg.log_every = race.value("dual_log_every", 250L);
        TrainTrace dual_trace = dual_trace_on_eval(ms, ns, cost, reg, dcfg, ex, ey);

        SemiDualConfig scfg;
        scfg.batch_size = p;
        scfg.learning_rate = race.value("semi_learning_rate", race.value("learning_rate", 5.0));
        scfg.iterations = race.value("semi_iterations", 2000L);
        scfg.seed = seed + 6;
        scfg.log_every = race.value("semi_log_every", 100L);
        scfg.eval_points = eval_n;
        // Threshold evaluated by the same estimator (same eval stream) the
        // semi-dual trace uses, so the sampling bias cancels in the crossing test.
        const double semi_opt = semi_dual_objective(sink.v, ms, nu, cost, eps, eval_n,
                                                    scfg.seed ^ kEvalSeedMix);
        SemiDualSolution semi = semi_dual_sgd(ms, nu, cost, eps, scfg);
        const TrainTrace& semi_trace = semi.trace;

        metrics["race"] = {
            {"n", n},
            {"sinkhorn_objective", sink.objective},
            {"sinkhorn_residual", sink.final_marginal_residual},
            {"dual_threshold", dual_opt - margin},
            {"semi_threshold", semi_opt - margin},
            {"dual_crossing_ms", first_crossing_ms(dual_trace, dual_opt - margin)},
            {"semi_crossing_ms", first_crossing_ms(semi_trace, semi_opt - margin)},
        };

        const json out = config.value("out", json::object());
        if (out.contains("dir")) {
            const std::string dir = out["dir"].get<std::string>();
            fs::create_directories(dir);
            write_trace_csv(dir + "/race_dual.csv", dual_trace, false);
            write_trace_csv(dir + "/race_semi_dual.csv", semi_trace, false);
        }
    }

    json report = {{"metrics", metrics}, {"config", config}, {"csv_files", json::array()}};
    const json out = config.value("out", json::object());
    if (out.contains("dir")) {
        const std::string dir = out["dir"].get<std::string>();
        fs::create_directories(dir);
        std::ofstream f(dir + "/timing.csv");
        f << "method,n,ms_per_iteration\n";
        f.precision(17);
        for (const auto& row : timing_rows) {
            f << "dual," << row["n"].get<long>() << ","
              << row["dual_ms_per_iter"].get<double>() << "\n";
            f << "semi_dual," << row["n"].get<long>() << ","
              << row["semi_dual_ms_per_iter"].get<double>() << "\n";
        }
        report["csv_files"].push_back(dir + "/timing.csv");
    }
    if (out.contains("report")) {
        std::ofstream f(out["report"].get<std::string>());
        if (!f) throw ConfigError("cannot write report");
        f << report.dump(1) << "\n";
    }
    return report;
}

// ---------------------------------------------------------------------------
// converge
// ---------------------------------------------------------------------------

json cmd_converge(const json& config) {
    const CostFn cost = CostFn::squared_euclidean();
    json metrics;

    // Plan sweep: Sinkhorn plans against the exact simplex plan as eps drops.
    if (config.contains("plan_sweep")) {
        const json& ps = config["plan_sweep"];
        const int n = ps.value("n", 16);
        // Spread the clouds so the assignment gap dominates the smallest eps.
        const double scale = ps.value("scale", 5.0);
        Rng rng(ps.value("seed", std::uint64_t(21)));
        DiscreteMeasure mu =
            DiscreteMeasure::uniform(scale * uniform_cloud(n, 2, rng, 0.0).points());
        DiscreteMeasure nu =
            DiscreteMeasure::uniform(scale * uniform_cloud(n, 2, rng, 0.4).points());
        const Matrix C = cost_matrix(cost, mu.points(), nu.points());
        ExactOtResult exact = exact_ot_simplex(mu.weights(), nu.weights(), C);

        json rows = json::array();
        for (double eps : ps.value("eps_grid", std::vector<double>{1, 0.3, 0.1, 0.03, 0.01})) {
            SinkhornResult sres = sinkhorn(mu.weights(), nu.weights(), C, eps,
                                           ps.value("sinkhorn_max_iters", 200000L),
                                           ps.value("sinkhorn_tol", 1e-10));
            const double gap = (sres.plan.matrix - exact.plan.matrix).cwiseAbs().sum();
            rows.push_back({{"epsilon", eps}, {"plan_l1_gap", gap}});
        }
        metrics["plan_sweep"] = {{"n", n}, {"exact_cost", exact.cost}, {"rows", rows}};

        // Simplex cross-check against brute force on small instances.
        json checks = json::array();
        for (int t = 0; t < ps.value("bruteforce_checks", 5); ++t) {
            const int k = 4 + int(t % 4);
            Rng crng(ps.value("seed", std::uint64_t(21)) + 100 + std::uint64_t(t));
            DiscreteMeasure cm = uniform_cloud(k, 2, crng, 0.0);
            DiscreteMeasure cn = uniform_cloud(k, 2, crng, 0.3);
            const Matrix CC = cost_matrix(cost, cm.points(), cn.points());
            ExactOtResult simp = exact_ot_simplex(cm.weights(), cn.weights(), CC);
            AssignmentResult brute = exact_assignment_bruteforce(CC);
            checks.push_back({{"n", k}, {"simplex_cost", simp.cost},
                              {"bruteforce_cost", brute.cost},
                              {"gap", std::abs(simp.cost - brute.cost)}});
        }
        metrics["bruteforce_checks"] = checks;
    }

    // Barycentric map against the brute-force assignment on a uniform pair.
    if (config.contains("assignment_check")) {
        const json& ac = config["assignment_check"];
        const int n = ac.value("n", 6);
        require(n <= 8, "assignment check limited to n <= 8");
        const double eps = ac.value("epsilon", 0.01);
        Rng rng(ac.value("seed", std::uint64_t(22)));
        DiscreteMeasure mu = uniform_cloud(n, 2, rng, 0.0);
        DiscreteMeasure nu = uniform_cloud(n, 2, rng, 0.5);
        const Matrix C = cost_matrix(cost, mu.points(), nu.points());
        AssignmentResult brute = exact_assignment_bruteforce(C);

        SinkhornResult sres = sinkhorn(mu.weights(), nu.weights(), C, eps,
                                       ac.value("sinkhorn_max_iters", 500000L),
                                       ac.value("sinkhorn_tol", 1e-10));
        Matrix projected = barycentric_projection_discrete(sres.plan, nu.points());
        double dev = 0.0;
        for (int i = 0; i < n; ++i)
            dev += (projected.row(i) - nu.points().row(brute.permutation[size_t(i)]))
                       .norm();
        dev /= double(n);
        const double scale = std::sqrt(C.maxCoeff());
        metrics["assignment_check"] = {{"n", n},
                                       {"epsilon", eps},
                                       {"mean_deviation", dev},
                                       {"scale", scale},
                                       {"relative_deviation", dev / scale}};
    }

    // Learned-map error against the Gaussian closed form as n grows.
    if (config.contains("gaussian_case")) {
        const json& gc = config["gaussian_case"];
        const double eps = gc.value("epsilon", 0.05);
        const Vector m2 = gc.contains("target_mean") ? vector_from_json(gc["target_mean"])
                                                     : (Vector(2) << 3.0, 2.0).finished();
        Matrix S1(2, 2), S2(2, 2);
        S1 << 1.0, 0.2, 0.2, 0.7;
        S2 << 0.9, -0.2, -0.2, 1.1;
        const GaussianMeasure gsrc(Vector::Zero(2), S1);
        const GaussianMeasure gtgt(m2, S2);
        const AffineMap closed = gaussian_monge_closed_form(gsrc.mean, S1, m2, S2);

        json rows = json::array();
        for (long n : gc.value("sizes", std::vector<long>{256, 1024, 4096})) {
            Rng rng(gc.value("seed", std::uint64_t(23)) + std::uint64_t(n));
            Batch sx = sample_batch(MeasureSource{gsrc}, int(n), rng);
            Batch sy = sample_batch(MeasureSource{gtgt}, int(n), rng);
            DiscreteMeasure mu = DiscreteMeasure::uniform(sx.points);
            DiscreteMeasure nu = DiscreteMeasure::uniform(sy.points);
            const MeasureSource ms{mu}, ns{nu};

            DualSolverConfig scfg = solver_config_from_json(gc.value("solver", json::object()));
            const Regularization reg{RegKind::Entropy, eps};
            DualSolution sol = solve_dual(ms, ns, cost, reg, scfg);

            MapTrainConfig mcfg = map_config_from_json(gc.value("map", json::object()));
            MapSolution map = train_map(ms, ns, sol.u, sol.v, cost, reg, mcfg);

            Rng hrng(gc.value("seed", std::uint64_t(23)) + 5000);
            Batch held = sample_batch(MeasureSource{gsrc}, gc.value("heldout", 1000), hrng);
            const Matrix learned = apply_map(map.map, held.points);
            const Matrix reference = closed.apply(held.points);
            const double mse = (learned - reference).rowwise().squaredNorm().mean();
            const double disp = (reference - held.points).rowwise().squaredNorm().mean();
            rows.push_back({{"n", n}, {"map_mse", mse}, {"displacement_ms", disp},
                            {"relative", mse / disp}, {"clamps", sol.clamp_count}});
        }
        metrics["gaussian_case"] = {{"epsilon", eps}, {"rows", rows}};
    }

    json report = {{"metrics", metrics}, {"config", config}, {"csv_files", json::array()}};
    const json out = config.value("out", json::object());
    if (out.contains("report")) {
        std::ofstream f(out["report"].get<std::string>());
        if (!f) throw ConfigError("cannot write report");
        f << report.dump(1) << "\n";
    }
    return report;
}

}  // namespace sot::pipelines
