#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sot/pipelines.hpp"

using namespace sot;
using namespace sot::pipelines;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::path("/tmp") / ("sot_pipe_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

json tiny_solve_config(const TempDir& dir) {
    return {
        {"source", {{"type", "gaussian"}, {"mean", {0.0, 0.0}},
                    {"cov", {{0.05, 0.0}, {0.0, 0.05}}}}},
        {"target", {{"type", "ring"}, {"atoms", 4}, {"radius", 0.5}}},
        {"reg", {{"kind", "l2"}, {"epsilon", 0.05}}},
        {"cost", "sqeuclidean"},
        {"solver", {{"batch_size", 64}, {"learning_rate", 1e-3}, {"iterations", 400},
                    {"seed", 1}, {"log_every", 100}, {"hidden_sizes", {16, 16}},
                    {"eval_batches", 2}, {"eval_batch_size", 64}}},
        {"out", {{"checkpoint", dir.file("dual.json")}, {"trace", dir.file("trace.csv")}}},
        {"deterministic", true},
    };
}

}  // namespace

TEST_CASE("knn: exact hits, tie break, separable blobs") {
    Matrix train(3, 2);
    train << 0, 0, 1, 0, 2, 0;
    IntVector labels(3);
    labels << 5, 7, 9;

    Matrix q1(1, 2);
    q1 << 1, 0;
    CHECK(knn_classify(train, labels, q1)[0] == 7);

    // Equidistant between points 0 and 1: the lower training index wins.
    Matrix q2(1, 2);
    q2 << 0.5, 0.0;
    CHECK(knn_classify(train, labels, q2)[0] == 5);

    Rng rng(1);
    const BlobPair pair = make_blobs(3, 50, 2, Vector::Zero(2), 0.0, rng);
    const IntVector pred =
        knn_classify(pair.source.points(), *pair.source.labels(), pair.target.points());
    CHECK(accuracy(pred, *pair.target.labels()) == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip is bitwise for vector potentials") {
    TempDir dir;
    Rng rng(2);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector u(17), v(13);
    for (int i = 0; i < 17; ++i) u[i] = normal(rng) * std::pow(10.0, i % 7 - 3);
    for (int i = 0; i < 13; ++i) v[i] = normal(rng);

    const json ckpt = make_dual_checkpoint(VectorPotential{u}, VectorPotential{v},
                                           {RegKind::Entropy, 0.37},
                                           CostKind::SquaredEuclidean, 2, 0, json{});
    save_checkpoint(ckpt, dir.file("dual.json"));
    const json back = load_checkpoint(dir.file("dual.json"));
    const Vector u2 = vector_from_json(back["payload"]["u"]["values"]);
    REQUIRE(u2.size() == u.size());
    for (int i = 0; i < u.size(); ++i) CHECK(u2[i] == u[i]);  // bitwise
    CHECK(back["metadata"]["reg"]["epsilon"].get<double>() == 0.37);
}

TEST_CASE("checkpoint round trip preserves monge map outputs exactly") {
    TempDir dir;
    MongeMap f;
    f.spec.layer_sizes = {2, 8, 2};
    f.spec.output_activation = OutputActivation::Tanh;
    f.params = mlp_init(f.spec, 3);
    f.norm_mean = (Vector(2) << 0.1, -0.2).finished();
    f.norm_std = (Vector(2) << 1.3, 0.8).finished();

    const json ckpt = make_map_checkpoint(f, {RegKind::L2, 0.2}, CostKind::SquaredEuclidean,
                                          false, json{{"type", "ring"}}, json{});
    save_checkpoint(ckpt, dir.file("map.json"));
    const MongeMap g = monge_map_from_json(
        load_checkpoint(dir.file("map.json"))["payload"]["map"]);

    const Matrix x = Matrix::Random(9, 2);
    const Matrix fx = apply_map(f, x), gx = apply_map(g, x);
    CHECK((fx.array() == gx.array()).all());
}

TEST_CASE("checkpoint loader rejects truncated and versionless files") {
    TempDir dir;
    std::ofstream(dir.file("trunc.json")) << "{\"version\": 1, \"kind\": ";
    CHECK_THROWS_AS(load_checkpoint(dir.file("trunc.json")), ConfigError);

    std::ofstream(dir.file("nover.json")) << "{\"kind\": \"dual_potentials\"}";
    CHECK_THROWS_AS(load_checkpoint(dir.file("nover.json")), ConfigError);

    std::ofstream(dir.file("badver.json")) << "{\"version\": 999}";
    CHECK_THROWS_AS(load_checkpoint(dir.file("badver.json")), ConfigError);

    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.json")), ConfigError);
}

TEST_CASE("cmd_solve writes a loadable checkpoint and a parsable trace") {
    TempDir dir;
    const json report = cmd_solve(tiny_solve_config(dir));
    CHECK(report["metrics"]["runs"].size() == 1);

    const json ckpt = load_checkpoint(dir.file("dual.json"));
    CHECK(ckpt["kind"] == "dual_potentials");
    const DualPotential u = potential_from_json(ckpt["payload"]["u"]);
    CHECK(std::holds_alternative<NetworkPotential>(u));
    const DualPotential v = potential_from_json(ckpt["payload"]["v"]);
    CHECK(std::holds_alternative<VectorPotential>(v));

    const TrainTrace trace = load_trace_csv(dir.file("trace.csv"));
    REQUIRE(trace.size() >= 2);
    CHECK(trace.front().iteration == 0);
    CHECK(trace.back().iteration == 400);
    for (const auto& p : trace) CHECK(p.wall_ms == 0.0);  // deterministic mode
}

TEST_CASE("cmd_solve accepts an epsilon grid with aligned learning rates") {
    TempDir dir;
    json config = tiny_solve_config(dir);
    config["reg"] = {{"kind", "l2"}, {"epsilon_grid", {0.025, 0.1, 1.0}}};
    config["solver"]["learning_rate_grid"] = {5.0, 20.0, 20.0};
    config["solver"]["batch_size_grid"] = {128, 64, 32};
    config["solver"]["iterations"] = 40;
    const json report = cmd_solve(config);
    CHECK(report["metrics"]["runs"].size() == 3);
    CHECK(fs::exists(dir.file("dual_eps0.025.json")));
    CHECK(fs::exists(dir.file("dual_eps1.json")));
}

TEST_CASE("cmd_solve run twice in deterministic mode is file-identical") {
    TempDir a, b;
    json ca = tiny_solve_config(a), cb = tiny_solve_config(b);
    cmd_solve(ca);
    cmd_solve(cb);
    CHECK(slurp(a.file("trace.csv")) == slurp(b.file("trace.csv")));
    // Checkpoints echo their config, which contains distinct paths; compare payloads.
    const json pa = load_checkpoint(a.file("dual.json"))["payload"];
    const json pb = load_checkpoint(b.file("dual.json"))["payload"];
    CHECK(pa.dump() == pb.dump());
}

TEST_CASE("cmd_solve refuses a missing input file without writing outputs") {
    TempDir dir;
    json config = tiny_solve_config(dir);
    config["source"] = {{"type", "csv"}, {"path", dir.file("absent.csv")}};
    CHECK_THROWS_AS(cmd_solve(config), ConfigError);
    CHECK_FALSE(fs::exists(dir.file("dual.json")));
    CHECK_FALSE(fs::exists(dir.file("trace.csv")));
}

TEST_CASE("cmd_map_train trains forward and reverse maps, validating metadata") {
    TempDir dir;
    cmd_solve(tiny_solve_config(dir));

    json mt = {
        {"dual_checkpoint", dir.file("dual.json")},
        {"source", tiny_solve_config(dir)["source"]},
        {"target", tiny_solve_config(dir)["target"]},
        {"reg", {{"kind", "l2"}, {"epsilon", 0.05}}},
        {"cost", "sqeuclidean"},
        {"map", {{"batch_size", 32}, {"learning_rate", 1e-3}, {"iterations", 200},
                 {"seed", 2}, {"hidden_sizes", {16, 16}}}},
        {"out", {{"checkpoint", dir.file("map.json")}, {"trace", dir.file("map_trace.csv")}}},
    };
    const json report = cmd_map_train(mt);
    CHECK(report.contains("metrics"));
    const json ckpt = load_checkpoint(dir.file("map.json"));
    CHECK(ckpt["kind"] == "monge_map");
    CHECK(ckpt["metadata"]["reverse"] == false);

    // Reverse flag trains the opposite projection.
    mt["reverse"] = true;
    mt["out"] = {{"checkpoint", dir.file("rmap.json")}};
    cmd_map_train(mt);
    CHECK(load_checkpoint(dir.file("rmap.json"))["metadata"]["reverse"] == true);

    // Mismatched epsilon is rejected.
    mt["reg"]["epsilon"] = 0.25;
    CHECK_THROWS_AS(cmd_map_train(mt), ConfigError);
}

TEST_CASE("cmd_generate emits normalized histograms and is seed-stable") {
    TempDir dir;
    cmd_solve(tiny_solve_config(dir));
    json mt = {
        {"dual_checkpoint", dir.file("dual.json")},
        {"source", tiny_solve_config(dir)["source"]},
        {"target", tiny_solve_config(dir)["target"]},
        {"reg", {{"kind", "l2"}, {"epsilon", 0.05}}},
        {"map", {{"batch_size", 32}, {"iterations", 150}, {"hidden_sizes", {16, 16}}}},
        {"out", {{"checkpoint", dir.file("map.json")}}},
    };
    cmd_map_train(mt);

    json gen = {
        {"map_checkpoint", dir.file("map.json")},
        {"samples", 2000},
        {"seed", 7},
        {"bins", 16},
        {"out", {{"points", dir.file("points.csv")}, {"histogram", dir.file("hist.csv")}}},
    };
    const json report = cmd_generate(gen);
    CHECK(report["metrics"]["histogram_mass"].get<double>() ==
          doctest::Approx(1.0).epsilon(1e-9));

    const std::string first_points = slurp(dir.file("points.csv"));
    const std::string first_hist = slurp(dir.file("hist.csv"));
    cmd_generate(gen);
    CHECK(slurp(dir.file("points.csv")) == first_points);
    CHECK(slurp(dir.file("hist.csv")) == first_hist);
}

TEST_CASE("cmd_da with identical domains keeps every method near the source baseline") {
    TempDir dir;
    const json config = {
        {"blobs", {{"k", 3}, {"per_class", 40}, {"d", 2}, {"shift", {0.0, 0.0}},
                   {"rotation_deg", 0.0}, {"seed", 3}}},
        {"cost", "sqeuclidean"},
        {"entropy_epsilon", 0.5},
        {"l2_epsilon", 1.0},
        {"sinkhorn", {{"epsilon", 0.5}}},
        {"solver", {{"batch_size", 64}, {"learning_rate", 1.0}, {"iterations", 3000},
                    {"seed", 4}, {"log_every", 0}}},
        {"map", {{"batch_size", 64}, {"learning_rate", 3e-3}, {"iterations", 1500},
                 {"seed", 5}, {"hidden_sizes", {32, 32}}}},
        {"out", {{"report", dir.file("report.json")}}},
    };
    const json report = cmd_da(config);
    const json& m = report["metrics"];
    const double src = m["source_only"].get<double>();
    CHECK(src >= 0.9);  // separable blobs, identical domains
    for (const char* key : {"barproj_exact", "barproj_sinkhorn", "barproj_dual_entropy",
                            "barproj_dual_l2", "monge_map_entropy", "monge_map_l2"}) {
        CHECK(m.contains(key));
        CHECK(m[key].get<double>() >= src - 0.1);
    }
    CHECK(fs::exists(dir.file("report.json")));
}

TEST_CASE("cli: exit code 2 on missing input, 0 on success") {
    const char* cli = std::getenv("SOT_CLI");
    REQUIRE(cli != nullptr);
    TempDir dir;

    json bad = tiny_solve_config(dir);
    bad["source"] = {{"type", "csv"}, {"path", dir.file("absent.csv")}};
    std::ofstream(dir.file("bad.json")) << bad.dump();
    const int rc_bad = std::system(
        (std::string(cli) + " solve -c " + dir.file("bad.json") + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc_bad) == 2);

    json good = tiny_solve_config(dir);
    good["solver"]["iterations"] = 50;
    std::ofstream(dir.file("good.json")) << good.dump();
    const int rc_good = std::system(
        (std::string(cli) + " solve -c " + dir.file("good.json") + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc_good) == 0);
    CHECK(fs::exists(dir.file("dual.json")));

    const int rc_noargs = std::system((std::string(cli) + " >/dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(rc_noargs) != 0);
}
