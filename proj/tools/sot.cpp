// Command-line front end: solve, map-train, generate, da, benchmark, converge.
// Exit codes: 0 ok, 1 numeric failure, 2 config failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "sot/pipelines.hpp"

namespace {

using sot::json;

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw sot::ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw sot::ConfigError("malformed config " + path + ": " + e.what());
    }
    return j;
}

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<long> iterations;
    std::optional<double> epsilon;
    bool det_on = false;
    bool det_off = false;
    std::string report_out;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("-c,--config", opts.config_path, "JSON config file")->required();
    cmd->add_option("--seed", opts.seed, "override the top-level seed");
    cmd->add_option("--iterations", opts.iterations, "override solver iterations");
    cmd->add_option("--epsilon", opts.epsilon, "override the regularization epsilon");
    cmd->add_option("--report", opts.report_out, "write the report JSON here");
    cmd->add_flag("--deterministic", opts.det_on, "zero wall-clock columns in outputs");
    cmd->add_flag("--no-deterministic", opts.det_off, "keep real wall-clock columns");
}

json apply_overrides(json config, const CommonOpts& opts) {
    if (opts.seed) {
        config["seed"] = *opts.seed;
        if (config.contains("solver")) config["solver"]["seed"] = *opts.seed;
        if (config.contains("map")) config["map"]["seed"] = *opts.seed;
        if (config.contains("blobs")) config["blobs"]["seed"] = *opts.seed;
    }
    if (opts.iterations && config.contains("solver"))
        config["solver"]["iterations"] = *opts.iterations;
    if (opts.epsilon && config.contains("reg")) config["reg"]["epsilon"] = *opts.epsilon;
    if (opts.det_on) config["deterministic"] = true;
    if (opts.det_off) config["deterministic"] = false;
    return config;
}

int run(const std::function<json(const json&)>& command, const CommonOpts& opts) {
    const json config = apply_overrides(load_config(opts.config_path), opts);
    const json report = command(config);
    if (!opts.report_out.empty()) {
        std::ofstream out(opts.report_out);
        if (!out) throw sot::ConfigError("cannot write report: " + opts.report_out);
        out << report.dump(1) << "\n";
    }
    std::cout << report["metrics"].dump(1) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic dual solvers for regularized optimal transport"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::function<json(const json&)> command;

    auto* solve = app.add_subcommand("solve", "run the stochastic dual solver");
    add_common(solve, opts);
    solve->callback([&] { command = sot::pipelines::cmd_solve; });

    auto* map_train = app.add_subcommand("map-train", "fit a Monge map to dual potentials");
    add_common(map_train, opts);
    map_train->callback([&] { command = sot::pipelines::cmd_map_train; });

    auto* generate = app.add_subcommand("generate", "sample through a trained map");
    add_common(generate, opts);
    generate->callback([&] { command = sot::pipelines::cmd_generate; });

    auto* da = app.add_subcommand("da", "domain-adaptation pipeline on labeled blobs");
    add_common(da, opts);
    da->callback([&] { command = sot::pipelines::cmd_da; });

    auto* bench = app.add_subcommand("benchmark", "dual vs semi-dual timing study");
    add_common(bench, opts);
    bench->callback([&] { command = sot::pipelines::cmd_benchmark; });

    auto* converge = app.add_subcommand("converge", "epsilon and support-size sweeps");
    add_common(converge, opts);
    converge->callback([&] { command = sot::pipelines::cmd_converge; });

    CLI11_PARSE(app, argc, argv);

    try {
        return run(command, opts);
    } catch (const sot::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const sot::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
