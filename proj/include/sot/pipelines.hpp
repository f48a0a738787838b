#pragma once

#include "sot/baselines.hpp"
#include "sot/checkpoint.hpp"

namespace sot::pipelines {

// 1-nearest-neighbor by squared Euclidean distance; ties break to the lowest
// training index.
IntVector knn_classify(const Matrix& train_points, const IntVector& train_labels,
                       const Matrix& query_points);

double accuracy(const IntVector& predicted, const IntVector& truth);

// Measure specs: {"type": "csv" | "gaussian" | "gaussian_fit" | "mixture" |
// "discrete" | "ring" | "blobs", ...}.
MeasureSource measure_from_json(const json& spec);

// Inline (resolved) form suitable for embedding in a checkpoint.
json measure_to_json(const MeasureSource& src);

void write_trace_csv(const std::string& path, const TrainTrace& trace,
                     bool deterministic);
TrainTrace load_trace_csv(const std::string& path);

DualSolverConfig solver_config_from_json(const json& j);
MapTrainConfig map_config_from_json(const json& j);

// CLI pipelines. Each takes a parsed config, validates before writing any
// output, writes the files named under config["out"], and returns the report.
json cmd_solve(const json& config);
json cmd_map_train(const json& config);
json cmd_generate(const json& config);
json cmd_da(const json& config);
json cmd_benchmark(const json& config);
json cmd_converge(const json& config);

}  // namespace sot::pipelines
