#pragma once

#include "sot/plan.hpp"

namespace sot {

// Neural Monge map with affine input whitening stored alongside the net, so
// callers pass and receive raw coordinates.
struct MongeMap {
    MlpSpec spec;
    MlpParams params;
    Vector norm_mean;
    Vector norm_std;
};

struct MapTrainConfig {
    int batch_size = 256;
    double learning_rate = 1e-3;
    long iterations = 5000;
    std::uint64_t seed = 0;
    long log_every = 500;
    std::vector<int> hidden_sizes = {200, 500};
    OutputActivation output_activation = OutputActivation::Identity;
    CostKind projection_cost = CostKind::SquaredEuclidean;
};

struct MapLossResult {
    double loss = 0.0;
    MlpParams grads;
};

// Pair-weighted squared-error batch loss
//   (1/p^2) sum_ij H_eps(x_i, y_j) ||y_j - f(x_i)||^2
// with H treated as a constant weight; gradients w.r.t. the map only.
MapLossResult map_loss_batch(const MongeMap& f, const Batch& bx, const Batch& by,
                             const DualPotential& u, const DualPotential& v,
                             const CostFn& cost, const Regularization& reg);

struct MapSolution {
    MongeMap map;
    TrainTrace trace;
};

// Fit f toward the barycentric projection of the plan encoded by frozen
// (u, v); the dual solve and the map fit are strictly sequential.
MapSolution train_map(const MeasureSource& mu, const MeasureSource& nu,
                      const DualPotential& u, const DualPotential& v, const CostFn& cost,
                      const Regularization& reg, const MapTrainConfig& cfg);

// Opposite projection: g maps target points toward source space, minimizing
// the H-weighted error against source batch points.
MongeMap train_reverse_map(const MeasureSource& mu, const MeasureSource& nu,
                           const DualPotential& u, const DualPotential& v,
                           const CostFn& cost, const Regularization& reg,
                           const MapTrainConfig& cfg);

Matrix apply_map(const MongeMap& f, const Matrix& points);

}  // namespace sot
