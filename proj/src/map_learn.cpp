#include "sot/map_learn.hpp"

#include <chrono>
#include <cmath>

namespace sot {

namespace {

Matrix normalize_input(const MongeMap& f, const Matrix& points) {
    Matrix x = points.rowwise() - f.norm_mean.transpose();
    x.array().rowwise() /= f.norm_std.transpose().array();
    return x;
}

// Whitening stats for the measure whose points the net consumes.
void whitening(const MeasureSource& src, Vector& mean, Vector& std_dev) {
    const Eigen::Index d = source_dim(src);
    if (const auto* dm = std::get_if<DiscreteMeasure>(&src); dm && dm->size() < 2) {
        mean = dm->points().row(0);
        std_dev = Vector::Ones(d);
        return;
    }
    Moments mom = source_moments(src);
    mean = mom.mean;
    std_dev = mom.covariance.diagonal().cwiseMax(1e-12).cwiseSqrt();
}

Matrix pair_weights(const DualPotential& u, const DualPotential& v, const Batch& bx,
                    const Batch& by, const CostFn& cost, const Regularization& reg) {
    const Vector uv = potential_eval(u, bx.points, bx.indices);
    const Vector vv = potential_eval(v, by.points, by.indices);
    Matrix s = (-cost_matrix(cost, bx.points, by.points)).eval();
    s.colwise() += uv;
    s.rowwise() += vv.transpose();
    Matrix h = h_eps_matrix(reg, s);
    if (!h.allFinite()) throw NumericError("non-finite H_eps weights in map loss");
    return h;
}

// Loss and net gradients for sum_ab W_ab ||B_b - net(A_a)||^2 / (pq);
// W is (rows of A) x (rows of B), already oriented for the fit direction.
MapLossResult weighted_fit(const MongeMap& f, const Matrix& A, const Matrix& B,
                           const Matrix& W, double scale) {
    ForwardCache cache;
    const Matrix out = mlp_forward(f.spec, f.params, normalize_input(f, A), &cache);

    const Vector wa = W.rowwise().sum();
    const Vector wb = W.colwise().sum().transpose();
    const Matrix wB = W * B;

    double loss = (wa.array() * out.rowwise().squaredNorm().array()).sum();
    loss -= 2.0 * (out.array() * wB.array()).sum();
    loss += (wb.array() * B.rowwise().squaredNorm().array()).sum();
    loss *= scale;

    Matrix out_grad = 2.0 * scale * (wa.asDiagonal() * out - wB);
    BackwardResult back = mlp_backward(f.spec, f.params, cache, out_grad);
    return {loss, std::move(back.grads)};
}

}  // namespace

MapLossResult map_loss_batch(const MongeMap& f, const Batch& bx, const Batch& by,
                             const DualPotential& u, const DualPotential& v,
                             const CostFn& cost, const Regularization& reg) {
    const Matrix h = pair_weights(u, v, bx, by, cost, reg);
    const double scale = 1.0 / double(bx.points.rows() * by.points.rows());
    return weighted_fit(f, bx.points, by.points, h, scale);
}

Matrix apply_map(const MongeMap& f, const Matrix& points) {
    require(points.cols() == f.spec.input_dim(), "apply_map: dimension mismatch");
    return mlp_forward(f.spec, f.params, normalize_input(f, points));
}

namespace {

MapSolution train_direction(const MeasureSource& mu, const MeasureSource& nu,
                            const DualPotential& u, const DualPotential& v,
                            const CostFn& cost, const Regularization& reg,
                            const MapTrainConfig& cfg, bool reverse) {
    require(cfg.projection_cost == CostKind::SquaredEuclidean,
            "only the squared-Euclidean projection cost is supported");
    require(cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "bad map training config");
    const Eigen::Index d = source_dim(mu);
    require(d == source_dim(nu), "marginals differ in dimension");

    const MeasureSource& input_side = reverse ? nu : mu;
    MongeMap f;
    f.spec.layer_sizes.push_back(static_cast<int>(d));
    for (int h : cfg.hidden_sizes) f.spec.layer_sizes.push_back(h);
    f.spec.layer_sizes.push_back(static_cast<int>(d));
    f.spec.output_activation = cfg.output_activation;
    f.params = mlp_init(f.spec, cfg.seed + 7);
    whitening(input_side, f.norm_mean, f.norm_std);

    AdamState adam = AdamState::like(f.params);
    Rng rng(cfg.seed);
    MapSolution out;
    double train_ms = 0.0;
    const double scale = 1.0 / double(cfg.batch_size) / double(cfg.batch_size);

    for (long it = 1; it <= cfg.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        Batch bx = sample_batch(mu, cfg.batch_size, rng);
        Batch by = sample_batch(nu, cfg.batch_size, rng);
        Matrix h = pair_weights(u, v, bx, by, cost, reg);
        MapLossResult res =
            reverse ? weighted_fit(f, by.points, bx.points, h.transpose(), scale)
                    : weighted_fit(f, bx.points, by.points, h, scale);
        adam_step(f.params, res.grads, adam, cfg.learning_rate);
        const auto t1 = std::chrono::steady_clock::now();
        train_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
        if ((cfg.log_every > 0 && it % cfg.log_every == 0) || it == cfg.iterations)
            out.trace.push_back({it, train_ms, res.loss});
    }
    out.map = std::move(f);
    return out;
}

}  // namespace

MapSolution train_map(const MeasureSource& mu, const MeasureSource& nu,
                      const DualPotential& u, const DualPotential& v, const CostFn& cost,
                      const Regularization& reg, const MapTrainConfig& cfg) {
    return train_direction(mu, nu, u, v, cost, reg, cfg, false);
}

MongeMap train_reverse_map(const MeasureSource& mu, const MeasureSource& nu,
                           const DualPotential& u, const DualPotential& v,
                           const CostFn& cost, const Regularization& reg,
                           const MapTrainConfig& cfg) {
    return train_direction(mu, nu, u, v, cost, reg, cfg, true).map;
}

}  // namespace sot
