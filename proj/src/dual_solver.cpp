#include "sot/dual_solver.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>

namespace sot {

void validate_reg(const Regularization& reg) {
    require(reg.epsilon > 0.0, "regularization epsilon must be positive");
}

double f_eps(const Regularization& reg, double s) {
    switch (reg.kind) {
        case RegKind::Entropy: {
            const double e =
                std::clamp(s / reg.epsilon, kEntropyExponentFloor, kEntropyExponentClamp);
            return -reg.epsilon * std::exp(e);
        }
        case RegKind::L2: {
            const double sp = std::max(s, 0.0);
            return -sp * sp / (4.0 * reg.epsilon);
        }
    }
    return 0.0;
}

double f_eps_partial(const Regularization& reg, double s) {
    switch (reg.kind) {
        case RegKind::Entropy: {
            const double e =
                std::clamp(s / reg.epsilon, kEntropyExponentFloor, kEntropyExponentClamp);
            return -std::exp(e);
        }
        case RegKind::L2:
            return -std::max(s, 0.0) / (2.0 * reg.epsilon);
    }
    return 0.0;
}

Matrix f_eps_matrix(const Regularization& reg, const Matrix& s) {
    if (reg.kind == RegKind::Entropy) {
        return (-reg.epsilon * ((s.array() / reg.epsilon)
                                    .min(kEntropyExponentClamp)
                                    .max(kEntropyExponentFloor))
                                   .exp())
            .matrix();
    }
    return (-s.array().max(0.0).square() / (4.0 * reg.epsilon)).matrix();
}

Matrix f_eps_partial_matrix(const Regularization& reg, const Matrix& s) {
    if (reg.kind == RegKind::Entropy) {
        return (-((s.array() / reg.epsilon)
                      .min(kEntropyExponentClamp)
                      .max(kEntropyExponentFloor))
                     .exp())
            .matrix();
    }
    return (-s.array().max(0.0) / (2.0 * reg.epsilon)).matrix();
}

namespace {

long count_clamps(const Regularization& reg, const Matrix& s) {
    if (reg.kind != RegKind::Entropy) return 0;
    return (s.array() / reg.epsilon > kEntropyExponentClamp).count();
}

Vector potential_on_support(const DualPotential& u, const DiscreteMeasure& m) {
    if (const auto* vp = std::get_if<VectorPotential>(&u)) {
        require(vp->values.size() == m.size(), "vector potential/support size mismatch");
        return vp->values;
    }
    const auto& np = std::get<NetworkPotential>(u);
    return mlp_forward(np.spec, np.params, m.points());
}

}  // namespace

bool is_vector_potential(const DualPotential& u) {
    return std::holds_alternative<VectorPotential>(u);
}

Vector potential_eval(const DualPotential& u, const Matrix& xb,
                      const std::optional<IntVector>& indices) {
    if (const auto* vp = std::get_if<VectorPotential>(&u)) {
        require(indices.has_value(), "vector potential requires support indices");
        Vector out(indices->size());
        for (Eigen::Index i = 0; i < indices->size(); ++i) {
            const int k = (*indices)[i];
            require(k >= 0 && k < vp->values.size(), "potential index out of range");
            out[i] = vp->values[k];
        }
        return out;
    }
    const auto& np = std::get<NetworkPotential>(u);
    require(np.spec.output_dim() == 1, "dual potential network must output a scalar");
    return mlp_forward(np.spec, np.params, xb);
}

DualAscent::DualAscent(DualPotential u, DualPotential v, CostFn cost, Regularization reg)
    : u_(std::move(u)), v_(std::move(v)), cost_(std::move(cost)), reg_(reg) {
    validate_reg(reg_);
    if (const auto* np = std::get_if<NetworkPotential>(&u_)) adam_u_ = AdamState::like(np->params);
    if (const auto* np = std::get_if<NetworkPotential>(&v_)) adam_v_ = AdamState::like(np->params);
}

void DualAscent::step(const Batch& bx, const Batch& by, double gamma) {
    step(bx, by, gamma, gamma);
}

void DualAscent::step(const Batch& bx, const Batch& by, double gamma_net,
                      double gamma_vec) {
    const Eigen::Index p = bx.points.rows();
    const Eigen::Index q = by.points.rows();

    ForwardCache cache_u, cache_v;
    Vector u_vals, v_vals;
    if (const auto* np = std::get_if<NetworkPotential>(&u_)) {
        u_vals = mlp_forward(np->spec, np->params, bx.points, &cache_u);
    } else {
        u_vals = potential_eval(u_, bx.points, bx.indices);
    }
    if (const auto* np = std::get_if<NetworkPotential>(&v_)) {
        v_vals = mlp_forward(np->spec, np->params, by.points, &cache_v);
    } else {
        v_vals = potential_eval(v_, by.points, by.indices);
    }

    Matrix s = (-cost_matrix(cost_, bx.points, by.points)).eval();
    s.colwise() += u_vals;
    s.rowwise() += v_vals.transpose();
    clamp_count_ += count_clamps(reg_, s);

    const Matrix g = f_eps_partial_matrix(reg_, s);
    const double scale = 1.0 / double(p * q);
    // d(mean objective)/d u(x_i) and /d v(y_j)
    Vector row_grad = scale * (double(q) + g.rowwise().sum().array()).matrix();
    Vector col_grad = scale * (double(p) + g.colwise().sum().transpose().array()).matrix();

    if (!row_grad.allFinite() || !col_grad.allFinite())
        throw NumericError("dual step produced non-finite gradient, max|s| = " +
                           std::to_string(s.cwiseAbs().maxCoeff()));

    if (auto* vp = std::get_if<VectorPotential>(&u_)) {
        for (Eigen::Index i = 0; i < p; ++i)
            vp->values[(*bx.indices)[i]] += gamma_vec * row_grad[i];
    } else {
        auto& np = std::get<NetworkPotential>(u_);
        BackwardResult back = mlp_backward(np.spec, np.params, cache_u, row_grad);
        scale_params(back.grads, -1.0);  // Adam minimizes; we ascend
        adam_step(np.params, back.grads, *adam_u_, gamma_net);
    }
    if (auto* vp = std::get_if<VectorPotential>(&v_)) {
        for (Eigen::Index j = 0; j < q; ++j)
            vp->values[(*by.indices)[j]] += gamma_vec * col_grad[j];
    } else {
        auto& np = std::get<NetworkPotential>(v_);
        BackwardResult back = mlp_backward(np.spec, np.params, cache_v, col_grad);
        scale_params(back.grads, -1.0);
        adam_step(np.params, back.grads, *adam_v_, gamma_net);
    }
}

namespace {

DualPotential make_potential(const MeasureSource& src, const DualSolverConfig& cfg,
                             std::uint64_t seed) {
    if (const auto* dm = std::get_if<DiscreteMeasure>(&src))
        return VectorPotential{Vector::Zero(dm->size())};
    MlpSpec spec;
    spec.layer_sizes.push_back(static_cast<int>(source_dim(src)));
    for (int h : cfg.hidden_sizes) spec.layer_sizes.push_back(h);
    spec.layer_sizes.push_back(1);
    spec.output_activation = OutputActivation::Identity;
    return NetworkPotential{spec, mlp_init(spec, seed)};
}

constexpr Eigen::Index kExactSumLimit = 4'000'000;

}  // namespace

DualSolution solve_dual(const MeasureSource& mu, const MeasureSource& nu,
                        const CostFn& cost, const Regularization& reg,
                        const DualSolverConfig& cfg) {
    require(source_dim(mu) == source_dim(nu), "marginals differ in dimension");
    require(cfg.batch_size >= 1, "batch size must be positive");
    require(cfg.learning_rate > 0.0, "learning rate must be positive");
    validate_reg(reg);

    DualAscent ascent(make_potential(mu, cfg, cfg.seed + 1),
                      make_potential(nu, cfg, cfg.seed + 2), cost, reg);
    Rng rng(cfg.seed);
    const std::uint64_t eval_seed = cfg.seed ^ kEvalSeedMix;

    DualSolution out;
    double train_ms = 0.0;
    auto log_point = [&](long it) {
        const double obj =
            dual_objective_estimate(ascent.u(), ascent.v(), mu, nu, cost, reg,
                                    cfg.eval_batches, cfg.eval_batch_size, eval_seed);
        out.trace.push_back({it, train_ms, obj});
    };

    log_point(0);
    for (long it = 1; it <= cfg.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        Batch bx = sample_batch(mu, cfg.batch_size, rng);
        Batch by = sample_batch(nu, cfg.batch_size, rng);
        const double decay =
            1.0 + cfg.lr_decay * double(std::max<long>(0, it - cfg.lr_decay_after));
        ascent.step(bx, by, cfg.learning_rate / decay,
                    (cfg.vector_learning_rate > 0.0 ? cfg.vector_learning_rate
                                                    : cfg.learning_rate) /
                        decay);
        const auto t1 = std::chrono::steady_clock::now();
        train_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
        if ((cfg.log_every > 0 && it % cfg.log_every == 0) || it == cfg.iterations)
            log_point(it);
    }
    out.u = ascent.u();
    out.v = ascent.v();
    out.clamp_count = ascent.clamp_count();
    return out;
}

double dual_objective_exact(const DualPotential& u, const DualPotential& v,
                            const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                            const CostFn& cost, const Regularization& reg) {
    const Vector uf = potential_on_support(u, mu);
    const Vector vf = potential_on_support(v, nu);
    const Vector& a = mu.weights();
    const Vector& b = nu.weights();

    double obj = a.dot(uf) + b.dot(vf);
    // Penalty term blockwise to keep memory bounded on larger supports.
    const Eigen::Index block = std::max<Eigen::Index>(1, kExactSumLimit / nu.size());
    for (Eigen::Index r0 = 0; r0 < mu.size(); r0 += block) {
        const Eigen::Index rows = std::min(block, mu.size() - r0);
        Matrix s = (-cost_matrix(cost, mu.points().middleRows(r0, rows), nu.points())).eval();
        s.colwise() += uf.segment(r0, rows);
        s.rowwise() += vf.transpose();
        obj += a.segment(r0, rows).transpose() * f_eps_matrix(reg, s) * b;
    }
    return obj;
}

double dual_objective_estimate(const DualPotential& u, const DualPotential& v,
                               const MeasureSource& mu, const MeasureSource& nu,
                               const CostFn& cost, const Regularization& reg,
                               int eval_batches, int p, std::uint64_t seed) {
    require(eval_batches >= 1 && p >= 1, "bad evaluation settings");
    if (is_discrete(mu) && is_discrete(nu)) {
        const auto& dmu = std::get<DiscreteMeasure>(mu);
        const auto& dnu = std::get<DiscreteMeasure>(nu);
        if (dmu.size() * dnu.size() <= kExactSumLimit)
            return dual_objective_exact(u, v, dmu, dnu, cost, reg);
    }
    Rng rng(seed);
    double total = 0.0;
    for (int b = 0; b < eval_batches; ++b) {
        Batch bx = sample_batch(mu, p, rng);
        Batch by = sample_batch(nu, p, rng);
        const Vector uv = potential_eval(u, bx.points, bx.indices);
        const Vector vv = potential_eval(v, by.points, by.indices);
        Matrix s = (-cost_matrix(cost, bx.points, by.points)).eval();
        s.colwise() += uv;
        s.rowwise() += vv.transpose();
        total += uv.mean() + vv.mean() + f_eps_matrix(reg, s).mean();
    }
    return total / double(eval_batches);
}

}  // namespace sot
