#include "sot/nn.hpp"

#include <algorithm>
#include <cmath>

namespace sot {

void validate_spec(const MlpSpec& spec) {
    require(spec.layer_sizes.size() >= 2, "MlpSpec needs input and output sizes");
    for (int s : spec.layer_sizes) require(s >= 1, "layer size must be >= 1");
}

bool MlpParams::all_finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    MlpParams p;
    for (size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const int fan_in = spec.layer_sizes[l];
        const int fan_out = spec.layer_sizes[l + 1];
        const double std_dev = std::sqrt(2.0 / double(fan_in));
        Matrix w(fan_in, fan_out);
        for (int i = 0; i < fan_in; ++i)
            for (int j = 0; j < fan_out; ++j) w(i, j) = std_dev * normal(rng);
        p.weights.push_back(std::move(w));
        p.biases.push_back(Vector::Zero(fan_out));
    }
    return p;
}

Matrix mlp_forward(const MlpSpec& spec, const MlpParams& params, const Matrix& x,
                   ForwardCache* cache) {
    require(x.cols() == spec.input_dim(), "mlp_forward: input dimension mismatch");
    const size_t L = spec.num_layers();
    require(params.weights.size() == L && params.biases.size() == L,
            "params do not match spec");
    if (cache) {
        cache->activations.clear();
        cache->activations.reserve(L + 1);
        cache->activations.push_back(x);
    }
    Matrix a = x;
    for (size_t l = 0; l < L; ++l) {
        Matrix z = a * params.weights[l];
        z.rowwise() += params.biases[l].transpose();
        if (l + 1 < L) {
            a = z.cwiseMax(0.0);  // ReLU, subgradient 0 at 0
        } else {
            switch (spec.output_activation) {
                case OutputActivation::Identity: a = std::move(z); break;
                case OutputActivation::Tanh: a = z.array().tanh().matrix(); break;
            }
        }
        if (cache) cache->activations.push_back(a);
    }
    if (!a.allFinite()) throw NumericError("mlp_forward produced non-finite output");
    return a;
}

BackwardResult mlp_backward(const MlpSpec& spec, const MlpParams& params,
                            const ForwardCache& cache, const Matrix& out_grad) {
    const size_t L = spec.num_layers();
    require(cache.activations.size() == L + 1, "cache does not match spec");
    require(out_grad.rows() == cache.activations.back().rows() &&
                out_grad.cols() == cache.activations.back().cols(),
            "out_grad shape mismatch");

    BackwardResult r;
    r.grads.weights.resize(L);
    r.grads.biases.resize(L);

    Matrix dz;
    const Matrix& out = cache.activations[L];
    switch (spec.output_activation) {
        case OutputActivation::Identity: dz = out_grad; break;
        case OutputActivation::Tanh:
            dz = out_grad.cwiseProduct((1.0 - out.array().square()).matrix());
            break;
    }
    for (size_t l = L; l-- > 0;) {
        const Matrix& a_prev = cache.activations[l];
        r.grads.weights[l] = a_prev.transpose() * dz;
        r.grads.biases[l] = dz.colwise().sum();
        Matrix da = dz * params.weights[l].transpose();
        if (l > 0) {
            // ReLU mask from the post-activation: a > 0 iff z > 0
            dz = da.cwiseProduct(
                (cache.activations[l].array() > 0.0).cast<double>().matrix());
        } else {
            r.input_grad = std::move(da);
        }
    }
    return r;
}

AdamState AdamState::like(const MlpParams& params) {
    AdamState s;
    for (const auto& w : params.weights) {
        s.m_w.push_back(Matrix::Zero(w.rows(), w.cols()));
        s.v_w.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : params.biases) {
        s.m_b.push_back(Vector::Zero(b.size()));
        s.v_b.push_back(Vector::Zero(b.size()));
    }
    return s;
}

void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, double lr) {
    if (!grads.all_finite()) throw NumericError("adam_step: non-finite gradients");
    state.step += 1;
    const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
    for (size_t l = 0; l < params.weights.size(); ++l) {
        auto& m = state.m_w[l];
        auto& v = state.v_w[l];
        m = state.beta1 * m + (1.0 - state.beta1) * grads.weights[l];
        v = state.beta2 * v + (1.0 - state.beta2) * grads.weights[l].cwiseAbs2();
        params.weights[l].array() -=
            lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.delta);
    }
    for (size_t l = 0; l < params.biases.size(); ++l) {
        auto& m = state.m_b[l];
        auto& v = state.v_b[l];
        m = state.beta1 * m + (1.0 - state.beta1) * grads.biases[l];
        v = state.beta2 * v + (1.0 - state.beta2) * grads.biases[l].cwiseAbs2();
        params.biases[l].array() -=
            lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.delta);
    }
}

void axpy_params(MlpParams& params, const MlpParams& grads, double scale) {
    for (size_t l = 0; l < params.weights.size(); ++l)
        params.weights[l] += scale * grads.weights[l];
    for (size_t l = 0; l < params.biases.size(); ++l)
        params.biases[l] += scale * grads.biases[l];
}

void scale_params(MlpParams& params, double scale) {
    for (auto& w : params.weights) w *= scale;
    for (auto& b : params.biases) b *= scale;
}

GradCheckReport grad_check(const MlpParams& params,
                           const std::function<double(const MlpParams&)>& loss,
                           const MlpParams& analytic_grads, int probes, Rng& rng,
                           double step) {
    // Collect flat coordinates (layer, row, col, is_bias).
    struct Coord { size_t l; Eigen::Index i, j; bool bias; };
    std::vector<Coord> coords;
    for (size_t l = 0; l < params.weights.size(); ++l) {
        for (Eigen::Index i = 0; i < params.weights[l].rows(); ++i)
            for (Eigen::Index j = 0; j < params.weights[l].cols(); ++j)
                coords.push_back({l, i, j, false});
        for (Eigen::Index i = 0; i < params.biases[l].size(); ++i)
            coords.push_back({l, i, 0, true});
    }
    std::vector<size_t> order(coords.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    const size_t count = std::min<size_t>(static_cast<size_t>(probes), coords.size());

    GradCheckReport report;
    MlpParams work = params;
    for (size_t k = 0; k < count; ++k) {
        const Coord& c = coords[order[k]];
        double& slot = c.bias ? work.biases[c.l][c.i] : work.weights[c.l](c.i, c.j);
        const double orig = slot;
        slot = orig + step;
        const double lp = loss(work);
        slot = orig - step;
        const double lm = loss(work);
        slot = orig;
        const double numeric = (lp - lm) / (2.0 * step);
        const double analytic =
            c.bias ? analytic_grads.biases[c.l][c.i] : analytic_grads.weights[c.l](c.i, c.j);
        const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
        report.max_rel_error =
            std::max(report.max_rel_error, std::abs(numeric - analytic) / denom);
        report.checked += 1;
    }
    return report;
}

}  // namespace sot
