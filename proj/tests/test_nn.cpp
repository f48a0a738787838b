#include <doctest.h>

#include <cmath>

#include "sot/nn.hpp"

using namespace sot;

namespace {

MlpSpec spec_of(std::vector<int> sizes, OutputActivation out = OutputActivation::Identity) {
    MlpSpec s;
    s.layer_sizes = std::move(sizes);
    s.output_activation = out;
    return s;
}

// Random input kept away from ReLU kinks: resample until every hidden
// pre-activation clears the margin.
Matrix safe_input(const MlpSpec& spec, const MlpParams& params, int rows, Rng& rng,
                  double margin = 1e-3) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int attempt = 0; attempt < 200; ++attempt) {
        Matrix x(rows, spec.input_dim());
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < spec.input_dim(); ++j) x(i, j) = normal(rng);
        Matrix a = x;
        bool ok = true;
        for (size_t l = 0; l + 1 < spec.num_layers() && ok; ++l) {
            Matrix z = a * params.weights[l];
            z.rowwise() += params.biases[l].transpose();
            if (z.cwiseAbs().minCoeff() < margin) ok = false;
            a = z.cwiseMax(0.0);
        }
        if (ok) return x;
    }
    FAIL("could not find an input away from ReLU kinks");
    return Matrix();
}

double sum_loss(const MlpSpec& spec, const MlpParams& p, const Matrix& x,
                const Matrix& weights) {
    return (mlp_forward(spec, p, x).array() * weights.array()).sum();
}

}  // namespace

TEST_CASE("init: single linear layer shapes and zero bias") {
    const MlpSpec spec = spec_of({1, 1});
    const MlpParams p = mlp_init(spec, 3);
    REQUIRE(p.weights.size() == 1);
    CHECK(p.weights[0].rows() == 1);
    CHECK(p.weights[0].cols() == 1);
    CHECK(p.biases[0][0] == 0.0);
}

TEST_CASE("init is deterministic under a seed") {
    const MlpSpec spec = spec_of({3, 16, 2});
    const MlpParams a = mlp_init(spec, 77), b = mlp_init(spec, 77);
    for (size_t l = 0; l < a.weights.size(); ++l)
        CHECK((a.weights[l].array() == b.weights[l].array()).all());
}

TEST_CASE("init uses He scaling") {
    const MlpSpec spec = spec_of({200, 200, 1});
    const MlpParams p = mlp_init(spec, 5);
    const double target = std::sqrt(2.0 / 200.0);
    const double observed =
        std::sqrt(p.weights[0].array().square().sum() / double(p.weights[0].size()));
    CHECK(observed > 0.9 * target);
    CHECK(observed < 1.1 * target);
}

TEST_CASE("forward: zero parameters give zero output") {
    const MlpSpec spec = spec_of({2, 4, 2});
    MlpParams p = mlp_init(spec, 0);
    for (auto& w : p.weights) w.setZero();
    const Matrix out = mlp_forward(spec, p, Matrix::Random(5, 2));
    CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward: single linear layer") {
    const MlpSpec spec = spec_of({1, 1});
    MlpParams p = mlp_init(spec, 0);
    p.weights[0](0, 0) = 2.0;
    p.biases[0][0] = 1.0;
    Matrix x(1, 1);
    x << 3.0;
    CHECK(mlp_forward(spec, p, x)(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("forward: tanh output stays in (-1, 1)") {
    const MlpSpec spec = spec_of({2, 8, 3}, OutputActivation::Tanh);
    const MlpParams p = mlp_init(spec, 1);
    const Matrix out = mlp_forward(spec, p, Matrix::Random(20, 2));
    CHECK(out.maxCoeff() < 1.0);
    CHECK(out.minCoeff() > -1.0);
}

TEST_CASE("forward is deterministic") {
    const MlpSpec spec = spec_of({2, 8, 1});
    const MlpParams p = mlp_init(spec, 9);
    const Matrix x = Matrix::Random(4, 2);
    CHECK((mlp_forward(spec, p, x).array() == mlp_forward(spec, p, x).array()).all());
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
    const MlpSpec spec = spec_of({2, 4, 2});
    const MlpParams p = mlp_init(spec, 2);
    ForwardCache cache;
    mlp_forward(spec, p, Matrix::Random(3, 2), &cache);
    const BackwardResult r = mlp_backward(spec, p, cache, Matrix::Zero(3, 2));
    for (const auto& g : r.grads.weights) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& g : r.grads.biases) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward: single linear layer gradients") {
    const MlpSpec spec = spec_of({1, 1});
    MlpParams p = mlp_init(spec, 0);
    p.weights[0](0, 0) = 2.0;
    p.biases[0][0] = 1.0;
    Matrix x(1, 1);
    x << 3.0;
    ForwardCache cache;
    mlp_forward(spec, p, x, &cache);
    const BackwardResult r = mlp_backward(spec, p, cache, Matrix::Ones(1, 1));
    CHECK(r.grads.weights[0](0, 0) == doctest::Approx(3.0));
    CHECK(r.grads.biases[0][0] == doctest::Approx(1.0));
    CHECK(r.input_grad(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("backward matches central finite differences on a two-hidden-layer net") {
    const MlpSpec spec = spec_of({3, 8, 6, 2});
    const MlpParams p = mlp_init(spec, 13);
    Rng rng(14);
    const Matrix x = safe_input(spec, p, 4, rng);
    const Matrix w = Matrix::Random(4, 2);

    ForwardCache cache;
    mlp_forward(spec, p, x, &cache);
    const BackwardResult r = mlp_backward(spec, p, cache, w);

    auto loss = [&](const MlpParams& q) { return sum_loss(spec, q, x, w); };
    const GradCheckReport report = grad_check(p, loss, r.grads, 200, rng);
    CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("adam: zero gradient is the identity") {
    const MlpSpec spec = spec_of({2, 4, 1});
    MlpParams p = mlp_init(spec, 21);
    const MlpParams before = p;
    MlpParams zeros = p;
    for (auto& w : zeros.weights) w.setZero();
    for (auto& b : zeros.biases) b.setZero();
    AdamState st = AdamState::like(p);
    adam_step(p, zeros, st, 0.1);
    for (size_t l = 0; l < p.weights.size(); ++l)
        CHECK((p.weights[l] - before.weights[l]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam: bias-corrected first step has magnitude about lr") {
    const MlpSpec spec = spec_of({1, 1});
    MlpParams p = mlp_init(spec, 0);
    p.weights[0](0, 0) = 1.0;
    MlpParams g = p;
    g.weights[0](0, 0) = 0.5;  // any positive gradient
    g.biases[0].setZero();
    AdamState st = AdamState::like(p);
    adam_step(p, g, st, 0.01);
    CHECK(p.weights[0](0, 0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam drives a quadratic toward zero") {
    const MlpSpec spec = spec_of({1, 1});
    MlpParams p = mlp_init(spec, 0);
    p.weights[0](0, 0) = 1.0;
    AdamState st = AdamState::like(p);
    for (int it = 0; it < 100; ++it) {
        MlpParams g = p;
        g.weights[0](0, 0) = 2.0 * p.weights[0](0, 0);  // d/dw of w^2
        g.biases[0].setZero();
        adam_step(p, g, st, 0.1);
    }
    CHECK(std::abs(p.weights[0](0, 0)) < 0.1);
}

TEST_CASE("adam rejects non-finite gradients") {
    const MlpSpec spec = spec_of({1, 1});
    MlpParams p = mlp_init(spec, 0);
    MlpParams g = p;
    g.weights[0](0, 0) = std::nan("");
    AdamState st = AdamState::like(p);
    CHECK_THROWS_AS(adam_step(p, g, st, 0.1), NumericError);
}

TEST_CASE("grad_check: analytic least-squares gradient is tight") {
    const MlpSpec spec = spec_of({3, 1});
    const MlpParams p = mlp_init(spec, 31);
    const Matrix x = Matrix::Random(12, 3);
    const Matrix y = Matrix::Random(12, 1);

    auto loss = [&](const MlpParams& q) {
        return 0.5 * (mlp_forward(spec, q, x) - y).squaredNorm();
    };
    ForwardCache cache;
    const Matrix out = mlp_forward(spec, p, x, &cache);
    const BackwardResult r = mlp_backward(spec, p, cache, out - y);

    Rng rng(32);
    const GradCheckReport report = grad_check(p, loss, r.grads, 64, rng, 1e-6);
    CHECK(report.max_rel_error <= 1e-7);
}

TEST_CASE("grad_check: ReLU net away from kinks") {
    const MlpSpec spec = spec_of({2, 10, 1});
    const MlpParams p = mlp_init(spec, 41);
    Rng rng(42);
    const Matrix x = safe_input(spec, p, 6, rng);

    auto loss = [&](const MlpParams& q) {
        return mlp_forward(spec, q, x).sum();
    };
    ForwardCache cache;
    mlp_forward(spec, p, x, &cache);
    const BackwardResult r = mlp_backward(spec, p, cache, Matrix::Ones(6, 1));
    const GradCheckReport report = grad_check(p, loss, r.grads, 120, rng);
    CHECK(report.max_rel_error <= 1e-5);
}

TEST_CASE("grad_check flags a corrupted gradient") {
    const MlpSpec spec = spec_of({2, 6, 1});
    const MlpParams p = mlp_init(spec, 51);
    Rng rng(52);
    const Matrix x = safe_input(spec, p, 5, rng);

    auto loss = [&](const MlpParams& q) { return mlp_forward(spec, q, x).sum(); };
    ForwardCache cache;
    mlp_forward(spec, p, x, &cache);
    BackwardResult r = mlp_backward(spec, p, cache, Matrix::Ones(5, 1));
    r.grads.weights[0].array() += 0.5;  // sabotage
    const GradCheckReport report = grad_check(p, loss, r.grads, 200, rng);
    CHECK(report.max_rel_error >= 1e-2);
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(validate_spec(spec_of({3})), ConfigError);
    CHECK_THROWS_AS(validate_spec(spec_of({3, 0, 1})), ConfigError);
    CHECK_NOTHROW(validate_spec(spec_of({3, 1})));
}
