#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sot/common.hpp"

namespace sot {

enum class OutputActivation { Identity, Tanh };

// Fully-connected net: layer_sizes = input -> hidden... -> output.
// Hidden activations are ReLU.
struct MlpSpec {
    std::vector<int> layer_sizes;
    OutputActivation output_activation = OutputActivation::Identity;

    int input_dim() const { return layer_sizes.front(); }
    int output_dim() const { return layer_sizes.back(); }
    size_t num_layers() const { return layer_sizes.size() - 1; }
};

void validate_spec(const MlpSpec& spec);

// weights[l] is (fan_in x fan_out); rows of a batch are samples.
struct MlpParams {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    bool all_finite() const;
};

// He-scaled Gaussian weights (std = sqrt(2/fan_in)), zero biases.
MlpParams mlp_init(const MlpSpec& spec, std::uint64_t seed);

// activations[0] is the input, activations[l] the post-activation output of
// layer l. Enough to rebuild ReLU masks and the tanh derivative.
struct ForwardCache {
    std::vector<Matrix> activations;
};

Matrix mlp_forward(const MlpSpec& spec, const MlpParams& params, const Matrix& x,
                   ForwardCache* cache = nullptr);

struct BackwardResult {
    MlpParams grads;
    Matrix input_grad;
};

// Reverse-mode gradients of sum(out .* out_grad).
BackwardResult mlp_backward(const MlpSpec& spec, const MlpParams& params,
                            const ForwardCache& cache, const Matrix& out_grad);

struct AdamState {
    std::vector<Matrix> m_w, v_w;
    std::vector<Vector> m_b, v_b;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double delta = 1e-8;

    static AdamState like(const MlpParams& params);
};

// Bias-corrected Adam update (in place).
void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state, double lr);

// Elementwise params += scale * grads.
void axpy_params(MlpParams& params, const MlpParams& grads, double scale);

// Elementwise params *= scale.
void scale_params(MlpParams& params, double scale);

struct GradCheckReport {
    double max_rel_error = 0.0;
    int checked = 0;
};

// Compares an analytic gradient against central finite differences on a
// random subset of parameters. step is the FD half-step.
GradCheckReport grad_check(const MlpParams& params,
                           const std::function<double(const MlpParams&)>& loss,
                           const MlpParams& analytic_grads, int probes, Rng& rng,
                           double step = 1e-5);

}  // namespace sot
