#pragma once

#include <optional>
#include <variant>

#include "sot/measures.hpp"
#include "sot/nn.hpp"

namespace sot {

enum class RegKind { Entropy, L2 };

struct Regularization {
    RegKind kind = RegKind::Entropy;
    double epsilon = 0.1;
};

void validate_reg(const Regularization& reg);

// Exponent cap for the entropic penalty; solver runs count how often it bites
// and acceptance runs treat any clamp as invalid.
constexpr double kEntropyExponentClamp = 30.0;

// Lower exponent floor. exp(-40) ~ 4e-18 is below double epsilon relative to
// the O(1) terms these exponentials are summed with, and flooring keeps exp()
// on its fast path for extreme arguments.
constexpr double kEntropyExponentFloor = -40.0;

// Penalty F_eps at s = u(x)+v(y)-c(x,y).
// Entropy: -eps*exp(s/eps).  L2: -(1/4eps)*(s_+)^2.
double f_eps(const Regularization& reg, double s);

// dF/ds. Entropy: -exp(s/eps).  L2: -(1/2eps)*s_+.
double f_eps_partial(const Regularization& reg, double s);

// Entrywise versions over a matrix of s values.
Matrix f_eps_matrix(const Regularization& reg, const Matrix& s);
Matrix f_eps_partial_matrix(const Regularization& reg, const Matrix& s);

struct VectorPotential {
    Vector values;
};

struct NetworkPotential {
    MlpSpec spec;
    MlpParams params;
};

using DualPotential = std::variant<VectorPotential, NetworkPotential>;

bool is_vector_potential(const DualPotential& u);

// Per-row potential values. Vector potentials require support indices.
Vector potential_eval(const DualPotential& u, const Matrix& xb,
                      const std::optional<IntVector>& indices);

struct DualSolverConfig {
    int batch_size = 128;
    double learning_rate = 0.1;
    // Vector potentials use plain SGD while network potentials use Adam, so a
    // mixed pairing may need a separate SGD step size; 0 means learning_rate.
    double vector_learning_rate = 0.0;
    // Inverse-time decay, gamma_t = gamma / (1 + lr_decay * max(0, t - lr_decay_after)).
    // lr_decay = 0 keeps the step constant as in the algorithm listing.
    double lr_decay = 0.0;
    long lr_decay_after = 0;
    long iterations = 10000;
    std::uint64_t seed = 0;
    long log_every = 500;
    // Network potentials: hidden widths of the d -> ... -> 1 net.
    std::vector<int> hidden_sizes = {1024, 1024};
    // Objective-estimate settings used for the trace.
    int eval_batches = 4;
    int eval_batch_size = 256;
};

struct TracePoint {
    long iteration;
    double wall_ms;
    double objective;
};

using TrainTrace = std::vector<TracePoint>;

struct DualSolution {
    DualPotential u;
    DualPotential v;
    TrainTrace trace;
    long clamp_count = 0;
};

// One ascent state: potentials plus Adam state for network potentials.
// Vector potentials use plain SGD.
class DualAscent {
  public:
    DualAscent(DualPotential u, DualPotential v, CostFn cost, Regularization reg);

    // One stochastic ascent step on the mini-batch estimate of the relaxed
    // dual (mean over all p*q batch pairs). The two-rate form lets a vector
    // potential (plain SGD) move at a different speed than a network (Adam).
    void step(const Batch& bx, const Batch& by, double gamma);
    void step(const Batch& bx, const Batch& by, double gamma_net, double gamma_vec);

    const DualPotential& u() const { return u_; }
    const DualPotential& v() const { return v_; }
    DualPotential& u() { return u_; }
    DualPotential& v() { return v_; }
    long clamp_count() const { return clamp_count_; }

  private:
    DualPotential u_, v_;
    CostFn cost_;
    Regularization reg_;
    std::optional<AdamState> adam_u_, adam_v_;
    long clamp_count_ = 0;
};

// Algorithm: run cfg.iterations stochastic ascent steps, tracing the dual
// objective estimate every log_every steps. Vector potentials are used for
// discrete marginals, network potentials otherwise.
DualSolution solve_dual(const MeasureSource& mu, const MeasureSource& nu,
                        const CostFn& cost, const Regularization& reg,
                        const DualSolverConfig& cfg);

// Exact discrete dual objective: sum_ij a_i b_j [u_i + v_j + F(s_ij)].
double dual_objective_exact(const DualPotential& u, const DualPotential& v,
                            const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                            const CostFn& cost, const Regularization& reg);

// Monte-Carlo estimate over eval_batches batches of p x p pairs; switches to
// the exact sum for small fully-discrete inputs. Deterministic under seed.
double dual_objective_estimate(const DualPotential& u, const DualPotential& v,
                               const MeasureSource& mu, const MeasureSource& nu,
                               const CostFn& cost, const Regularization& reg,
                               int eval_batches, int p, std::uint64_t seed);

}  // namespace sot
