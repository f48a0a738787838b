#pragma once

#include "sot/plan.hpp"

namespace sot {

struct SinkhornResult {
    TransportPlan plan;
    Vector u, v;  // eps-scaled log potentials, aligned with the H_eps factorization
    long iterations_used = 0;
    double final_marginal_residual = 0.0;
};

// Log-domain Sinkhorn on a dense cost matrix. Stops once the row-marginal L1
// residual drops to tol (columns are exact after each sweep). Requires
// strictly positive marginals.
SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& C, double eps,
                        long max_iters, double tol);

struct SinkhornStreamResult {
    Vector u, v;
    double objective = 0.0;  // a.u + b.v - eps; equals the regularized cost at convergence
    double final_marginal_residual = 0.0;
    long iterations_used = 0;
};

// Same iteration with cost blocks generated on the fly; for supports too
// large to materialize the n x m cost matrix.
SinkhornStreamResult sinkhorn_streaming(const Vector& a, const Vector& b, const Matrix& X,
                                        const Matrix& Y, const CostFn& cost, double eps,
                                        long max_iters, double tol);

struct SemiDualConfig {
    int batch_size = 100;
    double learning_rate = 0.1;
    long iterations = 10000;
    std::uint64_t seed = 0;
    long log_every = 500;
    int eval_points = 512;  // Monte-Carlo objective sample when mu is not small-discrete
};

struct SemiDualSolution {
    Vector v;
    TrainTrace trace;
};

// SGD on the semi-dual objective
//   E_X[ sum_j v_j b_j - eps log sum_j b_j exp((v_j - c(X,y_j))/eps) - eps ],
// entropy regularization only. Each sampled point touches all m entries of v.
SemiDualSolution semi_dual_sgd(const MeasureSource& mu, const DiscreteMeasure& nu,
                               const CostFn& cost, double eps, const SemiDualConfig& cfg);

// Semi-dual objective for fixed v; exact sum over a discrete mu support,
// Monte-Carlo with eval_points draws otherwise.
double semi_dual_objective(const Vector& v, const MeasureSource& mu,
                           const DiscreteMeasure& nu, const CostFn& cost, double eps,
                           int eval_points, std::uint64_t seed);

enum class ExactMethod { Simplex, AssignmentBruteForce };

struct ExactOtResult {
    TransportPlan plan;
    double cost = 0.0;
    ExactMethod method = ExactMethod::Simplex;
};

// Transportation simplex (Bland's rule). Vertex solution with at most
// n+m-1 nonzeros. Desk bound n*m <= 1e6.
ExactOtResult exact_ot_simplex(const Vector& a, const Vector& b, const Matrix& C);

struct AssignmentResult {
    std::vector<int> permutation;
    double cost = 0.0;  // (1/n) sum_i C(i, perm[i])
};

// Exhaustive search over all n! assignments; n <= 8.
AssignmentResult exact_assignment_bruteforce(const Matrix& C);

struct AffineMap {
    Matrix A;
    Vector b;

    Matrix apply(const Matrix& points) const {
        Matrix out = points * A.transpose();
        out.rowwise() += b.transpose();
        return out;
    }
};

// Monge map between Gaussians:
// A = S1^{-1/2} (S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2}, b = m2 - A m1.
AffineMap gaussian_monge_closed_form(const Vector& m1, const Matrix& S1, const Vector& m2,
                                     const Matrix& S2);

// Symmetric PSD square root via eigendecomposition, eigenvalue floor 1e-12.
Matrix spd_sqrt(const Matrix& S);

}  // namespace sot
