#pragma once

#include "sot/dual_solver.hpp"

namespace sot {

// Dense coupling with the marginals it is supposed to match. Residuals are
// observable rather than forced to zero; stochastic solutions are approximate.
struct TransportPlan {
    Matrix matrix;
    Vector row_marginal_target;
    Vector col_marginal_target;
};

// Plan density H_eps(x,y) from potentials.
// Entropy: exp((u+v-c)/eps).  L2: (u+v-c)_+ / (2 eps).
double h_eps(const Regularization& reg, double u_val, double v_val, double c_val);

// Entrywise H_eps for a matrix of s = u+v-c values.
Matrix h_eps_matrix(const Regularization& reg, const Matrix& s);

// Closure form of the plan density, for arbitrary point pairs.
class PlanDensity {
  public:
    PlanDensity(DualPotential u, DualPotential v, CostFn cost, Regularization reg);

    Matrix eval(const Matrix& xb, const Matrix& yb,
                const std::optional<IntVector>& ix = std::nullopt,
                const std::optional<IntVector>& iy = std::nullopt) const;
    double operator()(const Vector& x, const Vector& y) const;

  private:
    DualPotential u_, v_;
    CostFn cost_;
    Regularization reg_;
};

// pi_ij = H_eps(x_i, y_j) a_i b_j on the product support.
TransportPlan recover_discrete_plan(const DualPotential& u, const DualPotential& v,
                                    const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                    const CostFn& cost, const Regularization& reg);

struct MarginalResiduals {
    double row_l1;
    double col_l1;
};

MarginalResiduals marginal_residuals(const TransportPlan& plan);

struct RegularizedObjective {
    double transport_cost;  // sum pi_ij C_ij
    double reg_value;       // R(pi)
};

// Entropy: sum pi_ij (ln(pi_ij/(a_i b_j)) - 1), with 0 ln 0 = 0.
// L2: sum pi_ij^2 / (a_i b_j).
RegularizedObjective regularized_objective(const TransportPlan& plan, const Matrix& C,
                                           const Regularization& reg);

// Row i = (sum_j pi_ij y_j) / (sum_j pi_ij); squared-Euclidean projection.
// A zero row means an unmatched source atom and raises an error.
Matrix barycentric_projection_discrete(const TransportPlan& plan,
                                       const Matrix& target_points);

void save_plan_csv(const TransportPlan& plan, const std::string& path);

}  // namespace sot
