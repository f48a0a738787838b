#include "sot/plan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sot {

double h_eps(const Regularization& reg, double u_val, double v_val, double c_val) {
    const double s = u_val + v_val - c_val;
    switch (reg.kind) {
        case RegKind::Entropy: {
            const double e =
                std::clamp(s / reg.epsilon, kEntropyExponentFloor, kEntropyExponentClamp);
            return std::exp(e);
        }
        case RegKind::L2:
            return std::max(s, 0.0) / (2.0 * reg.epsilon);
    }
    return 0.0;
}

Matrix h_eps_matrix(const Regularization& reg, const Matrix& s) {
    if (reg.kind == RegKind::Entropy)
        return ((s.array() / reg.epsilon)
                    .min(kEntropyExponentClamp)
                    .max(kEntropyExponentFloor))
            .exp()
            .matrix();
    return (s.array().max(0.0) / (2.0 * reg.epsilon)).matrix();
}

PlanDensity::PlanDensity(DualPotential u, DualPotential v, CostFn cost, Regularization reg)
    : u_(std::move(u)), v_(std::move(v)), cost_(std::move(cost)), reg_(reg) {
    validate_reg(reg_);
}

Matrix PlanDensity::eval(const Matrix& xb, const Matrix& yb,
                         const std::optional<IntVector>& ix,
                         const std::optional<IntVector>& iy) const {
    Vector uv = potential_eval(u_, xb, ix);
    Vector vv = potential_eval(v_, yb, iy);
    Matrix s = (-cost_matrix(cost_, xb, yb)).eval();
    s.colwise() += uv;
    s.rowwise() += vv.transpose();
    return h_eps_matrix(reg_, s);
}

double PlanDensity::operator()(const Vector& x, const Vector& y) const {
    Matrix xb = x.transpose();
    Matrix yb = y.transpose();
    return eval(xb, yb)(0, 0);
}

TransportPlan recover_discrete_plan(const DualPotential& u, const DualPotential& v,
                                    const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                    const CostFn& cost, const Regularization& reg) {
    IntVector ix(mu.size()), iy(nu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) ix[i] = static_cast<int>(i);
    for (Eigen::Index j = 0; j < nu.size(); ++j) iy[j] = static_cast<int>(j);
    PlanDensity density(u, v, cost, reg);
    Matrix h = density.eval(mu.points(), nu.points(), ix, iy);
    Matrix pi = mu.weights().asDiagonal() * h * nu.weights().asDiagonal();
    return {std::move(pi), mu.weights(), nu.weights()};
}

MarginalResiduals marginal_residuals(const TransportPlan& plan) {
    const Vector row = plan.matrix.rowwise().sum();
    const Vector col = plan.matrix.colwise().sum().transpose();
    return {(row - plan.row_marginal_target).lpNorm<1>(),
            (col - plan.col_marginal_target).lpNorm<1>()};
}

RegularizedObjective regularized_objective(const TransportPlan& plan, const Matrix& C,
                                           const Regularization& reg) {
    require(plan.matrix.rows() == C.rows() && plan.matrix.cols() == C.cols(),
            "plan/cost shape mismatch");
    const Matrix& pi = plan.matrix;
    const Vector& a = plan.row_marginal_target;
    const Vector& b = plan.col_marginal_target;

    const double cost = (pi.array() * C.array()).sum();
    double r = 0.0;
    for (Eigen::Index i = 0; i < pi.rows(); ++i) {
        for (Eigen::Index j = 0; j < pi.cols(); ++j) {
            const double p = pi(i, j);
            if (p <= 0.0) continue;  // 0 ln 0 = 0; zero mass contributes nothing
            const double ab = a[i] * b[j];
            if (reg.kind == RegKind::Entropy) {
                r += p * (std::log(p / ab) - 1.0);
            } else {
                r += p * p / ab;
            }
        }
    }
    return {cost, r};
}

Matrix barycentric_projection_discrete(const TransportPlan& plan,
                                       const Matrix& target_points) {
    require(plan.matrix.cols() == target_points.rows(),
            "plan/target size mismatch in barycentric projection");
    const Vector mass = plan.matrix.rowwise().sum();
    for (Eigen::Index i = 0; i < mass.size(); ++i)
        if (mass[i] <= 0.0)
            throw NumericError("barycentric projection: source atom " + std::to_string(i) +
                               " has zero plan mass");
    Matrix proj = plan.matrix * target_points;
    proj.array().colwise() /= mass.array();
    return proj;
}

void save_plan_csv(const TransportPlan& plan, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write plan CSV: " + path);
    out.precision(17);
    for (Eigen::Index i = 0; i < plan.matrix.rows(); ++i) {
        for (Eigen::Index j = 0; j < plan.matrix.cols(); ++j)
            out << (j ? "," : "") << plan.matrix(i, j);
        out << "\n";
    }
}

}  // namespace sot
