#include "sot/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>

namespace sot {

namespace {

void check_simplex_marginals(const Vector& a, const Vector& b) {
    require(std::abs(a.sum() - 1.0) < 1e-9 && std::abs(b.sum() - 1.0) < 1e-9,
            "marginals must sum to 1");
    require((a.array() >= 0).all() && (b.array() >= 0).all(), "negative marginal weight");
}

// Row-wise log-sum-exp of M; rows with all -inf yield -inf.
Vector lse_rows(const Matrix& M) {
    Vector mx = M.rowwise().maxCoeff();
    Vector out(M.rows());
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        if (!std::isfinite(mx[i])) { out[i] = mx[i]; continue; }
        out[i] = mx[i] +
                 std::log((M.row(i).array() - mx[i]).max(kEntropyExponentFloor).exp().sum());
    }
    return out;
}

}  // namespace

SinkhornResult sinkhorn(const Vector& a, const Vector& b, const Matrix& C, double eps,
                        long max_iters, double tol) {
    check_simplex_marginals(a, b);
    require((a.array() > 0).all() && (b.array() > 0).all(),
            "sinkhorn requires strictly positive weights");
    require(eps > 0.0, "eps must be positive");
    const Eigen::Index n = a.size(), m = b.size();
    require(C.rows() == n && C.cols() == m, "cost matrix shape mismatch");

    const Vector loga = a.array().log();
    const Vector logb = b.array().log();
    Vector u = Vector::Zero(n), v = Vector::Zero(m);

    double residual = std::numeric_limits<double>::infinity();
    long it = 0;
    for (; it < max_iters; ++it) {
        // u_i = -eps lse_j((v_j - C_ij)/eps + log b_j)
        Matrix M = (-C).eval();
        M.rowwise() += v.transpose();
        M /= eps;
        M.rowwise() += logb.transpose();
        u = -eps * lse_rows(M);

        Matrix Mt = (-C.transpose()).eval();
        Mt.rowwise() += u.transpose();
        Mt /= eps;
        Mt.rowwise() += loga.transpose();
        v = -eps * lse_rows(Mt);

        // After the v sweep columns are exact; measure the row residual.
        Matrix logpi = (-C).eval();
        logpi.colwise() += u;
        logpi.rowwise() += v.transpose();
        logpi /= eps;
        logpi.colwise() += loga;
        logpi.rowwise() += logb.transpose();
        const Vector row_sums =
            logpi.array().max(kEntropyExponentFloor).exp().matrix().rowwise().sum();
        residual = (row_sums - a).lpNorm<1>();
        if (residual <= tol) { ++it; break; }
    }

    Matrix logpi = (-C).eval();
    logpi.colwise() += u;
    logpi.rowwise() += v.transpose();
    logpi /= eps;
    logpi.colwise() += loga;
    logpi.rowwise() += logb.transpose();
    TransportPlan plan{logpi.array().max(kEntropyExponentFloor).exp().matrix(), a, b};
    return {std::move(plan), std::move(u), std::move(v), it, residual};
}

SinkhornStreamResult sinkhorn_streaming(const Vector& a, const Vector& b, const Matrix& X,
                                        const Matrix& Y, const CostFn& cost, double eps,
                                        long max_iters, double tol) {
    check_simplex_marginals(a, b);
    require((a.array() > 0).all() && (b.array() > 0).all(),
            "sinkhorn requires strictly positive weights");
    const Eigen::Index n = a.size(), m = b.size();
    require(X.rows() == n && Y.rows() == m, "points/weights size mismatch");

    const Vector loga = a.array().log();
    const Vector logb = b.array().log();
    Vector u = Vector::Zero(n), v = Vector::Zero(m);
    const Eigen::Index block = 512;

    double residual = std::numeric_limits<double>::infinity();
    long it = 0;
    for (; it < max_iters; ++it) {
        for (Eigen::Index r0 = 0; r0 < n; r0 += block) {
            const Eigen::Index rows = std::min(block, n - r0);
            Matrix M = (-cost_matrix(cost, X.middleRows(r0, rows), Y)).eval();
            M.rowwise() += v.transpose();
            M /= eps;
            M.rowwise() += logb.transpose();
            u.segment(r0, rows) = -eps * lse_rows(M);
        }
        for (Eigen::Index c0 = 0; c0 < m; c0 += block) {
            const Eigen::Index rows = std::min(block, m - c0);
            Matrix M = (-cost_matrix(cost, Y.middleRows(c0, rows), X)).eval();
            M.rowwise() += u.transpose();
            M /= eps;
            M.rowwise() += loga.transpose();
            v.segment(c0, rows) = -eps * lse_rows(M);
        }
        // Row residual, blockwise.
        residual = 0.0;
        for (Eigen::Index r0 = 0; r0 < n; r0 += block) {
            const Eigen::Index rows = std::min(block, n - r0);
            Matrix M = (-cost_matrix(cost, X.middleRows(r0, rows), Y)).eval();
            M.colwise() += u.segment(r0, rows);
            M.rowwise() += v.transpose();
            M /= eps;
            M.colwise() += loga.segment(r0, rows);
            M.rowwise() += logb.transpose();
            residual += (M.array().max(kEntropyExponentFloor).exp().matrix().rowwise().sum() -
                         a.segment(r0, rows))
                            .lpNorm<1>();
        }
        if (residual <= tol) { ++it; break; }
    }
    SinkhornStreamResult out;
    out.objective = a.dot(u) + b.dot(v) - eps;
    out.u = std::move(u);
    out.v = std::move(v);
    out.final_marginal_residual = residual;
    out.iterations_used = it;
    return out;
}

double semi_dual_objective(const Vector& v, const MeasureSource& mu,
                           const DiscreteMeasure& nu, const CostFn& cost, double eps,
                           int eval_points, std::uint64_t seed) {
    const Vector logb = nu.weights().array().log();
    const double linear = v.dot(nu.weights());
    auto smoothed_min = [&](const Matrix& xs) {
        Vector out(xs.rows());
        const Eigen::Index block = 512;
        for (Eigen::Index r0 = 0; r0 < xs.rows(); r0 += block) {
            const Eigen::Index rows = std::min(block, xs.rows() - r0);
            Matrix M = (-cost_matrix(cost, xs.middleRows(r0, rows), nu.points())).eval();
            M.rowwise() += v.transpose();
            M /= eps;
            M.rowwise() += logb.transpose();
            out.segment(r0, rows) = eps * lse_rows(M);
        }
        return out;
    };
    if (const auto* dm = std::get_if<DiscreteMeasure>(&mu);
        dm && dm->size() * nu.size() <= 20'000'000) {
        return linear - eps - dm->weights().dot(smoothed_min(dm->points()));
    }
    Rng rng(seed);
    Batch bx = sample_batch(mu, eval_points, rng);
    return linear - eps - smoothed_min(bx.points).mean();
}

SemiDualSolution semi_dual_sgd(const MeasureSource& mu, const DiscreteMeasure& nu,
                               const CostFn& cost, double eps, const SemiDualConfig& cfg) {
    require(eps > 0.0, "eps must be positive");
    require(cfg.batch_size >= 1, "batch size must be positive");
    require((nu.weights().array() > 0).all(),
            "semi-dual requires strictly positive target weights");
    const Eigen::Index m = nu.size();
    const Vector logb = nu.weights().array().log();
    Vector v = Vector::Zero(m);
    Rng rng(cfg.seed);
    const std::uint64_t eval_seed = cfg.seed ^ kEvalSeedMix;

    SemiDualSolution out;
    double train_ms = 0.0;
    auto log_point = [&](long it) {
        out.trace.push_back({it, train_ms,
                             semi_dual_objective(v, mu, nu, cost, eps,
                                                 cfg.eval_points, eval_seed)});
    };

    Vector chi_mean(m);
    log_point(0);
    for (long it = 1; it <= cfg.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        Batch bx = sample_batch(mu, cfg.batch_size, rng);
        Matrix M = (-cost_matrix(cost, bx.points, nu.points())).eval();
        M.rowwise() += v.transpose();
        M /= eps;
        M.rowwise() += logb.transpose();
        const Vector lse = lse_rows(M);
        chi_mean.setZero();
        for (Eigen::Index i = 0; i < M.rows(); ++i)
            chi_mean += (M.row(i).array() - lse[i]).exp().matrix().transpose();
        chi_mean /= double(M.rows());
        v += cfg.learning_rate * (nu.weights() - chi_mean);
        const auto t1 = std::chrono::steady_clock::now();
        train_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
        if ((cfg.log_every > 0 && it % cfg.log_every == 0) || it == cfg.iterations)
            log_point(it);
    }
    out.v = std::move(v);
    return out;
}

// ---------------------------------------------------------------------------
// Transportation simplex
// ---------------------------------------------------------------------------

namespace {

struct BasisCell {
    int i, j;
    double flow;
};

class TransportSimplex {
  public:
    TransportSimplex(const Vector& a, const Vector& b, const Matrix& C)
        : a_(a), b_(b), C_(C), n_(int(a.size())), m_(int(b.size())) {}

    // Returns false if the pivot limit was hit before optimality.
    bool run() {
        northwest_corner();
        const long max_pivots = 200L * (n_ + m_) + 5000;
        const double tol = 1e-12 * (C_.cwiseAbs().maxCoeff() + 1.0);
        for (long pivot = 0; pivot < max_pivots; ++pivot) {
            compute_duals();
            int ei, ej;
            if (!find_entering(tol, ei, ej)) return true;
            pivot_on(ei, ej);
        }
        return false;
    }

    // Re-solve flows on the current basis tree for (possibly different)
    // marginals; used after a perturbed run. Flows below -1e-9 fail.
    bool recompute_flows(const Vector& a, const Vector& b) {
        std::vector<double> ra(a.data(), a.data() + n_);
        std::vector<double> rb(b.data(), b.data() + m_);
        rebuild_adjacency();
        std::vector<int> degree(size_t(n_ + m_), 0);
        for (int node = 0; node < n_ + m_; ++node)
            degree[size_t(node)] = int(adjacency(node).size());
        std::vector<bool> edge_done(basis_.size(), false);
        std::deque<int> leaves;
        for (int node = 0; node < n_ + m_; ++node)
            if (degree[size_t(node)] == 1) leaves.push_back(node);
        size_t processed = 0;
        while (!leaves.empty()) {
            const int node = leaves.front();
            leaves.pop_front();
            if (degree[size_t(node)] != 1) continue;
            int edge = -1;
            for (int e : adjacency(node))
                if (!edge_done[size_t(e)]) { edge = e; break; }
            if (edge < 0) continue;
            auto& cell = basis_[size_t(edge)];
            const double f = node < n_ ? ra[size_t(node)] : rb[size_t(node - n_)];
            cell.flow = f;
            ra[size_t(cell.i)] -= f;
            rb[size_t(cell.j)] -= f;
            edge_done[size_t(edge)] = true;
            ++processed;
            degree[size_t(node)] = 0;
            const int other = node < n_ ? n_ + cell.j : cell.i;
            if (--degree[size_t(other)] == 1) leaves.push_back(other);
        }
        if (processed != basis_.size()) return false;
        for (auto& cell : basis_) {
            if (cell.flow < -1e-9) return false;
            cell.flow = std::max(cell.flow, 0.0);
        }
        return true;
    }

    ExactOtResult result() const {
        Matrix plan = Matrix::Zero(n_, m_);
        double cost = 0.0;
        for (const auto& cell : basis_) {
            plan(cell.i, cell.j) = cell.flow;
            cost += cell.flow * C_(cell.i, cell.j);
        }
        return {{std::move(plan), a_, b_}, cost, ExactMethod::Simplex};
    }

  private:
    void northwest_corner() {
        basis_.clear();
        basis_.reserve(size_t(n_ + m_ - 1));
        int i = 0, j = 0;
        double ra = a_[0], rb = b_[0];
        while (true) {
            const double x = std::min(ra, rb);
            basis_.push_back({i, j, x});
            ra -= x;
            rb -= x;
            if (i == n_ - 1 && j == m_ - 1) break;
            if (i < n_ - 1 && (ra <= rb || j == m_ - 1)) {
                ++i;
                ra = a_[i];
            } else {
                ++j;
                rb = b_[j];
            }
        }
        rebuild_adjacency();
    }

    void rebuild_adjacency() {
        row_adj_.assign(size_t(n_), {});
        col_adj_.assign(size_t(m_), {});
        for (int e = 0; e < int(basis_.size()); ++e) {
            row_adj_[size_t(basis_[size_t(e)].i)].push_back(e);
            col_adj_[size_t(basis_[size_t(e)].j)].push_back(e);
        }
    }

    const std::vector<int>& adjacency(int node) const {
        return node < n_ ? row_adj_[size_t(node)] : col_adj_[size_t(node - n_)];
    }

    void compute_duals() {
        u_.assign(size_t(n_), 0.0);
        v_.assign(size_t(m_), 0.0);
        std::vector<bool> seen(size_t(n_ + m_), false);
        std::deque<int> queue{0};  // row 0 pinned to u = 0
        seen[0] = true;
        while (!queue.empty()) {
            const int node = queue.front();
            queue.pop_front();
            for (int e : adjacency(node)) {
                const auto& cell = basis_[size_t(e)];
                const int other = node < n_ ? n_ + cell.j : cell.i;
                if (seen[size_t(other)]) continue;
                seen[size_t(other)] = true;
                if (other >= n_)
                    v_[size_t(cell.j)] = C_(cell.i, cell.j) - u_[size_t(cell.i)];
                else
                    u_[size_t(cell.i)] = C_(cell.i, cell.j) - v_[size_t(cell.j)];
                queue.push_back(other);
            }
        }
    }

    // Bland: first cell in row-major order with negative reduced cost.
    bool find_entering(double tol, int& ei, int& ej) {
        if (reduced_.size() != m_) reduced_.resize(m_);
        const Eigen::Map<const Eigen::ArrayXd> vmap(v_.data(), m_);
        for (int i = 0; i < n_; ++i) {
            reduced_ = C_.row(i).transpose().array() - u_[size_t(i)] - vmap;
            for (int j = 0; j < m_; ++j) {
                if (reduced_[j] < -tol) {
                    ei = i;
                    ej = j;
                    return true;
                }
            }
        }
        return false;
    }

    void pivot_on(int ei, int ej) {
        // Edge path from row node ei to col node ej through the basis tree.
        const int start = ei, goal = n_ + ej;
        std::vector<int> parent_edge(size_t(n_ + m_), -1);
        std::vector<int> parent_node(size_t(n_ + m_), -1);
        std::vector<bool> seen(size_t(n_ + m_), false);
        std::deque<int> queue{start};
        seen[size_t(start)] = true;
        while (!queue.empty()) {
            const int node = queue.front();
            queue.pop_front();
            if (node == goal) break;
            for (int e : adjacency(node)) {
                const auto& cell = basis_[size_t(e)];
                const int other = node < n_ ? n_ + cell.j : cell.i;
                if (seen[size_t(other)]) continue;
                seen[size_t(other)] = true;
                parent_edge[size_t(other)] = e;
                parent_node[size_t(other)] = node;
                queue.push_back(other);
            }
        }
        if (!seen[size_t(goal)])
            throw NumericError("transportation simplex basis lost connectivity");

        // Walk back from goal; edges alternate -,+,-,... seen from the
        // entering (+) cell, and the path has odd length so both ends are -.
        std::vector<int> path;
        for (int node = goal; node != start; node = parent_node[size_t(node)])
            path.push_back(parent_edge[size_t(node)]);
        // path is ordered goal -> start; path.front() shares column ej.

        double theta = std::numeric_limits<double>::infinity();
        int leaving = -1;
        for (size_t k = 0; k < path.size(); k += 2) {
            const auto& cell = basis_[size_t(path[k])];
            const bool better =
                cell.flow < theta - 1e-15 ||
                (cell.flow < theta + 1e-15 && leaving >= 0 &&
                 std::pair(cell.i, cell.j) < std::pair(basis_[size_t(leaving)].i,
                                                       basis_[size_t(leaving)].j));
            if (better) {
                theta = cell.flow;
                leaving = path[k];
            }
        }
        for (size_t k = 0; k < path.size(); ++k) {
            auto& cell = basis_[size_t(path[k])];
            cell.flow += (k % 2 == 0) ? -theta : theta;
        }
        auto& replaced = basis_[size_t(leaving)];
        replaced = {ei, ej, theta};
        rebuild_adjacency();
    }

    Vector a_, b_;
    Matrix C_;
    int n_, m_;
    std::vector<BasisCell> basis_;
    std::vector<std::vector<int>> row_adj_, col_adj_;
    std::vector<double> u_, v_;
    Eigen::ArrayXd reduced_;
};

}  // namespace

ExactOtResult exact_ot_simplex(const Vector& a, const Vector& b, const Matrix& C) {
    check_simplex_marginals(a, b);
    require(C.rows() == a.size() && C.cols() == b.size(), "cost matrix shape mismatch");
    require(a.size() * b.size() <= 1'000'000, "instance exceeds the desk bound n*m <= 1e6");

    TransportSimplex solver(a, b, C);
    if (solver.run()) return solver.result();

    // Cycling guard: epsilon-perturbation restart, then re-solve the flows on
    // the final basis for the original marginals.
    const double delta = 1e-9;
    Vector ap = a, bp = b;
    for (Eigen::Index i = 0; i < ap.size(); ++i) ap[i] += delta * double(i + 1);
    bp[bp.size() - 1] += delta * double(ap.size()) * double(ap.size() + 1) / 2.0;
    const double total = ap.sum();
    ap /= total;
    bp /= total;
    TransportSimplex perturbed(ap, bp, C);
    if (!perturbed.run() || !perturbed.recompute_flows(a, b))
        throw NumericError("transportation simplex failed to converge");
    ExactOtResult res = perturbed.result();
    res.plan.row_marginal_target = a;
    res.plan.col_marginal_target = b;
    return res;
}

AssignmentResult exact_assignment_bruteforce(const Matrix& C) {
    const Eigen::Index n = C.rows();
    require(C.cols() == n, "assignment needs a square cost matrix");
    require(n >= 1 && n <= 8, "brute-force assignment limited to n <= 8");
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) c += C(i, perm[size_t(i)]);
        if (c < best_cost) {
            best_cost = c;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {best, best_cost / double(n)};
}

Matrix spd_sqrt(const Matrix& S) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(S);
    require(es.info() == Eigen::Success, "eigendecomposition failed");
    Vector vals = es.eigenvalues().cwiseMax(1e-12);
    return es.eigenvectors() * vals.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

AffineMap gaussian_monge_closed_form(const Vector& m1, const Matrix& S1, const Vector& m2,
                                     const Matrix& S2) {
    auto check_spd = [](const Matrix& S, const char* name) {
        require(S.rows() == S.cols(), "covariance must be square");
        require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-10,
                std::string(name) + " not symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix> es(S);
        require(es.eigenvalues().minCoeff() > 0.0, std::string(name) + " not positive definite");
    };
    check_spd(S1, "S1");
    check_spd(S2, "S2");
    require(m1.size() == S1.rows() && m2.size() == S2.rows() && m1.size() == m2.size(),
            "mean/covariance dimension mismatch");

    const Matrix s1_half = spd_sqrt(S1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(S1);
    Vector inv_vals = es.eigenvalues().cwiseMax(1e-12).cwiseInverse().cwiseSqrt();
    const Matrix s1_inv_half =
        es.eigenvectors() * inv_vals.asDiagonal() * es.eigenvectors().transpose();

    Matrix mid = spd_sqrt(s1_half * S2 * s1_half);
    Matrix A = s1_inv_half * mid * s1_inv_half;
    A = 0.5 * (A + A.transpose());
    return {A, m2 - A * m1};
}

}  // namespace sot
