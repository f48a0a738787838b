#include "sot/measures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace sot {

namespace {

constexpr double kSimplexTol = 1e-9;

void validate_weights(const Vector& w) {
    require(w.size() >= 1, "measure needs at least one atom");
    if ((w.array() < 0.0).any()) throw ConfigError("negative weight");
    if (!w.allFinite()) throw ConfigError("non-finite weight");
    const double s = w.sum();
    if (std::abs(s - 1.0) > kSimplexTol)
        throw ConfigError("weights sum to " + std::to_string(s) + ", expected 1");
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Matrix points, Vector weights,
                                 std::optional<IntVector> labels)
    : points_(std::move(points)), weights_(std::move(weights)), labels_(std::move(labels)) {
    require(points_.rows() >= 1, "measure needs at least one atom");
    require(points_.cols() >= 1, "dimension-zero source rejected");
    require(points_.rows() == weights_.size(), "points/weights size mismatch");
    if (!points_.allFinite()) throw ConfigError("non-finite point coordinates");
    validate_weights(weights_);
    if (labels_) require(labels_->size() == points_.rows(), "labels size mismatch");

    // Vose alias table.
    const size_t n = static_cast<size_t>(weights_.size());
    alias_prob_.assign(n, 1.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    for (size_t i = 0; i < n; ++i) scaled[i] = weights_[Eigen::Index(i)] * double(n);
    std::vector<int> small, large;
    for (size_t i = 0; i < n; ++i)
        (scaled[i] < 1.0 ? small : large).push_back(int(i));
    while (!small.empty() && !large.empty()) {
        const int s = small.back(); small.pop_back();
        const int l = large.back(); large.pop_back();
        alias_prob_[size_t(s)] = scaled[size_t(s)];
        alias_[size_t(s)] = l;
        scaled[size_t(l)] += scaled[size_t(s)] - 1.0;
        (scaled[size_t(l)] < 1.0 ? small : large).push_back(l);
    }
    for (int i : small) alias_prob_[size_t(i)] = 1.0;
    for (int i : large) alias_prob_[size_t(i)] = 1.0;
}

DiscreteMeasure DiscreteMeasure::uniform(Matrix points, std::optional<IntVector> labels) {
    const Eigen::Index n = points.rows();
    require(n >= 1, "measure needs at least one atom");
    return DiscreteMeasure(std::move(points), Vector::Constant(n, 1.0 / double(n)),
                           std::move(labels));
}

int DiscreteMeasure::sample_index(Rng& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const size_t n = alias_prob_.size();
    size_t k = std::min(n - 1, size_t(unif(rng) * double(n)));
    if (unif(rng) >= alias_prob_[k]) k = size_t(alias_[k]);
    return static_cast<int>(k);
}

GaussianMeasure::GaussianMeasure(Vector mean_in, Matrix covariance_in)
    : mean(std::move(mean_in)), covariance(std::move(covariance_in)) {
    require(mean.size() >= 1, "dimension-zero source rejected");
    require(covariance.rows() == mean.size() && covariance.cols() == mean.size(),
            "covariance shape mismatch");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ConfigError("covariance not symmetric");
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success)
        throw ConfigError("covariance not positive definite");
    chol = llt.matrixL();
}

GaussianMixture::GaussianMixture(std::vector<std::pair<double, GaussianMeasure>> comps)
    : components(std::move(comps)) {
    require(!components.empty(), "empty mixture");
    const Eigen::Index d = components.front().second.mean.size();
    double s = 0.0;
    for (const auto& [w, g] : components) {
        require(w >= 0.0, "negative mixture weight");
        require(g.mean.size() == d, "mixture components differ in dimension");
        s += w;
    }
    if (std::abs(s - 1.0) > kSimplexTol)
        throw ConfigError("mixture weights must sum to 1");
}

Eigen::Index source_dim(const MeasureSource& src) {
    return std::visit(
        [](const auto& m) -> Eigen::Index {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, DiscreteMeasure>) return m.dim();
            else if constexpr (std::is_same_v<T, GaussianMeasure>) return m.mean.size();
            else return m.components.front().second.mean.size();
        },
        src);
}

bool is_discrete(const MeasureSource& src) {
    return std::holds_alternative<DiscreteMeasure>(src);
}

namespace {

Matrix gaussian_rows(const GaussianMeasure& g, int p, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index d = g.mean.size();
    Matrix z(p, d);
    for (int i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = normal(rng);
    Matrix out = z * g.chol.transpose();
    out.rowwise() += g.mean.transpose();
    return out;
}

}  // namespace

Batch sample_batch(const MeasureSource& src, int p, Rng& rng) {
    require(p >= 1, "batch size must be positive");
    if (const auto* dm = std::get_if<DiscreteMeasure>(&src)) {
        IntVector idx(p);
        Matrix pts(p, dm->dim());
        for (int i = 0; i < p; ++i) {
            idx[i] = dm->sample_index(rng);
            pts.row(i) = dm->points().row(idx[i]);
        }
        return {std::move(pts), std::move(idx)};
    }
    if (const auto* gm = std::get_if<GaussianMeasure>(&src)) {
        return {gaussian_rows(*gm, p, rng), std::nullopt};
    }
    const auto& mix = std::get<GaussianMixture>(src);
    std::vector<double> cw;
    cw.reserve(mix.components.size());
    double acc = 0.0;
    for (const auto& [w, g] : mix.components) cw.push_back(acc += w);
    cw.back() = 1.0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index d = source_dim(src);
    Matrix pts(p, d);
    for (int i = 0; i < p; ++i) {
        auto it = std::lower_bound(cw.begin(), cw.end(), unif(rng));
        if (it == cw.end()) --it;
        const auto& g = mix.components[static_cast<size_t>(it - cw.begin())].second;
        Vector z(d);
        for (Eigen::Index j = 0; j < d; ++j) z[j] = normal(rng);
        pts.row(i) = (g.mean + g.chol * z).transpose();
    }
    return {std::move(pts), std::nullopt};
}

Matrix cost_matrix(const CostFn& c, const Matrix& xb, const Matrix& yb) {
    require(xb.cols() == yb.cols(), "cost_matrix: dimension mismatch");
    const Eigen::Index p = xb.rows(), q = yb.rows();
    switch (c.kind) {
        case CostKind::SquaredEuclidean: {
            Matrix C = -2.0 * xb * yb.transpose();
            C.colwise() += xb.rowwise().squaredNorm();
            C.rowwise() += yb.rowwise().squaredNorm().transpose();
            return C.cwiseMax(0.0);  // rounding can leave tiny negatives
        }
        case CostKind::Euclidean: {
            Matrix C = cost_matrix(CostFn::squared_euclidean(), xb, yb);
            return C.cwiseSqrt();
        }
        case CostKind::Custom: {
            require(static_cast<bool>(c.fn), "custom cost without callable");
            Matrix C(p, q);
            for (Eigen::Index i = 0; i < p; ++i) {
                Vector xi = xb.row(i);
                for (Eigen::Index j = 0; j < q; ++j) {
                    const double v = c.fn(xi, yb.row(j).transpose());
                    if (!(v >= 0.0) || !std::isfinite(v))
                        throw NumericError("custom cost produced invalid value");
                    C(i, j) = v;
                }
            }
            return C;
        }
    }
    throw ConfigError("unknown cost kind");
}

Moments empirical_moments(const DiscreteMeasure& m) {
    require(m.size() >= 2, "empirical_moments: need at least 2 points");
    Vector mean = m.points().transpose() * m.weights();
    Matrix centered = m.points().rowwise() - mean.transpose();
    Matrix cov = centered.transpose() * m.weights().asDiagonal() * centered;
    cov = 0.5 * (cov + cov.transpose());
    return {std::move(mean), std::move(cov)};
}

Moments source_moments(const MeasureSource& src) {
    if (const auto* dm = std::get_if<DiscreteMeasure>(&src)) return empirical_moments(*dm);
    if (const auto* gm = std::get_if<GaussianMeasure>(&src)) return {gm->mean, gm->covariance};
    const auto& mix = std::get<GaussianMixture>(src);
    const Eigen::Index d = source_dim(src);
    Vector mean = Vector::Zero(d);
    for (const auto& [w, g] : mix.components) mean += w * g.mean;
    Matrix cov = Matrix::Zero(d, d);
    for (const auto& [w, g] : mix.components) {
        Vector dm = g.mean - mean;
        cov += w * (g.covariance + dm * dm.transpose());
    }
    return {std::move(mean), std::move(cov)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

bool parse_double(const std::string& s, double& out) {
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

}  // namespace

DiscreteMeasure load_csv(const std::string& path, bool has_weights, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path);

    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    if (rows.empty()) throw ConfigError("empty CSV file: " + path);

    // Header detection: first row with any non-numeric cell is a header.
    int w_col = -1, y_col = -1;
    std::vector<int> feature_cols;
    size_t first_data = 0;
    const size_t ncols = rows[0].size();
    double tmp;
    bool header = false;
    for (const auto& cell : rows[0])
        if (!parse_double(cell, tmp)) { header = true; break; }

    if (header) {
        first_data = 1;
        for (size_t c = 0; c < ncols; ++c) {
            const std::string& name = rows[0][c];
            if (name == "w") w_col = static_cast<int>(c);
            else if (name == "y") y_col = static_cast<int>(c);
            else feature_cols.push_back(static_cast<int>(c));
        }
        if (has_weights && w_col < 0) throw ConfigError("CSV header lacks 'w' column: " + path);
        if (has_labels && y_col < 0) throw ConfigError("CSV header lacks 'y' column: " + path);
        if (!has_weights) w_col = -1;
        if (!has_labels) y_col = -1;
    } else {
        size_t extras = (has_weights ? 1 : 0) + (has_labels ? 1 : 0);
        if (ncols <= extras) throw ConfigError("CSV has no feature columns: " + path);
        size_t nfeat = ncols - extras;
        for (size_t c = 0; c < nfeat; ++c) feature_cols.push_back(static_cast<int>(c));
        if (has_weights) w_col = static_cast<int>(nfeat);
        if (has_labels) y_col = static_cast<int>(ncols - 1);
    }

    const size_t n = rows.size() - first_data;
    if (n == 0) throw ConfigError("CSV has a header but no data rows: " + path);
    Matrix pts(n, feature_cols.size());
    Vector w = Vector::Constant(n, 1.0 / double(n));
    IntVector labels(n);

    for (size_t r = first_data; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != ncols)
            throw ConfigError("inconsistent column count at CSV row " + std::to_string(r + 1));
        const size_t i = r - first_data;
        for (size_t f = 0; f < feature_cols.size(); ++f) {
            double v;
            if (!parse_double(row[static_cast<size_t>(feature_cols[f])], v))
                throw ConfigError("non-numeric cell at CSV row " + std::to_string(r + 1));
            pts(i, f) = v;
        }
        if (w_col >= 0) {
            double v;
            if (!parse_double(row[static_cast<size_t>(w_col)], v))
                throw ConfigError("non-numeric weight at CSV row " + std::to_string(r + 1));
            w[i] = v;
        }
        if (y_col >= 0) {
            double v;
            if (!parse_double(row[static_cast<size_t>(y_col)], v))
                throw ConfigError("non-numeric label at CSV row " + std::to_string(r + 1));
            labels[i] = static_cast<int>(std::lround(v));
        }
    }

    if (has_weights) {
        if ((w.array() < 0.0).any()) throw ConfigError("negative weight in CSV: " + path);
        const double s = w.sum();
        if (s <= 0.0) throw ConfigError("weights sum to zero in CSV: " + path);
        w /= s;
    }
    std::optional<IntVector> lab;
    if (has_labels) lab = labels;
    return DiscreteMeasure(std::move(pts), std::move(w), std::move(lab));
}

void save_csv(const DiscreteMeasure& m, const std::string& path,
              bool with_weights, bool with_labels) {
    if (with_labels) require(m.labels().has_value(), "measure has no labels to save");
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write CSV file: " + path);
    out.precision(17);
    for (Eigen::Index c = 0; c < m.dim(); ++c) out << (c ? "," : "") << "x" << c;
    if (with_weights) out << ",w";
    if (with_labels) out << ",y";
    out << "\n";
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        for (Eigen::Index c = 0; c < m.dim(); ++c) out << (c ? "," : "") << m.points()(i, c);
        if (with_weights) out << "," << m.weights()[i];
        if (with_labels) out << "," << (*m.labels())[i];
        out << "\n";
    }
}

std::vector<Vector> blob_centers(int k, int d) {
    require(k >= 2, "make_blobs: k >= 2");
    require(d >= 2, "make_blobs: d >= 2");
    constexpr double radius = 3.0;
    std::vector<Vector> centers;
    centers.reserve(static_cast<size_t>(k));
    for (int c = 0; c < k; ++c) {
        const double ang = 2.0 * std::numbers::pi * c / k;
        Vector v = Vector::Zero(d);
        v[0] = radius * std::cos(ang);
        v[1] = radius * std::sin(ang);
        centers.push_back(std::move(v));
    }
    return centers;
}

BlobPair make_blobs(int k, int per_class, int d, const Vector& shift,
                    double rotation, Rng& rng) {
    require(per_class >= 1, "make_blobs: per_class >= 1");
    require(shift.size() == d, "make_blobs: shift dimension mismatch");
    constexpr double blob_std = 0.5;
    const auto centers = blob_centers(k, d);
    const int n = k * per_class;

    Matrix rot = Matrix::Identity(d, d);
    rot(0, 0) = std::cos(rotation);
    rot(0, 1) = -std::sin(rotation);
    rot(1, 0) = std::sin(rotation);
    rot(1, 1) = std::cos(rotation);

    std::normal_distribution<double> normal(0.0, blob_std);
    auto draw = [&](bool transformed) {
        Matrix pts(n, d);
        IntVector labels(n);
        int row = 0;
        for (int c = 0; c < k; ++c) {
            for (int i = 0; i < per_class; ++i, ++row) {
                Vector x = centers[static_cast<size_t>(c)];
                for (int j = 0; j < d; ++j) x[j] += normal(rng);
                if (transformed) x = rot * x + shift;
                pts.row(row) = x.transpose();
                labels[row] = c;
            }
        }
        return DiscreteMeasure::uniform(std::move(pts), std::move(labels));
    };

    DiscreteMeasure source = draw(false);
    DiscreteMeasure target = draw(true);
    return {std::move(source), std::move(target)};
}

}  // namespace sot
