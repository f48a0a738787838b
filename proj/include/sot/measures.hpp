#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "sot/common.hpp"

namespace sot {

// Weighted point cloud. Weights live on the probability simplex (checked on
// construction), points are finite. Sampling uses a Walker alias table built
// once, so draws are O(1) regardless of support size.
class DiscreteMeasure {
  public:
    DiscreteMeasure(Matrix points, Vector weights,
                    std::optional<IntVector> labels = std::nullopt);

    static DiscreteMeasure uniform(Matrix points,
                                   std::optional<IntVector> labels = std::nullopt);

    const Matrix& points() const { return points_; }
    const Vector& weights() const { return weights_; }
    const std::optional<IntVector>& labels() const { return labels_; }
    Eigen::Index size() const { return points_.rows(); }
    Eigen::Index dim() const { return points_.cols(); }

    // Index of one atom drawn proportionally to weight (with replacement).
    int sample_index(Rng& rng) const;

  private:
    Matrix points_;
    Vector weights_;
    std::optional<IntVector> labels_;
    std::vector<double> alias_prob_;
    std::vector<int> alias_;
};

struct GaussianMeasure {
    GaussianMeasure(Vector mean_in, Matrix covariance_in);

    Vector mean;
    Matrix covariance;
    Matrix chol;  // lower Cholesky factor, used for sampling
};

struct GaussianMixture {
    explicit GaussianMixture(std::vector<std::pair<double, GaussianMeasure>> comps);

    std::vector<std::pair<double, GaussianMeasure>> components;
};

using MeasureSource = std::variant<DiscreteMeasure, GaussianMeasure, GaussianMixture>;

Eigen::Index source_dim(const MeasureSource& src);
bool is_discrete(const MeasureSource& src);

// One i.i.d. batch. indices are present iff the source is discrete and give
// the support position of each row, for vector-potential lookup.
struct Batch {
    Matrix points;
    std::optional<IntVector> indices;
};

Batch sample_batch(const MeasureSource& src, int p, Rng& rng);

enum class CostKind { SquaredEuclidean, Euclidean, Custom };

struct CostFn {
    CostKind kind = CostKind::SquaredEuclidean;
    std::function<double(const Vector&, const Vector&)> fn;  // Custom only

    static CostFn squared_euclidean() { return {CostKind::SquaredEuclidean, nullptr}; }
    static CostFn euclidean() { return {CostKind::Euclidean, nullptr}; }
    static CostFn custom(std::function<double(const Vector&, const Vector&)> f) {
        return {CostKind::Custom, std::move(f)};
    }
};

// Entry (i,j) = c(xb.row(i), yb.row(j)).
Matrix cost_matrix(const CostFn& c, const Matrix& xb, const Matrix& yb);

struct Moments {
    Vector mean;
    Matrix covariance;
};

// Weighted mean and covariance of a discrete measure; needs n >= 2.
Moments empirical_moments(const DiscreteMeasure& m);

// Moments of any source (exact for Gaussian/mixture).
Moments source_moments(const MeasureSource& src);

// CSV: one row per point, comma separated, optional header. Weight column is
// named "w", label column "y"; without a header the layout is
// [features..., w?, y?].
DiscreteMeasure load_csv(const std::string& path, bool has_weights, bool has_labels);
void save_csv(const DiscreteMeasure& m, const std::string& path,
              bool with_weights, bool with_labels);

struct BlobPair {
    DiscreteMeasure source;
    DiscreteMeasure target;
};

// Class centers for make_blobs: k points on a circle of radius 3 in the first
// two coordinates, zero elsewhere.
std::vector<Vector> blob_centers(int k, int d);

// Labeled Gaussian blobs; the target is drawn from the same component laws,
// rotated by `rotation` in the first two coordinates and then shifted.
// Target labels are carried for scoring; adaptation pipelines must not read them.
BlobPair make_blobs(int k, int per_class, int d, const Vector& shift,
                    double rotation, Rng& rng);

}  // namespace sot
