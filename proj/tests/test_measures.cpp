#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "sot/measures.hpp"

using namespace sot;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/sot_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("discrete measure validates the weight simplex") {
    Matrix pts(2, 1);
    pts << 0.0, 1.0;
    CHECK_THROWS_AS(DiscreteMeasure(pts, (Vector(2) << -0.1, 1.1).finished()), ConfigError);
    CHECK_THROWS_AS(DiscreteMeasure(pts, (Vector(2) << 0.4, 0.4).finished()), ConfigError);
    Matrix bad = pts;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(DiscreteMeasure::uniform(bad), ConfigError);
    CHECK_NOTHROW(DiscreteMeasure(pts, (Vector(2) << 0.25, 0.75).finished()));
}

TEST_CASE("sampling a single-atom measure repeats the atom") {
    Matrix pts(1, 2);
    pts << 1.5, -2.0;
    const MeasureSource src{DiscreteMeasure::uniform(pts)};
    Rng rng(0);
    Batch b = sample_batch(src, 3, rng);
    REQUIRE(b.points.rows() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(b.points(i, 0) == 1.5);
        CHECK(b.points(i, 1) == -2.0);
        CHECK((*b.indices)[i] == 0);
    }
}

TEST_CASE("gaussian sample mean obeys the law of large numbers") {
    const GaussianMeasure g(Vector::Zero(2), Matrix::Identity(2, 2));
    Rng rng(42);
    Batch b = sample_batch(MeasureSource{g}, 100000, rng);
    const Vector mean = b.points.colwise().mean();
    CHECK(std::abs(mean[0]) < 0.02);
    CHECK(std::abs(mean[1]) < 0.02);
    CHECK_FALSE(b.indices.has_value());
}

TEST_CASE("discrete sampling tracks the weights") {
    Matrix pts(2, 1);
    pts << 0.0, 1.0;
    const DiscreteMeasure m(pts, (Vector(2) << 0.9, 0.1).finished());
    Rng rng(7);
    int first = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
        if (m.sample_index(rng) == 0) ++first;
    const double freq = double(first) / draws;
    CHECK(freq >= 0.88);
    CHECK(freq <= 0.92);
}

TEST_CASE("chi-square sanity for weighted sampling") {
    Matrix pts(3, 1);
    pts << 0, 1, 2;
    const Vector w = (Vector(3) << 0.2, 0.3, 0.5).finished();
    const DiscreteMeasure m(pts, w);
    Rng rng(11);
    const int draws = 10000;
    Vector counts = Vector::Zero(3);
    for (int i = 0; i < draws; ++i) counts[m.sample_index(rng)] += 1.0;
    double chi2 = 0.0;
    for (int k = 0; k < 3; ++k) {
        const double expected = w[k] * draws;
        chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
    }
    CHECK(chi2 < 20.0);  // df = 2
}

TEST_CASE("cost matrix basics") {
    Matrix o(1, 2), p(1, 2);
    o << 0, 0;
    p << 3, 4;
    CHECK(cost_matrix(CostFn::squared_euclidean(), o, o)(0, 0) == doctest::Approx(0.0));
    CHECK(cost_matrix(CostFn::squared_euclidean(), o, p)(0, 0) == doctest::Approx(25.0));
    CHECK(cost_matrix(CostFn::euclidean(), o, p)(0, 0) == doctest::Approx(5.0));

    Matrix q(2, 3);
    CHECK_THROWS_AS(cost_matrix(CostFn::squared_euclidean(), o, q), ConfigError);
}

TEST_CASE("cost matrix on a shared cloud is symmetric with zero diagonal") {
    Rng rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(10, 3);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 3; ++j) x(i, j) = normal(rng);
    const Matrix C = cost_matrix(CostFn::squared_euclidean(), x, x);
    CHECK((C - C.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(C.diagonal().cwiseAbs().maxCoeff() < 1e-12);
    CHECK(C.minCoeff() >= 0.0);
}

TEST_CASE("empirical moments of a two-point measure") {
    Matrix pts(2, 1);
    pts << -1.0, 1.0;
    const Moments m = empirical_moments(DiscreteMeasure::uniform(pts));
    CHECK(m.mean[0] == doctest::Approx(0.0));
    CHECK(m.covariance(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("empirical moments detect a degenerate direction") {
    Matrix pts(5, 2);
    for (int i = 0; i < 5; ++i) {
        pts(i, 0) = i;
        pts(i, 1) = 2.0 * i;
    }
    const Moments m = empirical_moments(DiscreteMeasure::uniform(pts));
    Eigen::SelfAdjointEigenSolver<Matrix> es(m.covariance);
    CHECK(es.eigenvalues()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(es.eigenvalues()[1] > 0.1);
}

TEST_CASE("empirical moments match brute-force weighted sums") {
    Rng rng(5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.1, 1.0);
    Matrix pts(100, 3);
    Vector w(100);
    for (int i = 0; i < 100; ++i) {
        for (int j = 0; j < 3; ++j) pts(i, j) = normal(rng);
        w[i] = unif(rng);
    }
    w /= w.sum();
    const Moments m = empirical_moments(DiscreteMeasure(pts, w));

    Vector mean = Vector::Zero(3);
    for (int i = 0; i < 100; ++i) mean += w[i] * pts.row(i).transpose();
    Matrix cov = Matrix::Zero(3, 3);
    for (int i = 0; i < 100; ++i) {
        const Vector d = pts.row(i).transpose() - mean;
        cov += w[i] * d * d.transpose();
    }
    CHECK((m.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((m.covariance - cov).cwiseAbs().maxCoeff() < 1e-12);

    Matrix single(1, 1);
    single << 0.0;
    CHECK_THROWS_AS(empirical_moments(DiscreteMeasure::uniform(single)), ConfigError);
}

TEST_CASE("csv load applies uniform weights when none are present") {
    TempFile f("plain.csv");
    std::ofstream(f.path) << "1.0,2.0\n3.0,4.0\n5.0,6.0\n";
    const DiscreteMeasure m = load_csv(f.path, false, false);
    REQUIRE(m.size() == 3);
    CHECK(m.dim() == 2);
    for (int i = 0; i < 3; ++i) CHECK(m.weights()[i] == doctest::Approx(1.0 / 3));
}

TEST_CASE("csv weight column is renormalized") {
    TempFile f("weighted.csv");
    std::ofstream(f.path) << "x0,w\n1.0,2.0\n2.0,1.0\n3.0,1.0\n";
    const DiscreteMeasure m = load_csv(f.path, true, false);
    CHECK(m.weights()[0] == doctest::Approx(0.5));
    CHECK(m.weights()[1] == doctest::Approx(0.25));
    CHECK(m.weights()[2] == doctest::Approx(0.25));
}

TEST_CASE("csv round trip preserves the measure") {
    Rng rng(9);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix pts(7, 2);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 2; ++j) pts(i, j) = normal(rng);
    Vector w(7);
    for (int i = 0; i < 7; ++i) w[i] = 1.0 + i;
    w /= w.sum();
    IntVector labels(7);
    for (int i = 0; i < 7; ++i) labels[i] = i % 3;
    const DiscreteMeasure m(pts, w, labels);

    TempFile f("roundtrip.csv");
    save_csv(m, f.path, true, true);
    const DiscreteMeasure back = load_csv(f.path, true, true);
    CHECK((back.points() - m.points()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.weights() - m.weights()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.labels()->array() == m.labels()->array()).all());
}

TEST_CASE("csv rejects malformed input") {
    TempFile bad("bad.csv");
    std::ofstream(bad.path) << "1.0,2.0\n3.0,oops\n";
    CHECK_THROWS_AS(load_csv(bad.path, false, false), ConfigError);

    TempFile ragged("ragged.csv");
    std::ofstream(ragged.path) << "1.0,2.0\n3.0\n";
    CHECK_THROWS_AS(load_csv(ragged.path, false, false), ConfigError);

    TempFile empty("empty.csv");
    std::ofstream(empty.path) << "";
    CHECK_THROWS_AS(load_csv(empty.path, false, false), ConfigError);

    CHECK_THROWS_AS(load_csv("/tmp/definitely_missing_sot.csv", false, false), ConfigError);
}

TEST_CASE("blobs: sizes, labels, uniform weights") {
    Rng rng(1);
    const BlobPair pair = make_blobs(3, 100, 2, Vector::Zero(2), 0.0, rng);
    CHECK(pair.source.size() == 300);
    CHECK(pair.target.size() == 300);
    CHECK(pair.source.labels().has_value());
    CHECK(pair.target.labels().has_value());
    for (int i = 0; i < 300; ++i)
        CHECK(pair.source.weights()[i] == doctest::Approx(1.0 / 300));
}

TEST_CASE("blobs: identity transform draws from identical component laws") {
    Rng rng(2);
    const BlobPair pair = make_blobs(3, 200, 2, Vector::Zero(2), 0.0, rng);
    const auto centers = blob_centers(3, 2);
    for (int c = 0; c < 3; ++c) {
        Vector ms = Vector::Zero(2), mt = Vector::Zero(2);
        int n = 0;
        for (int i = 0; i < pair.source.size(); ++i) {
            if ((*pair.source.labels())[i] != c) continue;
            ms += pair.source.points().row(i).transpose();
            mt += pair.target.points().row(i).transpose();
            ++n;
        }
        ms /= n;
        mt /= n;
        CHECK((ms - centers[size_t(c)]).norm() < 0.3);
        CHECK((mt - centers[size_t(c)]).norm() < 0.3);
    }
}

TEST_CASE("blobs: half-turn rotation negates the class centers") {
    Rng rng(4);
    const BlobPair pair = make_blobs(4, 150, 2, Vector::Zero(2), std::numbers::pi, rng);
    const auto centers = blob_centers(4, 2);
    for (int c = 0; c < 4; ++c) {
        Vector mt = Vector::Zero(2);
        int n = 0;
        for (int i = 0; i < pair.target.size(); ++i) {
            if ((*pair.target.labels())[i] != c) continue;
            mt += pair.target.points().row(i).transpose();
            ++n;
        }
        mt /= n;
        CHECK((mt + centers[size_t(c)]).norm() < 0.3);
    }
}

TEST_CASE("mixture moments and sampling dimensions") {
    const GaussianMeasure g1((Vector(2) << -1, 0).finished(), Matrix::Identity(2, 2));
    const GaussianMeasure g2((Vector(2) << 1, 0).finished(), Matrix::Identity(2, 2));
    const GaussianMixture mix({{0.5, g1}, {0.5, g2}});
    const Moments m = source_moments(MeasureSource{mix});
    CHECK(m.mean.norm() < 1e-12);
    CHECK(m.covariance(0, 0) == doctest::Approx(2.0));  // 1 + between-component spread
    CHECK(m.covariance(1, 1) == doctest::Approx(1.0));

    Rng rng(6);
    Batch b = sample_batch(MeasureSource{mix}, 50, rng);
    CHECK(b.points.rows() == 50);
    CHECK(b.points.cols() == 2);
}

TEST_CASE("gaussian measure rejects bad covariance") {
    Matrix asym(2, 2);
    asym << 1.0, 0.5, 0.2, 1.0;
    CHECK_THROWS_AS(GaussianMeasure(Vector::Zero(2), asym), ConfigError);
    Matrix indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0;
    CHECK_THROWS_AS(GaussianMeasure(Vector::Zero(2), indef), ConfigError);
}
