#include "corrshift/error.hpp"
#include "corrshift/synthetic.hpp"

#include <doctest.h>

#include <cmath>

using namespace corrshift;

namespace {

SynthSpecA spec_a(std::initializer_list<double> p, double sigma2) {
    SynthSpecA s;
    s.p = Eigen::VectorXd::Map(p.begin(), static_cast<Eigen::Index>(p.size()));
    s.sigma2 = sigma2;
    return s;
}

} // namespace

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(spec_a({0.5, 1.2}, 1e-4).validate(), SpecError);
    CHECK_THROWS_AS(spec_a({}, 1e-4).validate(), SpecError);
    CHECK_THROWS_AS(spec_a({0.5}, 0.0).validate(), SpecError);
    SynthSpecB b;
    b.p = Eigen::VectorXd::Constant(3, 0.5);
    b.k = -1.0;
    CHECK_THROWS_AS(b.validate(), SpecError);
    CHECK_THROWS_AS(sample_a(spec_a({0.5}, 1e-4), 0, 1), SpecError);
}

TEST_CASE("p = 1 copies the label, p = 0 flips it") {
    const LabeledDataset d = sample_a(spec_a({1.0, 0.0}, 1e-8), 200, 3);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(std::abs(d.x[2 * i] - d.y[i]) < 1e-3);
        CHECK(std::abs(d.x[2 * i + 1] + d.y[i]) < 1e-3);
    }
}

TEST_CASE("sampling is deterministic per seed and labels are +-1") {
    const SynthSpecA s = spec_a({0.3, 0.7, 0.5}, 1e-4);
    const LabeledDataset a = sample_a(s, 500, 11), b = sample_a(s, 500, 11), c = sample_a(s, 500, 12);
    CHECK(a.x.storage() == b.x.storage());
    CHECK(a.y == b.y);
    CHECK(a.x.storage() != c.x.storage());
    for (int y : a.y) CHECK((y == 1 || y == -1));
}

TEST_CASE("coordinate streams are independent of dimension") {
    // Coordinate i lives on its own stream, so growing d keeps old columns.
    const LabeledDataset small = sample_a(spec_a({0.3, 0.8}, 1e-4), 50, 5);
    const LabeledDataset big = sample_a(spec_a({0.3, 0.8, 0.1}, 1e-4), 50, 5);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(small.x[2 * i] == big.x[3 * i]);
        CHECK(small.x[2 * i + 1] == big.x[3 * i + 1]);
    }
}

TEST_CASE("analytic moments follow the entrywise formulas") {
    const SynthSpecA s = spec_a({0.9, 0.2, 0.5}, 0.01);
    const Moments m = analytic_moments(s);
    for (int i = 0; i < 3; ++i) {
        CHECK(m.mean_xy[i] == doctest::Approx(2 * s.p[i] - 1));
        for (int j = 0; j < 3; ++j) {
            const double want = i == j ? 1.0 + s.sigma2 : (1 - 2 * s.p[i]) * (1 - 2 * s.p[j]);
            CHECK(m.sigma(i, j) == doctest::Approx(want));
        }
    }
    SynthSpecB b;
    b.p = Eigen::Vector2d(0.25, 1.0);
    b.sigma2 = 0.001;
    b.k = 10;
    const Moments mb = analytic_moments(b);
    CHECK(mb.sigma(0, 1) == 1.0);
    CHECK(mb.sigma(0, 0) == doctest::Approx(1.0 + 0.001 * (0.25 + 10 * 0.75)));
    CHECK(mb.sigma(1, 1) == doctest::Approx(1.001));
    CHECK(mb.mean_xy == Eigen::Vector2d::Ones());
}

TEST_CASE("empirical moments converge to the analytic ones") {
    const SynthSpecA s = spec_a({0.9, 0.2, 0.5, 0.65}, 0.01);
    const LabeledDataset d = sample_a(s, 40000, 8);
    const Moments e = empirical_moments(d), a = analytic_moments(s);
    CHECK((e.sigma - a.sigma).cwiseAbs().maxCoeff() < 0.03);
    CHECK((e.mean_xy - a.mean_xy).cwiseAbs().maxCoeff() < 0.03);
    CHECK_THROWS_AS(empirical_moments(sample_a(s, 1, 8)), SpecError);
}

TEST_CASE("within-class covariance matches the conditional variance") {
    const SynthSpecA s = spec_a({0.9, 0.2, 0.5}, 0.01);
    const Eigen::MatrixXd w = within_class_covariance(sample_a(s, 60000, 4));
    const Eigen::VectorXd v = conditional_variance(s);
    for (int i = 0; i < 3; ++i) CHECK(w(i, i) == doctest::Approx(v[i]).epsilon(0.03));
    // Coordinates are independent given y.
    CHECK(std::abs(w(0, 1)) < 0.01);
}

TEST_CASE("subset copies rows in order") {
    const LabeledDataset d = sample_a(spec_a({0.3, 0.6}, 1e-4), 10, 2);
    const std::size_t idx[] = {7, 2};
    const LabeledDataset s = d.subset(idx);
    CHECK(s.size() == 2);
    CHECK(s.x[0] == d.x[14]);
    CHECK(s.y[1] == d.y[2]);
    const std::size_t bad[] = {10};
    CHECK_THROWS_AS(d.subset(bad), ShapeError);
}
