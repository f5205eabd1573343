#include "support/oracles.hpp"

#include "corrshift/closed_form.hpp"

#include <doctest.h>

using namespace corrshift;
using namespace corrshift::testing;

TEST_CASE("two-dimensional dataset-A system, hand-derived") {
    SynthSpecA s;
    s.p = Eigen::Vector2d(0.9, 0.2);
    s.sigma2 = 0.01;
    const auto sys = build_system_a(s, 1.0, 0.1);
    // M = [[1.48, -0.48], [-0.48, 1.76]], rhs = (0.8, 0.6) -> theta = (5/7, 15/28).
    CHECK(sys.m(0, 0) == doctest::Approx(1.48));
    CHECK(sys.m(0, 1) == doctest::Approx(-0.48));
    CHECK(sys.m(1, 1) == doctest::Approx(1.76));
    const Eigen::VectorXd theta = solve(sys);
    CHECK(theta[0] == doctest::Approx(5.0 / 7.0).epsilon(1e-14));
    CHECK(theta[1] == doctest::Approx(15.0 / 28.0).epsilon(1e-14));

    const auto signed_sys = build_system_a(s, 1.0, 0.1, RhsForm::signed_moment);
    CHECK(signed_sys.rhs[1] == doctest::Approx(-0.6));
}

TEST_CASE("uninformative dimension gets zero weight under the signed rhs") {
    SynthSpecA s;
    s.p = Eigen::Vector3d(0.5, 0.95, 0.1);
    const Eigen::VectorXd theta = solve(build_system_a(s, 10.0, 1e-5, RhsForm::signed_moment));
    CHECK(std::abs(theta[0]) < 1e-12);
}

TEST_CASE("Cholesky solve agrees with Gauss-Jordan on random specs") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        SynthSpecA a;
        a.p = random_probabilities(60, seed);
        SynthSpecB b;
        b.p = random_probabilities(60, seed + 100);
        for (double beta : {0.0, 1.0, 10.0}) {
            const auto sa = build_system_a(a, beta, 1e-5);
            const auto sb = build_system_b(b, beta, 1e-5);
            CHECK(relative_gap(solve(sa), gauss_jordan_solve(sa.m, sa.rhs)) < 1e-9);
            CHECK(relative_gap(solve(sb), gauss_jordan_solve(sb.m, sb.rhs)) < 1e-9);
            CHECK(residual_norm(sa, solve(sa)) <= 1e-8 * sa.rhs.lpNorm<Eigen::Infinity>());
        }
    }
}

TEST_CASE("templated on scalar: long double solve agrees") {
    SynthSpecB b;
    b.p = random_probabilities(40, 3);
    const auto sys_ld = build_system_b<long double>(b, 1.0L, 1e-5L);
    const auto sys_d = build_system_b(b, 1.0, 1e-5);
    const VectorX<long double> t_ld = solve(sys_ld);
    CHECK(relative_gap(t_ld.cast<double>(), solve(sys_d)) < 1e-10);
}

TEST_CASE("factorization failure names the leading minor") {
    Eigen::Matrix3d m;
    m << 4, 2, 0, 2, 1, 0, 0, 0, 1;  // second leading minor is 0
    CHECK_FALSE(is_positive_definite(m));
    try {
        (void)cholesky_lower(m);
        FAIL("expected FactorizationError");
    } catch (const FactorizationError& e) {
        CHECK(e.minor() == 2);
    }
    CHECK(is_positive_definite(Eigen::Matrix3d::Identity()));
}

TEST_CASE("argument checks") {
    SynthSpecA s;
    s.p = Eigen::Vector2d(0.5, 0.5);
    CHECK_THROWS_AS(build_system_a(s, -1.0, 0.0), SpecError);
    SynthSpecA wide;
    wide.p = Eigen::Vector3d(0.5, 0.5, 0.5);
    CHECK_THROWS_AS(build_system_a(s, 1.0, 0.0, sample_a(wide, 10, 1)), ShapeError);
}

TEST_CASE("empirical within-class system equals the sample quadratic") {
    // theta^T (Sigma_hat + beta W + lambda I) theta - 2 theta^T m_hat is the
    // exact full-batch objective of a linear model, so its minimizer must zero
    // the gradient computed directly from the samples.
    SynthSpecA s;
    s.p = random_probabilities(8, 9);
    const LabeledDataset d = sample_a(s, 3000, 10);
    const double beta = 3.0, lambda = 1e-3;
    const Eigen::VectorXd theta = solve(build_system_a(s, beta, lambda, d));
    const ConstMatrixMap x(d.x.data().data(), 3000, 8);
    Eigen::VectorXd y(3000);
    for (int i = 0; i < 3000; ++i) y[i] = d.y[static_cast<std::size_t>(i)];
    Eigen::VectorXd grad = 2.0 * x.transpose() * (x * theta - y) / 3000.0 + 2.0 * lambda * theta;
    for (int label : {-1, 1}) {
        std::vector<Eigen::Index> rows;
        for (int i = 0; i < 3000; ++i)
            if (y[i] == label) rows.push_back(i);
        Eigen::MatrixXd xk = x(rows, Eigen::all);
        const Eigen::VectorXd f = xk * theta;
        const Eigen::VectorXd centered = f.array() - f.mean();
        grad += beta / 2.0 * 2.0 * (xk.rowwise() - xk.colwise().mean()).transpose() * centered /
                static_cast<double>(rows.size());
    }
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-10);
}
