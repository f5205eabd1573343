#pragma once

#include "corrshift/error.hpp"
#include "corrshift/synthetic.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>

namespace corrshift {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class MomentSource { analytic, empirical };

/// Right-hand side convention for the analytic dataset-A system. `absolute`
/// uses |2p - 1|; `signed_moment` uses E[x y] = 2p - 1, which is what gradient
/// descent on the objective converges to.
enum class RhsForm { absolute, signed_moment };

/// Penalty block used by an empirical system. `within_class` is the empirical
/// class-conditional covariance (what the batch penalty actually measures);
/// `analytic_diagonal` keeps the closed-form diagonal and only swaps Sigma.
enum class EmpiricalPenalty { within_class, analytic_diagonal };

/// M theta = rhs with M = Sigma + lambda I + beta * (penalty block).
template <typename Scalar>
struct RegularizedNormalSystem {
    MatrixX<Scalar> m;
    VectorX<Scalar> rhs;
    MomentSource source = MomentSource::analytic;
    std::string provenance;
};

namespace detail {

template <typename Scalar>
void check_coefficients(Scalar beta, Scalar lambda) {
    if (!(beta >= Scalar(0)) || !(lambda >= Scalar(0)))
        throw SpecError("build_system: beta and lambda must be non-negative");
}

template <typename Scalar>
RegularizedNormalSystem<Scalar> assemble(const Moments& mom, const Eigen::MatrixXd& penalty, Scalar beta,
                                         Scalar lambda, MomentSource source, std::string provenance) {
    check_coefficients(beta, lambda);
    RegularizedNormalSystem<Scalar> sys;
    sys.m = mom.sigma.template cast<Scalar>() + beta * penalty.template cast<Scalar>();
    sys.m.diagonal().array() += lambda;
    sys.rhs = mom.mean_xy.template cast<Scalar>();
    sys.source = source;
    sys.provenance = std::move(provenance);
    return sys;
}

template <typename Spec>
Eigen::MatrixXd empirical_penalty(const Spec& spec, const LabeledDataset& data, EmpiricalPenalty which) {
    if (static_cast<std::size_t>(data.sample_size()) != spec.dim())
        throw ShapeError("build_system: dataset dimension " + std::to_string(data.sample_size()) +
                         " does not match spec dimension " + std::to_string(spec.dim()));
    if (which == EmpiricalPenalty::within_class) return within_class_covariance(data);
    return conditional_variance(spec).asDiagonal();
}

} // namespace detail

/// Dataset-A system from closed-form moments:
/// M = Sigma + lambda I + beta (sigma2 I + 4 diag(p (1 - p))), rhs = |2p - 1|.
template <typename Scalar = double>
RegularizedNormalSystem<Scalar> build_system_a(const SynthSpecA& spec, Scalar beta, Scalar lambda,
                                               RhsForm form = RhsForm::absolute) {
    Moments mom = analytic_moments(spec);
    if (form == RhsForm::absolute) mom.mean_xy = mom.mean_xy.cwiseAbs();
    return detail::assemble<Scalar>(mom, conditional_variance(spec).asDiagonal(), beta, lambda, MomentSource::analytic,
                                    form == RhsForm::absolute ? "A/analytic/|2p-1|" : "A/analytic/2p-1");
}

/// Dataset-A system from samples: empirical Sigma and E[x y].
template <typename Scalar = double>
RegularizedNormalSystem<Scalar> build_system_a(const SynthSpecA& spec, Scalar beta, Scalar lambda,
                                               const LabeledDataset& data,
                                               EmpiricalPenalty penalty = EmpiricalPenalty::within_class) {
    spec.validate();
    return detail::assemble<Scalar>(empirical_moments(data), detail::empirical_penalty(spec, data, penalty), beta,
                                    lambda, MomentSource::empirical,
                                    penalty == EmpiricalPenalty::within_class ? "A/empirical/within-class"
                                                                              : "A/empirical/analytic-diagonal");
}

/// Dataset-B system: M = Sigma + lambda I + beta sigma2 diag(p + k (1 - p)), rhs = 1.
template <typename Scalar = double>
RegularizedNormalSystem<Scalar> build_system_b(const SynthSpecB& spec, Scalar beta, Scalar lambda) {
    return detail::assemble<Scalar>(analytic_moments(spec), conditional_variance(spec).asDiagonal(), beta, lambda,
                                    MomentSource::analytic, "B/analytic");
}

template <typename Scalar = double>
RegularizedNormalSystem<Scalar> build_system_b(const SynthSpecB& spec, Scalar beta, Scalar lambda,
                                               const LabeledDataset& data,
                                               EmpiricalPenalty penalty = EmpiricalPenalty::within_class) {
    spec.validate();
    return detail::assemble<Scalar>(empirical_moments(data), detail::empirical_penalty(spec, data, penalty), beta,
                                    lambda, MomentSource::empirical,
                                    penalty == EmpiricalPenalty::within_class ? "B/empirical/within-class"
                                                                              : "B/empirical/analytic-diagonal");
}

/// Lower Cholesky factor L with L L^T = a. Throws FactorizationError naming
/// the first leading principal minor that is not positive.
template <typename Derived>
MatrixX<typename Derived::Scalar> cholesky_lower(const Eigen::MatrixBase<Derived>& a) {
    using Scalar = typename Derived::Scalar;
    const Eigen::Index n = a.rows();
    if (a.cols() != n) throw ShapeError("cholesky: matrix is not square");
    MatrixX<Scalar> l = MatrixX<Scalar>::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Scalar d = a(j, j) - l.row(j).head(j).squaredNorm();
        if (!(d > Scalar(0)) || !std::isfinite(static_cast<double>(d)))
            throw FactorizationError(static_cast<std::size_t>(j + 1),
                                     "matrix is not positive definite: leading minor of order " +
                                         std::to_string(j + 1) + " is not positive");
        const Scalar ljj = std::sqrt(d);
        l(j, j) = ljj;
        if (j + 1 < n)
            l.col(j).tail(n - j - 1) =
                (a.col(j).tail(n - j - 1) - l.bottomRows(n - j - 1).leftCols(j) * l.row(j).head(j).transpose()) / ljj;
    }
    return l;
}

template <typename Derived>
bool is_positive_definite(const Eigen::MatrixBase<Derived>& a) {
    try {
        (void)cholesky_lower(a);
        return true;
    } catch (const FactorizationError&) {
        return false;
    }
}

/// theta* = M^-1 rhs by Cholesky with one step of iterative refinement.
template <typename Scalar>
VectorX<Scalar> solve(const RegularizedNormalSystem<Scalar>& sys) {
    if (sys.rhs.size() != sys.m.rows()) throw ShapeError("solve: rhs length does not match M");
    const MatrixX<Scalar> l = cholesky_lower(sys.m);
    const auto chol_solve = [&l](const VectorX<Scalar>& b) {
        VectorX<Scalar> z = l.template triangularView<Eigen::Lower>().solve(b);
        return VectorX<Scalar>(l.transpose().template triangularView<Eigen::Upper>().solve(z));
    };
    VectorX<Scalar> theta = chol_solve(sys.rhs);
    const VectorX<Scalar> residual = sys.rhs - sys.m * theta;
    theta += chol_solve(residual);
    return theta;
}

/// ||M theta - rhs||_inf.
template <typename Scalar>
Scalar residual_norm(const RegularizedNormalSystem<Scalar>& sys, const VectorX<Scalar>& theta) {
    return (sys.m * theta - sys.rhs).template lpNorm<Eigen::Infinity>();
}

} // namespace corrshift
