#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace corrshift::testing {

/// Gauss-Jordan elimination with partial pivoting on an augmented copy.
/// Deliberately shares no code with the library's Cholesky path.
inline Eigen::VectorXd gauss_jordan_solve(Eigen::MatrixXd a, Eigen::VectorXd b) {
    const Eigen::Index n = a.rows();
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::Index piv = c;
        for (Eigen::Index r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        if (a(piv, c) == 0.0) throw std::runtime_error("gauss_jordan_solve: singular");
        a.row(c).swap(a.row(piv));
        std::swap(b[c], b[piv]);
        const double d = a(c, c);
        a.row(c) /= d;
        b[c] /= d;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (r == c || a(r, c) == 0.0) continue;
            const double f = a(r, c);
            a.row(r) -= f * a.row(c);
            b[r] -= f * b[c];
        }
    }
    return b;
}

inline double relative_gap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / b.norm();
}

} // namespace corrshift::testing
