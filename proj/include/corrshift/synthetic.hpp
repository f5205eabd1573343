#pragma once

#include "corrshift/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace corrshift {

/// Inputs (n x d, or n x C x H x W) with one integer label per row.
/// Synthetic sets use labels in {-1, +1}; image sets use class ids 0..9.
struct LabeledDataset {
    Tensor x;
    std::vector<int> y;

    std::size_t size() const noexcept { return y.size(); }
    /// Per-sample shape (x's shape without the leading row axis).
    Shape sample_shape() const;
    std::size_t sample_size() const;
    void validate() const;
    /// Rows `idx` in order.
    LabeledDataset subset(std::span<const std::size_t> idx) const;
};

/// y ~ U{-1, 1}; x_i ~ N(y, sigma2) with probability p_i, else N(-y, sigma2).
struct SynthSpecA {
    Eigen::VectorXd p;
    double sigma2 = 1e-4;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(p.size()); }
    void validate() const;
};

/// y ~ U{-1, 1}; x_i ~ N(y, sigma2) with probability p_i, else N(y, k * sigma2).
struct SynthSpecB {
    Eigen::VectorXd p;
    double sigma2 = 1e-3;
    double k = 10.0;

    std::size_t dim() const noexcept { return static_cast<std::size_t>(p.size()); }
    void validate() const;
};

/// p_i ~ U[0, 1], drawn once from `seed` and then frozen in the spec.
Eigen::VectorXd random_probabilities(std::size_t d, std::uint64_t seed);

LabeledDataset sample_a(const SynthSpecA& spec, std::size_t n, std::uint64_t seed);
LabeledDataset sample_b(const SynthSpecB& spec, std::size_t n, std::uint64_t seed);

/// E[x y] and the uncentered second moment E[x x^T].
struct Moments {
    Eigen::VectorXd mean_xy;
    Eigen::MatrixXd sigma;
};

Moments analytic_moments(const SynthSpecA& spec);
Moments analytic_moments(const SynthSpecB& spec);

/// Monte-Carlo estimates (1/n) sum x y and (1/n) sum x x^T. Needs n >= 2.
Moments empirical_moments(const LabeledDataset& data);

/// Average over label classes of the (1/n_k-normalized) class covariance of x.
/// This is the population form of the output-attached correlation penalty for
/// a linear model: penalty(theta) = theta^T W theta.
Eigen::MatrixXd within_class_covariance(const LabeledDataset& data);

/// Per-coordinate class-conditional variance the analytic penalty uses:
/// sigma2 + 4 p (1 - p) for A, sigma2 (p + k (1 - p)) for B.
Eigen::VectorXd conditional_variance(const SynthSpecA& spec);
Eigen::VectorXd conditional_variance(const SynthSpecB& spec);

} // namespace corrshift
