#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace corrshift {

using Shape = std::vector<std::size_t>;

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrixXd>;
using ConstMatrixMap = Eigen::Map<const RowMatrixXd>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float64 array with an optional gradient buffer.
///
/// Invariants: `size() == element_count(shape())`; when a gradient is present
/// it has exactly `size()` entries.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static Tensor from(const Eigen::VectorXd& v);
    static Tensor from(const Eigen::MatrixXd& m);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return data_.size(); }
    bool is_scalar() const noexcept { return data_.size() == 1; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double item() const;

    /// Reinterpret with a new shape of equal element count.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    /// Rank-2 view; rank-1 tensors are viewed as a single column.
    MatrixMap matrix();
    ConstMatrixMap matrix() const;
    VectorMap vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
    ConstVectorMap vec() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::span<const double> grad() const;
    std::span<double> grad();
    /// Allocates a zeroed gradient if none exists and returns it.
    std::span<double> ensure_grad();
    void clear_grad() noexcept { grad_.reset(); }

    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<double> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

} // namespace corrshift
