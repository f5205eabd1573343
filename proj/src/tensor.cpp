#include "corrshift/tensor.hpp"

#include "corrshift/error.hpp"

#include <cmath>
#include <sstream>

namespace corrshift {

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size())
        throw ShapeError("Tensor: shape " + to_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)) + " values, got " +
                         std::to_string(data_.size()));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor(Shape{rows, cols}, std::vector<double>(values));
}

Tensor Tensor::from(const Eigen::VectorXd& v) {
    return Tensor(Shape{static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Tensor Tensor::from(const Eigen::MatrixXd& m) {
    Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
    return shape_[axis];
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("Tensor::item: shape " + to_string(shape_) + " is not a scalar");
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
    if (element_count(shape) != data_.size())
        throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " + to_string(shape));
    shape_ = std::move(shape);
    grad_.reset();
    return std::move(*this);
}

namespace {
std::pair<Eigen::Index, Eigen::Index> matrix_dims(const Shape& s) {
    if (s.size() == 2) return {static_cast<Eigen::Index>(s[0]), static_cast<Eigen::Index>(s[1])};
    if (s.size() == 1) return {static_cast<Eigen::Index>(s[0]), 1};
    if (s.empty()) return {1, 1};
    throw ShapeError("matrix view: shape " + to_string(s) + " is not rank 1 or 2");
}
} // namespace

MatrixMap Tensor::matrix() {
    auto [r, c] = matrix_dims(shape_);
    return {data_.data(), r, c};
}

ConstMatrixMap Tensor::matrix() const {
    auto [r, c] = matrix_dims(shape_);
    return {data_.data(), r, c};
}

std::span<const double> Tensor::grad() const {
    if (!grad_) throw TapeError("Tensor::grad: no gradient has been populated");
    return *grad_;
}

std::span<double> Tensor::grad() {
    if (!grad_) throw TapeError("Tensor::grad: no gradient has been populated");
    return *grad_;
}

std::span<double> Tensor::ensure_grad() {
    if (!grad_) grad_.emplace(data_.size(), 0.0);
    return *grad_;
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace corrshift
