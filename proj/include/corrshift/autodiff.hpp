#pragma once

#include "corrshift/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace corrshift {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; becomes stale once the
/// tape is cleared (including by `backward`).
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    double item() const { return value().item(); }
    bool tracks_grad() const;

    Tape& tape() const;
    std::size_t id() const noexcept { return id_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
    std::uint64_t generation_ = 0;
};

/// Linear record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// `backward` walks the record once in reverse, writes dRoot/dLeaf into every
/// bound leaf tensor that requires grad, and clears the tape.
class Tape {
public:
    /// Called during backward with the id of the node being differentiated.
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Reference an external tensor without copying it. If the tensor requires
    /// grad, backward writes the gradient into it. The tensor must outlive the
    /// forward/backward pass.
    Var leaf(Tensor& t);
    /// Reference an external tensor read-only; it never receives a gradient.
    Var view(const Tensor& t);
    /// Owned value that never receives a gradient.
    Var constant(Tensor t);

    Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
    }

    void backward(const Var& root);
    void clear();

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(std::size_t id) const;
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    /// Gradient buffer of a node; only valid inside a backward rule.
    std::span<double> grad(std::size_t id) { return nodes_[id].grad; }
    /// Node's input ids, in the order given to `record`.
    std::span<const std::size_t> inputs(std::size_t id) const { return nodes_[id].inputs; }

    void check(const Var& v) const;

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor* grad_target = nullptr;
        bool needs_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        std::vector<double> grad;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::uint64_t generation_ = 1;
    bool consumed_ = false;
};

// Elementwise and linear-algebra primitives. Every op checks shapes and throws
// ShapeError naming the op and the offending shapes.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// (m, n) + (n): adds b to every row of a.
Var add_row(const Var& a, const Var& row);
/// (m, n) - (n).
Var sub_row(const Var& a, const Var& row);
Var relu(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
/// Reduce one axis away.
Var sum(const Var& a, std::size_t axis);
Var mean(const Var& a, std::size_t axis);
Var sum_squares(const Var& a);

Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
/// Output axis i is input axis `axes[i]`.
Var permute(const Var& a, std::vector<std::size_t> axes);
/// Select rows (first-axis slices) by index; repeated indices accumulate grads.
Var gather_rows(const Var& a, std::vector<std::size_t> rows);

/// Cross-correlation of (N, C, H, W) with (O, C, kh, kw), stride 1, `padding`
/// zeros on every border.
Var conv2d(const Var& x, const Var& kernel, std::size_t padding);
/// Non-overlapping k x k average pooling; H and W must be multiples of k.
Var avg_pool2d(const Var& x, std::size_t k);

/// Mean softmax cross-entropy of (B, K) logits against integer labels.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean over rows of the row-wise squared error sum.
Var squared_error(const Var& prediction, const Tensor& target);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

} // namespace corrshift
