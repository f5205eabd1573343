#include "corrshift/autodiff.hpp"

#include "corrshift/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace corrshift {

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const {
    if (!tape_) throw TapeError("Var: default-constructed handle has no value");
    tape_->check(*this);
    return tape_->value(id_);
}

bool Var::tracks_grad() const {
    tape().check(*this);
    return tape_->needs_grad(id_);
}

Tape& Var::tape() const {
    if (!tape_) throw TapeError("Var: default-constructed handle has no tape");
    return *tape_;
}

void Tape::check(const Var& v) const {
    if (v.tape_ != this) throw TapeError("Var belongs to a different tape");
    if (v.generation_ != generation_ || v.id_ >= nodes_.size()) {
        if (consumed_)
            throw TapeError("tape already consumed by backward(); run a new forward pass first");
        throw TapeError("stale Var: the tape has been cleared since it was recorded");
    }
}

const Tensor& Tape::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
}

Var Tape::push(Node node) {
    consumed_ = false;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::leaf(Tensor& t) {
    Node n;
    n.external = &t;
    if (t.requires_grad()) {
        n.grad_target = &t;
        n.needs_grad = true;
    }
    return push(std::move(n));
}

Var Tape::view(const Tensor& t) {
    Node n;
    n.external = &t;
    return push(std::move(n));
}

Var Tape::constant(Tensor t) {
    Node n;
    n.owned = std::move(t);
    return push(std::move(n));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        check(v);
        n.inputs.push_back(v.id());
        n.needs_grad = n.needs_grad || nodes_[v.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

void Tape::clear() {
    nodes_.clear();
    ++generation_;
}

void Tape::backward(const Var& root) {
    check(root);
    const Tensor& rv = value(root.id());
    if (rv.size() != 1)
        throw TapeError("backward: root must be a scalar, got shape " + to_string(rv.shape()));

    for (Node& n : nodes_)
        if (n.needs_grad) n.grad.assign(n.external ? n.external->size() : n.owned.size(), 0.0);

    if (nodes_[root.id()].needs_grad) {
        nodes_[root.id()].grad[0] = 1.0;
        for (std::size_t id = root.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.needs_grad && n.backward) n.backward(*this, id);
        }
    }

    std::unordered_set<Tensor*> reset;
    for (Node& n : nodes_) {
        if (!n.grad_target) continue;
        auto g = n.grad_target->ensure_grad();
        if (reset.insert(n.grad_target).second) std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }

    clear();
    consumed_ = true;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& need) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a) + " " + need);
}

Eigen::Map<RowMatrixXd> as_matrix(std::span<double> g, Eigen::Index r, Eigen::Index c) { return {g.data(), r, c}; }

template <typename Fwd, typename Bwd>
Var unary_elementwise(const Var& a, Fwd fwd, Bwd dfdx) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    return a.tape().record(std::move(out), {a}, [dfdx](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        const Tensor& x = t.value(in);
        auto g = t.grad(self);
        auto gi = t.grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * dfdx(x[i]);
    });
}

void same_shape(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
    if (&a.tape() != &b.tape()) throw TapeError(std::string(op) + ": operands live on different tapes");
}

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

} // namespace

// ---------------------------------------------------------------------------
// Linear algebra and elementwise ops

Var matmul(const Var& a, const Var& b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) shape_fail("matmul", x.shape(), y.shape());
    Tensor out(Shape{x.dim(0), y.dim(1)});
    out.matrix().noalias() = x.matrix() * y.matrix();
    return a.tape().record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
        const auto in = t.inputs(self);
        const Tensor& x = t.value(in[0]);
        const Tensor& y = t.value(in[1]);
        const auto m = static_cast<Eigen::Index>(x.dim(0));
        const auto k = static_cast<Eigen::Index>(x.dim(1));
        const auto n = static_cast<Eigen::Index>(y.dim(1));
        auto g = as_matrix(t.grad(self), m, n);
        if (t.needs_grad(in[0])) as_matrix(t.grad(in[0]), m, k).noalias() += g * y.matrix().transpose();
        if (t.needs_grad(in[1])) as_matrix(t.grad(in[1]), k, n).noalias() += x.matrix().transpose() * g;
    });
}

Var add(const Var& a, const Var& b) {
    same_shape("add", a, b);
    Tensor out(a.shape());
    out.vec() = a.value().vec() + b.value().vec();
    return a.tape().record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        for (std::size_t in : t.inputs(self)) {
            if (!t.needs_grad(in)) continue;
            auto gi = t.grad(in);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    same_shape("sub", a, b);
    Tensor out(a.shape());
    out.vec() = a.value().vec() - b.value().vec();
    return a.tape().record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto in = t.inputs(self);
        if (t.needs_grad(in[0])) {
            auto gi = t.grad(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
        if (t.needs_grad(in[1])) {
            auto gi = t.grad(in[1]);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    same_shape("mul", a, b);
    Tensor out(a.shape());
    out.vec() = a.value().vec().cwiseProduct(b.value().vec());
    return a.tape().record(std::move(out), {a, b}, [](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        const auto in = t.inputs(self);
        const Tensor& x = t.value(in[0]);
        const Tensor& y = t.value(in[1]);
        if (t.needs_grad(in[0])) {
            auto gi = t.grad(in[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i];
        }
        if (t.needs_grad(in[1])) {
            auto gi = t.grad(in[1]);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * x[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out(a.shape());
    out.vec() = s * a.value().vec();
    return a.tape().record(std::move(out), {a}, [s](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        auto g = t.grad(self);
        auto gi = t.grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += s * g[i];
    });
}

namespace {
Var row_broadcast(const char* op, const Var& a, const Var& row, double sign) {
    const Tensor& x = a.value();
    const Tensor& r = row.value();
    if (x.rank() != 2 || r.rank() != 1 || r.dim(0) != x.dim(1)) shape_fail(op, x.shape(), r.shape());
    Tensor out(x.shape());
    out.matrix() = x.matrix().rowwise() + sign * r.vec().transpose();
    return a.tape().record(std::move(out), {a, row}, [sign](Tape& t, std::size_t self) {
        const auto in = t.inputs(self);
        const Tensor& x = t.value(in[0]);
        const auto m = static_cast<Eigen::Index>(x.dim(0));
        const auto n = static_cast<Eigen::Index>(x.dim(1));
        auto g = as_matrix(t.grad(self), m, n);
        if (t.needs_grad(in[0])) as_matrix(t.grad(in[0]), m, n) += g;
        if (t.needs_grad(in[1])) {
            auto gr = t.grad(in[1]);
            Eigen::Map<Eigen::RowVectorXd>(gr.data(), n) += sign * g.colwise().sum();
        }
    });
}
} // namespace

Var add_row(const Var& a, const Var& row) { return row_broadcast("add_row", a, row, 1.0); }
Var sub_row(const Var& a, const Var& row) { return row_broadcast("sub_row", a, row, -1.0); }

Var relu(const Var& a) {
    // Subgradient 0 at exactly 0.
    return unary_elementwise(
        a, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var square(const Var& a) {
    return unary_elementwise(a, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().vec().sum());
    return a.tape().record(std::move(out), {a}, [](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        const double g = t.grad(self)[0];
        for (double& v : t.grad(in)) v += g;
    });
}

Var mean(const Var& a) {
    const auto n = a.value().size();
    if (n == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum(const Var& a, std::size_t axis) {
    const Tensor& x = a.value();
    if (axis >= x.rank()) shape_fail("sum(axis)", x.shape(), "has no axis " + std::to_string(axis));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t len = x.dim(axis);
    Shape os = x.shape();
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor out(os);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
    return a.tape().record(std::move(out), {a}, [outer, inner, len](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        auto g = t.grad(self);
        auto gi = t.grad(in);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) gi[(o * len + l) * inner + i] += g[o * inner + i];
    });
}

Var mean(const Var& a, std::size_t axis) {
    const std::size_t len = a.value().dim(axis);
    if (len == 0) shape_fail("mean(axis)", a.shape(), "has an empty reduction axis");
    return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

Var sum_squares(const Var& a) {
    Tensor out = Tensor::scalar(a.value().vec().squaredNorm());
    return a.tape().record(std::move(out), {a}, [](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        const double g = t.grad(self)[0];
        const Tensor& x = t.value(in);
        auto gi = t.grad(in);
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += 2.0 * g * x[i];
    });
}

// ---------------------------------------------------------------------------
// Layout ops

Var reshape(const Var& a, Shape shape) {
    if (element_count(shape) != a.value().size()) shape_fail("reshape", a.shape(), shape);
    if (shape == a.shape()) return a;
    Tensor out(std::move(shape), a.value().storage());
    return a.tape().record(std::move(out), {a}, [](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        auto g = t.grad(self);
        auto gi = t.grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
}

Var transpose(const Var& a) {
    if (a.value().rank() != 2) shape_fail("transpose", a.shape(), "is not rank 2");
    return permute(a, {1, 0});
}

Var permute(const Var& a, std::vector<std::size_t> axes) {
    const Tensor& x = a.value();
    const std::size_t r = x.rank();
    {
        std::vector<std::size_t> sorted = axes;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> want(r);
        std::iota(want.begin(), want.end(), 0);
        if (sorted != want) shape_fail("permute", x.shape(), "cannot be permuted by the given axis order");
    }
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = x.dim(axes[i]);
    const auto in_strides = strides_of(x.shape());
    // src[k] = input offset of output element k.
    std::vector<std::size_t> src(x.size());
    {
        std::vector<std::size_t> idx(r, 0);
        for (std::size_t k = 0; k < src.size(); ++k) {
            std::size_t off = 0;
            for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
            src[k] = off;
            for (std::size_t i = r; i-- > 0;) {
                if (++idx[i] < os[i]) break;
                idx[i] = 0;
            }
        }
    }
    Tensor out(os);
    for (std::size_t k = 0; k < src.size(); ++k) out[k] = x[src[k]];
    return a.tape().record(std::move(out), {a}, [src = std::move(src)](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        auto g = t.grad(self);
        auto gi = t.grad(in);
        for (std::size_t k = 0; k < src.size(); ++k) gi[src[k]] += g[k];
    });
}

Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
    const Tensor& x = a.value();
    if (x.rank() == 0) shape_fail("gather_rows", x.shape(), "has no row axis");
    const std::size_t n = x.dim(0);
    const std::size_t width = n ? x.size() / n : 0;
    for (auto r : rows)
        if (r >= n)
            throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for shape " + to_string(x.shape()));
    Shape os = x.shape();
    os[0] = rows.size();
    Tensor out(os);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * width), width,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * width));
    return a.tape().record(std::move(out), {a}, [rows = std::move(rows), width](Tape& t, std::size_t self) {
        const std::size_t in = t.inputs(self)[0];
        if (!t.needs_grad(in)) return;
        auto g = t.grad(self);
        auto gi = t.grad(in);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < width; ++j) gi[rows[i] * width + j] += g[i * width + j];
    });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace {

struct ConvGeom {
    std::size_t n, c, h, w, o, kh, kw, pad, oh, ow;
    std::size_t patch() const { return c * kh * kw; }
    std::size_t sites() const { return oh * ow; }
};

void im2col(const double* img, const ConvGeom& g, double* col) {
    const auto sites = g.sites();
    for (std::size_t ch = 0; ch < g.c; ++ch)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = col + ((ch * g.kh + i) * g.kw + j) * sites;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox + j) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.ow + ox] =
                            inside ? img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
                    }
                }
            }
}

void col2im_add(const double* col, const ConvGeom& g, double* img) {
    const auto sites = g.sites();
    for (std::size_t ch = 0; ch < g.c; ++ch)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = col + ((ch * g.kh + i) * g.kw + j) * sites;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox + j) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        img[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.ow + ox];
                    }
                }
            }
}

} // namespace

Var conv2d(const Var& x, const Var& kernel, std::size_t padding) {
    const Tensor& in = x.value();
    const Tensor& k = kernel.value();
    if (in.rank() != 4 || k.rank() != 4 || in.dim(1) != k.dim(1)) shape_fail("conv2d", in.shape(), k.shape());
    if (in.dim(2) + 2 * padding < k.dim(2) || in.dim(3) + 2 * padding < k.dim(3))
        shape_fail("conv2d", in.shape(), k.shape());
    ConvGeom g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), k.dim(0), k.dim(2), k.dim(3), padding, 0, 0};
    g.oh = g.h + 2 * padding - g.kh + 1;
    g.ow = g.w + 2 * padding - g.kw + 1;

    Tensor out(Shape{g.n, g.o, g.oh, g.ow});
    const ConstMatrixMap wmat(k.data().data(), static_cast<Eigen::Index>(g.o), static_cast<Eigen::Index>(g.patch()));
    RowMatrixXd col(static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(g.sites()));
    const std::size_t in_stride = g.c * g.h * g.w;
    const std::size_t out_stride = g.o * g.sites();
    for (std::size_t b = 0; b < g.n; ++b) {
        im2col(in.data().data() + b * in_stride, g, col.data());
        MatrixMap(out.data().data() + b * out_stride, static_cast<Eigen::Index>(g.o),
                  static_cast<Eigen::Index>(g.sites()))
            .noalias() = wmat * col;
    }

    return x.tape().record(std::move(out), {x, kernel}, [g](Tape& t, std::size_t self) {
        const auto ids = t.inputs(self);
        const Tensor& in = t.value(ids[0]);
        const Tensor& k = t.value(ids[1]);
        const bool dx = t.needs_grad(ids[0]);
        const bool dw = t.needs_grad(ids[1]);
        auto gout = t.grad(self);
        const auto O = static_cast<Eigen::Index>(g.o);
        const auto P = static_cast<Eigen::Index>(g.patch());
        const auto S = static_cast<Eigen::Index>(g.sites());
        const ConstMatrixMap wmat(k.data().data(), O, P);
        RowMatrixXd col(P, S);
        RowMatrixXd dcol(P, S);
        RowMatrixXd dwacc = RowMatrixXd::Zero(O, P);
        const std::size_t in_stride = g.c * g.h * g.w;
        const std::size_t out_stride = g.o * g.sites();
        for (std::size_t b = 0; b < g.n; ++b) {
            const ConstMatrixMap go(gout.data() + b * out_stride, O, S);
            if (dw) {
                im2col(in.data().data() + b * in_stride, g, col.data());
                dwacc.noalias() += go * col.transpose();
            }
            if (dx) {
                dcol.noalias() = wmat.transpose() * go;
                col2im_add(dcol.data(), g, t.grad(ids[0]).data() + b * in_stride);
            }
        }
        if (dw) as_matrix(t.grad(ids[1]), O, P) += dwacc;
    });
}

Var avg_pool2d(const Var& x, std::size_t k) {
    const Tensor& in = x.value();
    if (in.rank() != 4 || k == 0 || in.dim(2) % k || in.dim(3) % k)
        shape_fail("avg_pool2d", in.shape(), "is not (N, C, H, W) with H, W divisible by " + std::to_string(k));
    const std::size_t planes = in.dim(0) * in.dim(1);
    const std::size_t h = in.dim(2), w = in.dim(3), oh = h / k, ow = w / k;
    const double inv = 1.0 / static_cast<double>(k * k);
    Tensor out(Shape{in.dim(0), in.dim(1), oh, ow});
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx)
                out[(p * oh + y / k) * ow + xx / k] += inv * in[(p * h + y) * w + xx];
    return x.tape().record(std::move(out), {x}, [planes, h, w, k, oh, ow, inv](Tape& t, std::size_t self) {
        const std::size_t id = t.inputs(self)[0];
        if (!t.needs_grad(id)) return;
        auto g = t.grad(self);
        auto gi = t.grad(id);
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t xx = 0; xx < w; ++xx) gi[(p * h + y) * w + xx] += inv * g[(p * oh + y / k) * ow + xx / k];
    });
}

// ---------------------------------------------------------------------------
// Losses

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2 || z.dim(0) != labels.size())
        shape_fail("softmax_cross_entropy", z.shape(), Shape{labels.size()});
    const std::size_t b = z.dim(0), k = z.dim(1);
    if (b == 0) shape_fail("softmax_cross_entropy", z.shape(), "has no rows");
    std::vector<double> probs(b * k);
    std::vector<int> lab(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= k)
            throw ShapeError("softmax_cross_entropy: label " + std::to_string(lab[i]) + " outside [0, " +
                             std::to_string(k) + ")");
        const double* row = z.data().data() + i * k;
        const double mx = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - lse);
        total += lse - row[static_cast<std::size_t>(lab[i])];
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(b));
    return logits.tape().record(
        std::move(out), {logits}, [probs = std::move(probs), lab = std::move(lab), b, k](Tape& t, std::size_t self) {
            const std::size_t id = t.inputs(self)[0];
            if (!t.needs_grad(id)) return;
            const double g = t.grad(self)[0] / static_cast<double>(b);
            auto gi = t.grad(id);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < k; ++j)
                    gi[i * k + j] += g * (probs[i * k + j] - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0));
        });
}

Var squared_error(const Var& prediction, const Tensor& target) {
    if (prediction.shape() != target.shape()) shape_fail("squared_error", prediction.shape(), target.shape());
    const std::size_t rows = prediction.value().rank() ? prediction.value().dim(0) : 1;
    if (rows == 0) shape_fail("squared_error", prediction.shape(), "has no rows");
    Var diff = sub(prediction, prediction.tape().constant(target));
    return scale(sum_squares(diff), 1.0 / static_cast<double>(rows));
}

} // namespace corrshift
