#include "corrshift/synthetic.hpp"

#include "corrshift/error.hpp"
#include "corrshift/rng.hpp"

#include <cmath>
#include <map>

namespace corrshift {

Shape LabeledDataset::sample_shape() const {
    if (x.rank() == 0) return {};
    return Shape(x.shape().begin() + 1, x.shape().end());
}

std::size_t LabeledDataset::sample_size() const { return element_count(sample_shape()); }

void LabeledDataset::validate() const {
    if (x.rank() < 2) throw ShapeError("LabeledDataset: inputs must be at least rank 2, got " + to_string(x.shape()));
    if (x.dim(0) != y.size())
        throw ShapeError("LabeledDataset: " + std::to_string(x.dim(0)) + " input rows but " +
                         std::to_string(y.size()) + " labels");
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> idx) const {
    const std::size_t width = sample_size();
    Shape s = x.shape();
    s[0] = idx.size();
    LabeledDataset out{Tensor(s), std::vector<int>(idx.size())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= size()) throw ShapeError("LabeledDataset::subset: index out of range");
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * width), width,
                    out.x.data().begin() + static_cast<std::ptrdiff_t>(i * width));
        out.y[i] = y[idx[i]];
    }
    return out;
}

namespace {

void check_common(const Eigen::VectorXd& p, double sigma2, const char* name) {
    if (p.size() == 0) throw SpecError(std::string(name) + ": dimension must be positive");
    for (Eigen::Index i = 0; i < p.size(); ++i)
        if (!(p[i] >= 0.0 && p[i] <= 1.0))
            throw SpecError(std::string(name) + ": p[" + std::to_string(i) + "] = " + std::to_string(p[i]) +
                            " is outside [0, 1]");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw SpecError(std::string(name) + ": sigma2 must be positive, got " + std::to_string(sigma2));
}

// Label stream 0, coordinate i on stream i + 1.
template <typename Draw>
LabeledDataset sample_impl(std::size_t d, std::size_t n, std::uint64_t seed, Draw draw) {
    if (n == 0) throw SpecError("sample: n must be positive");
    LabeledDataset out{Tensor(Shape{n, d}), std::vector<int>(n)};
    CounterRng labels(seed, 0);
    for (auto& y : out.y) y = labels.bernoulli(0.5) ? 1 : -1;
    for (std::size_t i = 0; i < d; ++i) {
        CounterRng rng(seed, i + 1);
        for (std::size_t j = 0; j < n; ++j) out.x[j * d + i] = draw(i, static_cast<double>(out.y[j]), rng);
    }
    return out;
}

} // namespace

void SynthSpecA::validate() const { check_common(p, sigma2, "SynthSpecA"); }

void SynthSpecB::validate() const {
    check_common(p, sigma2, "SynthSpecB");
    if (!(k > 0.0) || !std::isfinite(k)) throw SpecError("SynthSpecB: k must be positive, got " + std::to_string(k));
}

Eigen::VectorXd random_probabilities(std::size_t d, std::uint64_t seed) {
    CounterRng rng(seed, 0x5eed);
    Eigen::VectorXd p(static_cast<Eigen::Index>(d));
    for (auto& v : p) v = rng.uniform();
    return p;
}

LabeledDataset sample_a(const SynthSpecA& spec, std::size_t n, std::uint64_t seed) {
    spec.validate();
    const double sd = std::sqrt(spec.sigma2);
    return sample_impl(spec.dim(), n, seed, [&](std::size_t i, double y, CounterRng& rng) {
        const double mean = rng.bernoulli(spec.p[static_cast<Eigen::Index>(i)]) ? y : -y;
        return rng.normal(mean, sd);
    });
}

LabeledDataset sample_b(const SynthSpecB& spec, std::size_t n, std::uint64_t seed) {
    spec.validate();
    const double sd = std::sqrt(spec.sigma2);
    const double sd_wide = std::sqrt(spec.k * spec.sigma2);
    return sample_impl(spec.dim(), n, seed, [&](std::size_t i, double y, CounterRng& rng) {
        const double s = rng.bernoulli(spec.p[static_cast<Eigen::Index>(i)]) ? sd : sd_wide;
        return rng.normal(y, s);
    });
}

Eigen::VectorXd conditional_variance(const SynthSpecA& spec) {
    return (spec.sigma2 + 4.0 * spec.p.array() * (1.0 - spec.p.array())).matrix();
}

Eigen::VectorXd conditional_variance(const SynthSpecB& spec) {
    return (spec.sigma2 * (spec.p.array() + spec.k * (1.0 - spec.p.array()))).matrix();
}

Moments analytic_moments(const SynthSpecA& spec) {
    spec.validate();
    const Eigen::VectorXd m = (2.0 * spec.p.array() - 1.0).matrix();
    Moments out;
    out.mean_xy = m;
    // E[x_i x_j] = (1-2p_i)(1-2p_j) off the diagonal, 1 + sigma2 on it.
    out.sigma = m * m.transpose();
    out.sigma.diagonal().setConstant(1.0 + spec.sigma2);
    return out;
}

Moments analytic_moments(const SynthSpecB& spec) {
    spec.validate();
    const auto d = static_cast<Eigen::Index>(spec.dim());
    Moments out;
    out.mean_xy = Eigen::VectorXd::Ones(d);
    out.sigma = Eigen::MatrixXd::Ones(d, d);
    out.sigma.diagonal() = (1.0 + conditional_variance(spec).array()).matrix();
    return out;
}

Moments empirical_moments(const LabeledDataset& data) {
    data.validate();
    if (data.size() < 2) throw SpecError("empirical_moments: need at least 2 samples, got " + std::to_string(data.size()));
    const auto n = static_cast<double>(data.size());
    const ConstMatrixMap x(data.x.data().data(), static_cast<Eigen::Index>(data.size()),
                           static_cast<Eigen::Index>(data.sample_size()));
    Eigen::VectorXd y(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) y[static_cast<Eigen::Index>(i)] = data.y[i];
    Moments out;
    out.mean_xy = x.transpose() * y / n;
    out.sigma = Eigen::MatrixXd(x.transpose() * x) / n;
    return out;
}

Eigen::MatrixXd within_class_covariance(const LabeledDataset& data) {
    data.validate();
    const auto d = static_cast<Eigen::Index>(data.sample_size());
    const ConstMatrixMap x(data.x.data().data(), static_cast<Eigen::Index>(data.size()), d);
    std::map<int, std::vector<Eigen::Index>> groups;
    for (std::size_t i = 0; i < data.size(); ++i) groups[data.y[i]].push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, d);
    std::size_t counted = 0;
    for (const auto& [label, rows] : groups) {
        if (rows.size() < 2) continue;
        RowMatrixXd xk = x(rows, Eigen::all);
        xk.rowwise() -= xk.colwise().mean();
        w.noalias() += xk.transpose() * xk / static_cast<double>(rows.size());
        ++counted;
    }
    if (counted == 0) throw SpecError("within_class_covariance: no class has two or more samples");
    return w / static_cast<double>(groups.size());
}

} // namespace corrshift
