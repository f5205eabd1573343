#include "corrshift/model.hpp"

#include "corrshift/error.hpp"
#include "corrshift/regularizers.hpp"
#include "corrshift/rng.hpp"

#include <cmath>

namespace corrshift {

void ModelSpec::validate() const {
    switch (kind) {
    case ModelKind::linear:
        return;
    case ModelKind::mlp:
        if (hidden_layers == 0 || width == 0) throw SpecError("ModelSpec: mlp needs hidden_layers > 0 and width > 0");
        return;
    case ModelKind::small_conv:
        if (conv_channels.empty()) throw SpecError("ModelSpec: small_conv needs at least one conv layer");
        for (std::size_t c : conv_channels)
            if (c == 0) throw SpecError("ModelSpec: conv channel count must be positive");
        if (kernel % 2 == 0) throw SpecError("ModelSpec: conv kernel must be odd");
        if (pool == 0) throw SpecError("ModelSpec: pool must be positive");
        return;
    }
}

std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::linear: return "linear";
    case ModelKind::mlp: return "mlp";
    case ModelKind::small_conv: return "small_conv";
    }
    return "?";
}

ModelKind parse_model_kind(const std::string& name) {
    if (name == "linear") return ModelKind::linear;
    if (name == "mlp") return ModelKind::mlp;
    if (name == "small_conv") return ModelKind::small_conv;
    throw SpecError("unknown model kind '" + name + "' (expected linear, mlp or small_conv)");
}

namespace {

Tensor normal_init(Shape shape, double stddev, CounterRng rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

} // namespace

Model::Model(ModelSpec spec, Shape sample_shape, std::size_t outputs, std::uint64_t seed)
    : spec_(std::move(spec)), sample_shape_(std::move(sample_shape)), outputs_(outputs) {
    spec_.validate();
    if (outputs_ == 0) throw SpecError("Model: outputs must be positive");
    const std::size_t in = element_count(sample_shape_);
    if (sample_shape_.empty() || in == 0) throw ShapeError("Model: empty sample shape");
    std::uint64_t layer = 0;
    auto rng = [&] { return CounterRng(seed, 0x1a7e + layer++); };

    switch (spec_.kind) {
    case ModelKind::linear:
        params_.emplace_back(Shape{in, outputs_});
        break;
    case ModelKind::mlp: {
        std::size_t fan_in = in;
        for (std::size_t l = 0; l < spec_.hidden_layers; ++l) {
            params_.push_back(normal_init({fan_in, spec_.width}, std::sqrt(2.0 / static_cast<double>(fan_in)), rng()));
            fan_in = spec_.width;
        }
        params_.push_back(normal_init({fan_in, outputs_}, std::sqrt(1.0 / static_cast<double>(fan_in)), rng()));
        break;
    }
    case ModelKind::small_conv: {
        if (sample_shape_.size() != 3)
            throw ShapeError("Model: small_conv needs (C, H, W) samples, got " + to_string(sample_shape_));
        std::size_t c = sample_shape_[0], h = sample_shape_[1], w = sample_shape_[2];
        for (std::size_t out : spec_.conv_channels) {
            const std::size_t fan_in = c * spec_.kernel * spec_.kernel;
            params_.push_back(normal_init({out, c, spec_.kernel, spec_.kernel},
                                          std::sqrt(2.0 / static_cast<double>(fan_in)), rng()));
            if (h % spec_.pool || w % spec_.pool)
                throw ShapeError("Model: feature map " + std::to_string(h) + "x" + std::to_string(w) +
                                 " is not divisible by pool " + std::to_string(spec_.pool));
            c = out;
            h /= spec_.pool;
            w /= spec_.pool;
        }
        const std::size_t fan_in = c * h * w;
        params_.push_back(normal_init({fan_in, outputs_}, std::sqrt(1.0 / static_cast<double>(fan_in)), rng()));
        break;
    }
    }
    for (Tensor& p : params_) p.set_requires_grad(true);
}

template <typename Bind>
ForwardResult Model::forward_impl(const Var& x, AttachPoint attach, bool pre_activation, Bind bind) const {
    Shape expect{x.dim(0)};
    expect.insert(expect.end(), sample_shape_.begin(), sample_shape_.end());
    if (x.shape() != expect)
        throw ShapeError("Model::forward: input " + to_string(x.shape()) + " does not match " + to_string(expect));
    if (attach == AttachPoint::first_hidden && spec_.kind == ModelKind::linear)
        throw SpecError("Model::forward: a linear model has no hidden layer to attach to");

    const std::size_t batch = x.dim(0);
    ForwardResult r;
    switch (spec_.kind) {
    case ModelKind::linear:
        r.output = matmul(reshape(x, {batch, element_count(sample_shape_)}), bind(0));
        break;
    case ModelKind::mlp: {
        Var h = reshape(x, {batch, element_count(sample_shape_)});
        for (std::size_t l = 0; l < spec_.hidden_layers; ++l) {
            const Var z = matmul(h, bind(l));
            h = relu(z);
            if (l == 0) r.attachment = pre_activation ? z : h;
        }
        r.output = matmul(h, bind(spec_.hidden_layers));
        break;
    }
    case ModelKind::small_conv: {
        Var h = x;
        for (std::size_t l = 0; l < spec_.conv_channels.size(); ++l) {
            const Var z = conv2d(h, bind(l), spec_.kernel / 2);
            const Var a = relu(z);
            if (l == 0 && attach == AttachPoint::first_hidden) {
                r.attachment = conv_reshape(pre_activation ? z : a);
                r.rows_per_sample = z.dim(2) * z.dim(3);
            }
            h = spec_.pool > 1 ? avg_pool2d(a, spec_.pool) : a;
        }
        r.output = matmul(reshape(h, {batch, h.value().size() / batch}), bind(spec_.conv_channels.size()));
        break;
    }
    }
    if (attach == AttachPoint::output) r.attachment = r.output;
    return r;
}

ForwardResult Model::forward(Tape& tape, const Var& x, AttachPoint attach, bool pre_activation) {
    return forward_impl(x, attach, pre_activation, [&](std::size_t i) { return tape.leaf(params_[i]); });
}

ForwardResult Model::forward(Tape& tape, const Var& x, AttachPoint attach, bool pre_activation) const {
    return forward_impl(x, attach, pre_activation, [&](std::size_t i) { return tape.view(params_[i]); });
}

Tensor Model::predict(const Tensor& x, std::size_t batch) const {
    if (x.rank() == 0) throw ShapeError("Model::predict: input has no batch axis");
    const std::size_t n = x.dim(0);
    const std::size_t width = n ? x.size() / n : 0;
    Tensor out(Shape{n, outputs_});
    Tape tape;
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t b = std::min(batch, n - start);
        Shape s = x.shape();
        s[0] = b;
        Tensor chunk(s, std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(start * width),
                                            x.data().begin() + static_cast<std::ptrdiff_t>((start + b) * width)));
        const Tensor& y = forward(tape, tape.view(chunk), AttachPoint::output, false).output.value();
        std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * outputs_));
        tape.clear();
    }
    return out;
}

std::vector<Tensor*> Model::parameters() {
    std::vector<Tensor*> out;
    for (Tensor& p : params_) out.push_back(&p);
    return out;
}

void Model::set_parameters(const std::vector<Tensor>& values) {
    if (values.size() != params_.size())
        throw ShapeError("Model::set_parameters: expected " + std::to_string(params_.size()) + " tensors, got " +
                         std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].shape() != params_[i].shape())
            throw ShapeError("Model::set_parameters: tensor " + std::to_string(i) + " has shape " +
                             to_string(values[i].shape()) + ", expected " + to_string(params_[i].shape()));
        params_[i].storage() = values[i].storage();
    }
}

double Model::squared_norm() const {
    double s = 0.0;
    for (const Tensor& p : params_) s += p.vec().squaredNorm();
    return s;
}

} // namespace corrshift
