#pragma once

#include "corrshift/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace corrshift {

enum class ModelKind { linear, mlp, small_conv };

/// Bias-free ReLU architectures.
struct ModelSpec {
    ModelKind kind = ModelKind::mlp;
    std::size_t hidden_layers = 3;
    std::size_t width = 200;
    /// Output channels of each conv layer (small_conv only).
    std::vector<std::size_t> conv_channels{16, 32};
    std::size_t kernel = 3;
    std::size_t pool = 2;

    void validate() const;
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Where the correlation penalty reads the representation.
enum class AttachPoint { output, first_hidden };

struct ForwardResult {
    Var output;
    /// (rows, features) representation at the attachment point. Conv feature
    /// maps are already passed through conv_reshape.
    Var attachment;
    /// Attachment rows per input sample (H * W for conv, else 1).
    std::size_t rows_per_sample = 1;
};

class Model {
public:
    /// He-normal init for hidden layers, 1/fan_in variance for the head, and
    /// zeros for the linear model. Every draw comes from stream (seed, layer).
    Model(ModelSpec spec, Shape sample_shape, std::size_t outputs, std::uint64_t seed);

    /// Parameters are bound as gradient leaves.
    ForwardResult forward(Tape& tape, const Var& x, AttachPoint attach, bool pre_activation);
    /// Parameters are bound read-only.
    ForwardResult forward(Tape& tape, const Var& x, AttachPoint attach, bool pre_activation) const;
    /// Output only, batched, no gradient tracking.
    Tensor predict(const Tensor& x, std::size_t batch = 1024) const;

    std::vector<Tensor*> parameters();
    const std::vector<Tensor>& parameter_values() const noexcept { return params_; }
    void set_parameters(const std::vector<Tensor>& values);
    double squared_norm() const;

    const ModelSpec& spec() const noexcept { return spec_; }
    const Shape& sample_shape() const noexcept { return sample_shape_; }
    std::size_t outputs() const noexcept { return outputs_; }

private:
    template <typename Bind>
    ForwardResult forward_impl(const Var& x, AttachPoint attach, bool pre_activation, Bind bind) const;

    ModelSpec spec_;
    Shape sample_shape_;
    std::size_t outputs_;
    std::vector<Tensor> params_;
};

} // namespace corrshift
