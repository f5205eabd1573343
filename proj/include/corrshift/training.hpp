#pragma once

#include "corrshift/model.hpp"
#include "corrshift/optim.hpp"
#include "corrshift/regularizers.hpp"
#include "corrshift/synthetic.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace corrshift {

enum class LossKind { squared_error, cross_entropy };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);
std::string to_string(AttachPoint attach);
AttachPoint parse_attach_point(const std::string& name);

/// loss + beta * correlation_penalty + lambda * ||theta||^2.
///
/// With squared_error and a scalar output, labels are +-1 targets and the
/// penalty groups rows by sign (K = 2). With multi-output squared_error the
/// targets are one-hot class ids.
struct RegularizedObjectiveConfig {
    double beta = 0.0;
    double lambda = 0.0;
    LossKind loss = LossKind::cross_entropy;
    AttachPoint attach = AttachPoint::first_hidden;
    /// Penalize the first hidden layer before the ReLU instead of after it.
    bool pre_activation = false;
    std::size_t num_classes = 10;

    void validate(const ModelSpec& model, std::size_t outputs) const;
};

enum class OptimizerKind { adam, lbfgs };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 10;
    /// When non-zero, run this many optimizer steps instead of `epochs`.
    std::size_t iterations = 0;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::adam;
    /// Iteration mode only: evaluate every this many steps (and at the end).
    std::size_t eval_every = 100;
    bool keep_checkpoints = true;
    LbfgsOptions lbfgs;

    void validate(double beta) const;
};

struct NamedSplit {
    std::string name;
    const LabeledDataset* data = nullptr;
};

/// One evaluation point. `epoch` is the epoch number in epoch mode and the
/// step count in iteration mode. The "train" split reports running averages
/// of the minibatch data loss and accuracy since the previous point.
struct MetricsRow {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct ObjectiveTerms {
    std::size_t step = 0;
    double data_loss = 0.0;
    double penalty = 0.0;
    double weight_norm_sq = 0.0;
    double clp = 0.0;
    /// Value of the recorded objective on the tape.
    double total = 0.0;
};

struct Checkpoint {
    std::size_t epoch = 0;
    std::vector<Tensor> params;
};

struct TrainResult {
    Model model;
    std::vector<MetricsRow> history;
    std::vector<Checkpoint> checkpoints;
    std::vector<ObjectiveTerms> trace;
    std::size_t steps = 0;
};

struct Evaluation {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Unregularized data loss and accuracy over a whole dataset.
Evaluation evaluate(const Model& model, const LabeledDataset& data, LossKind loss, std::size_t batch = 500);

/// Data loss on a batch. Scalar-output squared error reads labels as +-1.
Var data_loss(const Var& output, std::span<const int> labels, LossKind loss);

/// PGD against `model`'s data loss on (x, labels).
Tensor pgd_attack(const Model& model, const Tensor& x, std::span<const int> labels, LossKind loss,
                  const BaselineRegSpec& spec, CounterRng& rng);

TrainResult train(const ModelSpec& model_spec, const RegularizedObjectiveConfig& objective,
                  const BaselineRegSpec& baseline, const LabeledDataset& data, const TrainConfig& cfg,
                  std::span<const NamedSplit> eval_splits = {});

/// Epoch of the row with the highest accuracy on `split`; ties go to the
/// earliest. Throws if the split never appears.
std::size_t best_epoch(std::span<const MetricsRow> history, const std::string& split);

} // namespace corrshift
