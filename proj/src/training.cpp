#include "corrshift/training.hpp"

#include "corrshift/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace corrshift {

std::string to_string(LossKind kind) { return kind == LossKind::squared_error ? "squared_error" : "cross_entropy"; }

LossKind parse_loss_kind(const std::string& name) {
    if (name == "squared_error") return LossKind::squared_error;
    if (name == "cross_entropy") return LossKind::cross_entropy;
    throw SpecError("unknown loss '" + name + "' (expected squared_error or cross_entropy)");
}

std::string to_string(AttachPoint attach) { return attach == AttachPoint::output ? "output" : "first_hidden"; }

AttachPoint parse_attach_point(const std::string& name) {
    if (name == "output") return AttachPoint::output;
    if (name == "first_hidden") return AttachPoint::first_hidden;
    throw SpecError("unknown attach point '" + name + "' (expected output or first_hidden)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "lbfgs"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "adam") return OptimizerKind::adam;
    if (name == "lbfgs") return OptimizerKind::lbfgs;
    throw SpecError("unknown optimizer '" + name + "' (expected adam or lbfgs)");
}

namespace {

// Squared error with two classes is scalar regression on +-1 targets.
bool scalar_regression(LossKind loss, std::size_t num_classes) {
    return loss == LossKind::squared_error && num_classes == 2;
}

std::size_t output_count(const RegularizedObjectiveConfig& obj) {
    return scalar_regression(obj.loss, obj.num_classes) ? 1 : obj.num_classes;
}

} // namespace

void RegularizedObjectiveConfig::validate(const ModelSpec& model, std::size_t outputs) const {
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw SpecError("objective: beta must be finite and >= 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw SpecError("objective: lambda must be finite and >= 0");
    if (num_classes < 2) throw SpecError("objective: num_classes must be at least 2");
    if (attach == AttachPoint::output && !(loss == LossKind::squared_error && outputs == 1))
        throw SpecError("objective: attach=output needs squared_error on a scalar output");
    if (attach == AttachPoint::first_hidden && model.kind == ModelKind::linear && beta > 0.0)
        throw SpecError("objective: a linear model has no hidden layer; use attach=output");
}

void TrainConfig::validate(double beta) const {
    if (epochs == 0 && iterations == 0) throw SpecError("train: need epochs > 0 or iterations > 0");
    if (batch_size == 0) throw SpecError("train: batch_size must be positive");
    if (beta > 0.0 && batch_size < 2) throw SpecError("train: batch_size must be >= 2 when beta > 0");
    if (!(lr > 0.0)) throw SpecError("train: lr must be positive");
    if (iterations > 0 && eval_every == 0) throw SpecError("train: eval_every must be positive");
}

Var data_loss(const Var& output, std::span<const int> labels, LossKind loss) {
    const std::size_t b = output.dim(0), k = output.dim(1);
    if (labels.size() != b)
        throw ShapeError("data_loss: " + std::to_string(b) + " outputs but " + std::to_string(labels.size()) + " labels");
    if (loss == LossKind::cross_entropy) return softmax_cross_entropy(output, labels);
    Tensor target(Shape{b, k});
    for (std::size_t i = 0; i < b; ++i) {
        if (k == 1) {
            target[i] = labels[i];
        } else {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
                throw SpecError("data_loss: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) + ")");
            target[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
        }
    }
    return squared_error(output, target);
}

namespace {

std::size_t correct_count(const Tensor& out, std::span<const int> labels) {
    const std::size_t b = out.dim(0), k = out.dim(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < b; ++i) {
        if (k == 1) {
            hits += (out[i] > 0.0) == (labels[i] > 0);
        } else {
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (out[i * k + j] > out[i * k + arg]) arg = j;
            hits += static_cast<int>(arg) == labels[i];
        }
    }
    return hits;
}

LabeledDataset take_rows(const LabeledDataset& data, std::span<const std::size_t> idx) { return data.subset(idx); }

std::vector<int> penalty_labels(std::span<const int> labels, bool scalar) {
    if (!scalar) return {labels.begin(), labels.end()};
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] > 0 ? 1 : 0;
    return out;
}

struct Objective {
    Var total;
    Var output;
    Var data;
    ObjectiveTerms terms;
};

class Trainer {
public:
    Trainer(const ModelSpec& spec, const RegularizedObjectiveConfig& obj, const BaselineRegSpec& base,
            const LabeledDataset& data, const TrainConfig& cfg, std::span<const NamedSplit> splits)
        : obj_(obj), base_(base), data_(data), cfg_(cfg), splits_(splits),
          result_{Model(spec, data.sample_shape(), output_count(obj), cfg.seed), {}, {}, {}, 0},
          scalar_(scalar_regression(obj.loss, obj.num_classes)), order_rng_(cfg.seed, 1), clp_rng_(cfg.seed, 2),
          noise_rng_(cfg.seed, 3), pgd_rng_(cfg.seed, 4) {}

    TrainResult run() {
        if (cfg_.optimizer == OptimizerKind::lbfgs)
            run_lbfgs();
        else
            run_adam();
        return std::move(result_);
    }

private:
    Model& model() { return result_.model; }

    Objective objective(Tape& tape, const Var& x, std::span<const int> labels) {
        const bool attach = obj_.beta > 0.0;
        const ForwardResult fr = model().forward(tape, x, obj_.attach, obj_.pre_activation);
        Objective o;
        o.output = fr.output;
        o.data = data_loss(fr.output, labels, obj_.loss);
        o.total = o.data;
        o.terms.data_loss = o.data.item();
        if (attach) {
            std::vector<int> groups = penalty_labels(labels, scalar_);
            if (fr.rows_per_sample > 1) groups = repeat_labels(groups, fr.rows_per_sample);
            const Var pen = correlation_penalty(fr.attachment, groups, obj_.num_classes);
            o.terms.penalty = pen.item();
            o.total = o.total + obj_.beta * pen;
        }
        if (obj_.lambda > 0.0) {
            Var norm;
            bool first = true;
            for (Tensor* p : model().parameters()) {
                const Var s = sum_squares(tape.leaf(*p));
                norm = first ? s : norm + s;
                first = false;
            }
            o.terms.weight_norm_sq = norm.item();
            o.total = o.total + obj_.lambda * norm;
        }
        if (base_.kind == BaselineKind::clp && base_.clp_coef > 0.0) {
            const Var c = clp_penalty(fr.output, clp_rng_);
            o.terms.clp = c.item();
            o.total = o.total + base_.clp_coef * c;
        }
        o.terms.total = o.total.item();
        o.terms.step = result_.steps;
        if (!std::isfinite(o.terms.total)) {
            std::ostringstream os;
            os << "training diverged at step " << result_.steps << ": objective " << o.terms.total << " (data "
               << o.terms.data_loss << ", penalty " << o.terms.penalty << ", |theta|^2 " << o.terms.weight_norm_sq
               << ", clp " << o.terms.clp << ")";
            throw DivergenceError(os.str());
        }
        result_.trace.push_back(o.terms);
        return o;
    }

    Tensor transform_inputs(Tensor x, std::span<const int> labels) {
        switch (base_.kind) {
        case BaselineKind::gaussian_noise:
            return gaussian_augment(x, base_.noise_std, noise_rng_);
        case BaselineKind::pgd:
            return pgd_attack(std::as_const(model()), x, labels, obj_.loss, base_, pgd_rng_);
        default:
            return x;
        }
    }

    void record_point(std::size_t epoch, double train_loss, double train_acc) {
        result_.history.push_back({epoch, "train", train_loss, train_acc});
        for (const NamedSplit& s : splits_) {
            const Evaluation e = evaluate(model(), *s.data, obj_.loss);
            result_.history.push_back({epoch, s.name, e.loss, e.accuracy});
        }
        if (cfg_.keep_checkpoints) result_.checkpoints.push_back({epoch, model().parameter_values()});
    }

    void run_adam() {
        AdamState adam(AdamOptions{.lr = cfg_.lr});
        const std::vector<Tensor*> params = model().parameters();
        const std::size_t n = data_.size();
        const std::size_t b = std::min(cfg_.batch_size, n);
        const bool full_batch = b == n;
        const std::size_t per_epoch = (n + b - 1) / b;
        const std::size_t total = cfg_.iterations ? cfg_.iterations : cfg_.epochs * per_epoch;

        std::vector<std::size_t> perm;
        double run_loss = 0.0;
        std::size_t run_hits = 0, run_seen = 0;
        Tape tape;
        for (std::size_t step = 0; step < total; ++step) {
            const std::size_t pos = (step % per_epoch) * b;
            if (pos == 0 && !full_batch) perm = permutation(n, order_rng_);

            LabeledDataset batch;
            const LabeledDataset* src = &data_;
            if (!full_batch) {
                const std::size_t end = std::min(pos + b, n);
                batch = take_rows(data_, std::span<const std::size_t>(perm).subspan(pos, end - pos));
                src = &batch;
            }
            Var x;
            Tensor transformed;
            if (base_.kind == BaselineKind::gaussian_noise || base_.kind == BaselineKind::pgd) {
                transformed = transform_inputs(src->x, src->y);
                x = tape.view(transformed);
            } else {
                x = tape.view(src->x);
            }
            result_.steps = step + 1;
            const Objective o = objective(tape, x, src->y);
            run_loss += o.terms.data_loss * static_cast<double>(src->size());
            run_hits += correct_count(o.output.value(), src->y);
            run_seen += src->size();
            tape.backward(o.total);
            adam_step(adam, params, 0.0);

            const bool boundary = cfg_.iterations ? ((step + 1) % cfg_.eval_every == 0 || step + 1 == total)
                                                  : ((step + 1) % per_epoch == 0);
            if (boundary) {
                const std::size_t label = cfg_.iterations ? step + 1 : (step + 1) / per_epoch;
                const auto seen = static_cast<double>(run_seen);
                record_point(label, run_loss / seen, static_cast<double>(run_hits) / seen);
                run_loss = 0.0;
                run_hits = run_seen = 0;
            }
        }
    }

    void run_lbfgs() {
        if (base_.kind != BaselineKind::none)
            throw SpecError("train: the lbfgs optimizer only supports baseline none");
        const std::vector<Tensor*> params = model().parameters();
        LbfgsOptions opts = cfg_.lbfgs;
        opts.max_iterations = cfg_.iterations ? cfg_.iterations : cfg_.epochs;
        Tape tape;
        const auto eval = [&] {
            const Objective o = objective(tape, tape.view(data_.x), data_.y);
            const double v = o.terms.total;
            tape.backward(o.total);
            return v;
        };
        std::size_t last_recorded = 0;
        const std::size_t every = cfg_.eval_every ? cfg_.eval_every : 1;
        const auto on_iter = [&](std::size_t it, double) {
            result_.steps = it;
            if (it % every == 0) {
                const Evaluation e = evaluate(model(), data_, obj_.loss);
                record_point(it, e.loss, e.accuracy);
                last_recorded = it;
            }
        };
        const LbfgsReport rep = lbfgs_minimize(params, eval, opts, on_iter);
        result_.steps = rep.iterations;
        if (last_recorded != rep.iterations) {
            const Evaluation e = evaluate(model(), data_, obj_.loss);
            record_point(rep.iterations, e.loss, e.accuracy);
        }
    }

    const RegularizedObjectiveConfig& obj_;
    const BaselineRegSpec& base_;
    const LabeledDataset& data_;
    const TrainConfig& cfg_;
    std::span<const NamedSplit> splits_;
    TrainResult result_;
    bool scalar_;
    CounterRng order_rng_, clp_rng_, noise_rng_, pgd_rng_;
};

} // namespace

Evaluation evaluate(const Model& model, const LabeledDataset& data, LossKind loss, std::size_t batch) {
    data.validate();
    if (data.size() == 0) throw SpecError("evaluate: empty dataset");
    const Tensor out = model.predict(data.x, batch);
    Tape tape;
    const double l = data_loss(tape.view(out), data.y, loss).item();
    return {l, static_cast<double>(correct_count(out, data.y)) / static_cast<double>(data.size())};
}

Tensor pgd_attack(const Model& model, const Tensor& x, std::span<const int> labels, LossKind loss,
                  const BaselineRegSpec& spec, CounterRng& rng) {
    spec.validate();
    const AttackLoss objective = [&](const Var& xv) {
        return data_loss(model.forward(xv.tape(), xv, AttachPoint::output, false).output, labels, loss);
    };
    return pgd_attack(x, objective, spec.pgd_epsilon / 255.0, spec.pgd_step_size / 255.0, spec.pgd_steps, rng);
}

TrainResult train(const ModelSpec& model_spec, const RegularizedObjectiveConfig& objective,
                  const BaselineRegSpec& baseline, const LabeledDataset& data, const TrainConfig& cfg,
                  std::span<const NamedSplit> eval_splits) {
    data.validate();
    if (data.size() == 0) throw SpecError("train: empty dataset");
    model_spec.validate();
    objective.validate(model_spec, output_count(objective));
    baseline.validate();
    cfg.validate(objective.beta);
    if (baseline.kind == BaselineKind::clp && cfg.batch_size < 2)
        throw SpecError("train: clp needs batch_size >= 2");
    for (const NamedSplit& s : eval_splits) {
        if (!s.data) throw SpecError("train: eval split '" + s.name + "' has no data");
        if (s.name == "train") throw SpecError("train: the split name 'train' is reserved");
    }
    return Trainer(model_spec, objective, baseline, data, cfg, eval_splits).run();
}

std::size_t best_epoch(std::span<const MetricsRow> history, const std::string& split) {
    const MetricsRow* best = nullptr;
    for (const MetricsRow& r : history) {
        if (r.split != split) continue;
        if (!best || r.accuracy > best->accuracy || (r.accuracy == best->accuracy && r.epoch < best->epoch)) best = &r;
    }
    if (!best) throw SpecError("best_epoch: split '" + split + "' has no metrics rows");
    return best->epoch;
}

} // namespace corrshift
