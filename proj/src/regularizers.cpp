#include "corrshift/regularizers.hpp"

#include "corrshift/error.hpp"

#include <algorithm>
#include <cmath>

namespace corrshift {

Var correlation_penalty(const Var& h, std::span<const int> labels, std::size_t num_classes) {
    if (h.value().rank() != 2)
        throw ShapeError("correlation_penalty: activations must be (rows, features), got " + to_string(h.shape()));
    if (h.dim(0) != labels.size())
        throw ShapeError("correlation_penalty: " + std::to_string(h.dim(0)) + " activation rows but " +
                         std::to_string(labels.size()) + " labels");
    if (num_classes == 0) throw SpecError("correlation_penalty: num_classes must be positive");

    std::vector<std::vector<std::size_t>> groups(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw SpecError("correlation_penalty: label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        groups[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    Var total;
    bool any = false;
    for (auto& rows : groups) {
        if (rows.size() < 2) continue;
        const double n = static_cast<double>(rows.size());
        const Var hk = gather_rows(h, std::move(rows));
        const Var term = scale(sum_squares(sub_row(hk, mean(hk, 0))), 1.0 / n);
        total = any ? add(total, term) : term;
        any = true;
    }
    if (!any) return h.tape().constant(Tensor::scalar(0.0));
    return scale(total, 1.0 / static_cast<double>(num_classes));
}

Var conv_reshape(const Var& h) {
    const Shape& s = h.shape();
    if (s.size() != 4) throw ShapeError("conv_reshape: expected (B, C, H, W), got " + to_string(s));
    return reshape(permute(h, {0, 2, 3, 1}), {s[0] * s[2] * s[3], s[1]});
}

Var conv_unreshape(const Var& rows, const Shape& nchw) {
    if (nchw.size() != 4) throw ShapeError("conv_unreshape: target must be (B, C, H, W), got " + to_string(nchw));
    if (rows.value().rank() != 2 || rows.dim(0) != nchw[0] * nchw[2] * nchw[3] || rows.dim(1) != nchw[1])
        throw ShapeError("conv_unreshape: rows " + to_string(rows.shape()) + " do not match " + to_string(nchw));
    return permute(reshape(rows, {nchw[0], nchw[2], nchw[3], nchw[1]}), {0, 3, 1, 2});
}

std::vector<int> repeat_labels(std::span<const int> labels, std::size_t times) {
    std::vector<int> out;
    out.reserve(labels.size() * times);
    for (int y : labels) out.insert(out.end(), times, y);
    return out;
}

Var clp_penalty(const Var& logits, CounterRng& rng) {
    if (logits.value().rank() != 2) throw ShapeError("clp_penalty: logits must be (B, K), got " + to_string(logits.shape()));
    const std::size_t b = logits.dim(0);
    if (b < 2) throw SpecError("clp_penalty: need at least 2 rows, got " + std::to_string(b));
    const std::vector<std::size_t> perm = permutation(b, rng);
    std::vector<std::size_t> first, second;
    for (std::size_t i = 0; i + 1 < b; i += 2) {
        first.push_back(perm[i]);
        second.push_back(perm[i + 1]);
    }
    const double pairs = static_cast<double>(first.size());
    return scale(sum_squares(sub(gather_rows(logits, std::move(first)), gather_rows(logits, std::move(second)))),
                 1.0 / pairs);
}

std::string to_string(BaselineKind kind) {
    switch (kind) {
    case BaselineKind::none: return "none";
    case BaselineKind::clp: return "clp";
    case BaselineKind::gaussian_noise: return "gaussian_noise";
    case BaselineKind::pgd: return "pgd";
    }
    return "?";
}

BaselineKind parse_baseline_kind(const std::string& name) {
    if (name == "none") return BaselineKind::none;
    if (name == "clp") return BaselineKind::clp;
    if (name == "gaussian_noise") return BaselineKind::gaussian_noise;
    if (name == "pgd") return BaselineKind::pgd;
    throw SpecError("unknown baseline '" + name + "' (expected none, clp, gaussian_noise or pgd)");
}

void BaselineRegSpec::validate() const {
    switch (kind) {
    case BaselineKind::none:
        return;
    case BaselineKind::clp:
        if (!(clp_coef >= 0.0)) throw SpecError("clp: coefficient must be non-negative");
        return;
    case BaselineKind::gaussian_noise:
        if (!(noise_std >= 0.0)) throw SpecError("gaussian_noise: std must be non-negative");
        return;
    case BaselineKind::pgd:
        if (!(pgd_epsilon >= 0.0)) throw SpecError("pgd: epsilon must be non-negative");
        if (pgd_epsilon > 0.0 && !(pgd_step_size > 0.0 && pgd_step_size <= pgd_epsilon))
            throw SpecError("pgd: need 0 < step_size <= epsilon");
        return;
    }
}

Tensor pgd_attack(const Tensor& x, const AttackLoss& loss, double epsilon, double step_size, std::size_t steps,
                  CounterRng& rng) {
    if (!(epsilon >= 0.0)) throw SpecError("pgd_attack: epsilon must be non-negative");
    if (epsilon == 0.0) return x;
    Tensor adv(x.shape());
    const auto project = [&](std::size_t i, double v) {
        return std::clamp(std::clamp(v, x[i] - epsilon, x[i] + epsilon), 0.0, 1.0);
    };
    for (std::size_t i = 0; i < x.size(); ++i) adv[i] = project(i, x[i] + rng.uniform(-epsilon, epsilon));
    adv.set_requires_grad(true);
    Tape tape;
    for (std::size_t s = 0; s < steps; ++s) {
        tape.backward(loss(tape.leaf(adv)));
        const auto g = adv.grad();
        for (std::size_t i = 0; i < adv.size(); ++i) {
            const double dir = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
            adv[i] = project(i, adv[i] + step_size * dir);
        }
    }
    adv.set_requires_grad(false);
    adv.clear_grad();
    return adv;
}

Tensor gaussian_augment(const Tensor& x, double stddev, CounterRng& rng) {
    if (!(stddev >= 0.0)) throw SpecError("gaussian_augment: std must be non-negative");
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + stddev * rng.normal(), 0.0, 1.0);
    return out;
}

} // namespace corrshift
