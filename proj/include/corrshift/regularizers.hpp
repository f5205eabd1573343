#pragma once

#include "corrshift/autodiff.hpp"
#include "corrshift/rng.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace corrshift {

/// (1/K) sum over classes with >= 2 rows of mean_i ||h_i - mu_k||^2, with mu_k
/// the batch class mean. Gradients flow through mu_k. Labels in [0, K).
Var correlation_penalty(const Var& h, std::span<const int> labels, std::size_t num_classes);

/// (B, C, H, W) -> (B*H*W, C): one row per spatial site, channels as features.
Var conv_reshape(const Var& h);
/// Inverse of conv_reshape for a known (B, C, H, W).
Var conv_unreshape(const Var& rows, const Shape& nchw);
/// Each label repeated `times` times, matching conv_reshape's row order.
std::vector<int> repeat_labels(std::span<const int> labels, std::size_t times);

/// Mean over a random disjoint pairing of the rows of ||l_a - l_b||^2. With
/// odd B the leftover row is unused.
Var clp_penalty(const Var& logits, CounterRng& rng);

enum class BaselineKind { none, clp, gaussian_noise, pgd };

std::string to_string(BaselineKind kind);
BaselineKind parse_baseline_kind(const std::string& name);

struct BaselineRegSpec {
    BaselineKind kind = BaselineKind::none;
    double clp_coef = 0.0;
    double noise_std = 0.0;
    /// In units of 1/255.
    double pgd_epsilon = 8.0;
    double pgd_step_size = 2.0;
    std::size_t pgd_steps = 10;

    void validate() const;
};

/// Loss used to drive the attack: takes a batch Var, returns a scalar Var.
using AttackLoss = std::function<Var(const Var& x)>;

/// l_inf PGD: uniform start in the eps-ball, `steps` sign-gradient ascent steps,
/// projection onto the ball and [0, 1] after each.
Tensor pgd_attack(const Tensor& x, const AttackLoss& loss, double epsilon, double step_size, std::size_t steps,
                  CounterRng& rng);

/// x + N(0, std^2), clamped to [0, 1].
Tensor gaussian_augment(const Tensor& x, double stddev, CounterRng& rng);

} // namespace corrshift
