#pragma once

#include "corrshift/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace corrshift {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators for Adam. Sized lazily on the first step, after which
/// the parameter list must keep the same shapes.
class AdamState {
public:
    explicit AdamState(AdamOptions options = {}) : options_(options) {}

    const AdamOptions& options() const noexcept { return options_; }
    void set_lr(double lr) noexcept { options_.lr = lr; }
    std::int64_t step_count() const noexcept { return t_; }

    friend void adam_step(AdamState& state, std::span<Tensor* const> params, double weight_decay_lambda);

private:
    AdamOptions options_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

/// One bias-corrected Adam update from the gradients stored on `params`.
///
/// A non-zero `weight_decay_lambda` adds 2*lambda*theta to each gradient, i.e.
/// the coupled L2 form of lambda*||theta||^2. Callers that already put that term
/// into their loss pass 0.
void adam_step(AdamState& state, std::span<Tensor* const> params, double weight_decay_lambda = 0.0);

struct LbfgsOptions {
    std::size_t history = 20;
    std::size_t max_iterations = 500;
    /// Stop once max |g_i| falls below this.
    double gradient_tolerance = 1e-12;
    double armijo = 1e-4;
    std::size_t max_backtracks = 50;
};

struct LbfgsReport {
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    double loss = 0.0;
    bool converged = false;
};

/// Full-batch limited-memory BFGS with Armijo backtracking.
///
/// `evaluate` must compute the objective at the parameters' current values and
/// leave d(objective)/d(param) in each parameter's grad. `on_iteration` sees the
/// number of completed iterations and the accepted loss after each one.
LbfgsReport lbfgs_minimize(std::span<Tensor* const> params, const std::function<double()>& evaluate,
                           const LbfgsOptions& options = {},
                           const std::function<void(std::size_t, double)>& on_iteration = {});

} // namespace corrshift
