#include "corrshift/optim.hpp"

#include "corrshift/error.hpp"

#include <cmath>
#include <deque>

namespace corrshift {

void adam_step(AdamState& s, std::span<Tensor* const> params, double weight_decay_lambda) {
    if (s.m_.empty()) {
        for (const Tensor* p : params) {
            s.m_.emplace_back(p->size(), 0.0);
            s.v_.emplace_back(p->size(), 0.0);
        }
    }
    if (s.m_.size() != params.size())
        throw ShapeError("adam_step: state tracks " + std::to_string(s.m_.size()) + " parameters, got " +
                         std::to_string(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (s.m_[k].size() != params[k]->size())
            throw ShapeError("adam_step: accumulator for parameter " + std::to_string(k) + " has " +
                             std::to_string(s.m_[k].size()) + " entries, parameter has shape " +
                             to_string(params[k]->shape()));
        if (!params[k]->has_grad())
            throw TapeError("adam_step: parameter " + std::to_string(k) + " has no gradient; call backward first");
    }

    ++s.t_;
    const auto& o = s.options_;
    const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.t_));
    const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        auto g = p.grad();
        auto& m = s.m_[k];
        auto& v = s.v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] + 2.0 * weight_decay_lambda * p[i];
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
            p[i] -= o.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
        }
    }
}

namespace {

Eigen::VectorXd gather_values(std::span<Tensor* const> params) {
    std::size_t n = 0;
    for (auto* p : params) n += p->size();
    Eigen::VectorXd x(static_cast<Eigen::Index>(n));
    Eigen::Index off = 0;
    for (auto* p : params) {
        x.segment(off, static_cast<Eigen::Index>(p->size())) = p->vec();
        off += static_cast<Eigen::Index>(p->size());
    }
    return x;
}

Eigen::VectorXd gather_grads(std::span<Tensor* const> params) {
    std::size_t n = 0;
    for (auto* p : params) n += p->size();
    Eigen::VectorXd g(static_cast<Eigen::Index>(n));
    Eigen::Index off = 0;
    for (auto* p : params) {
        auto pg = p->grad();
        g.segment(off, static_cast<Eigen::Index>(pg.size())) =
            Eigen::Map<const Eigen::VectorXd>(pg.data(), static_cast<Eigen::Index>(pg.size()));
        off += static_cast<Eigen::Index>(pg.size());
    }
    return g;
}

void scatter_values(std::span<Tensor* const> params, const Eigen::VectorXd& x) {
    Eigen::Index off = 0;
    for (auto* p : params) {
        p->vec() = x.segment(off, static_cast<Eigen::Index>(p->size()));
        off += static_cast<Eigen::Index>(p->size());
    }
}

} // namespace

LbfgsReport lbfgs_minimize(std::span<Tensor* const> params, const std::function<double()>& evaluate,
                           const LbfgsOptions& options, const std::function<void(std::size_t, double)>& on_iteration) {
    LbfgsReport report;
    Eigen::VectorXd x = gather_values(params);
    double f = evaluate();
    ++report.evaluations;
    if (!std::isfinite(f)) throw DivergenceError("lbfgs: non-finite objective at the starting point");
    Eigen::VectorXd g = gather_grads(params);

    std::deque<Eigen::VectorXd> S, Y;
    std::deque<double> rho;
    std::vector<double> alpha;

    for (report.iterations = 0; report.iterations < options.max_iterations; ++report.iterations) {
        if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
            report.converged = true;
            break;
        }
        // Two-loop recursion.
        Eigen::VectorXd q = g;
        alpha.assign(S.size(), 0.0);
        for (std::size_t i = S.size(); i-- > 0;) {
            alpha[i] = rho[i] * S[i].dot(q);
            q -= alpha[i] * Y[i];
        }
        if (!S.empty())
            q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
        else
            q *= 1e-3 / std::max(g.norm(), 1e-300);
        for (std::size_t i = 0; i < S.size(); ++i) {
            const double beta = rho[i] * Y[i].dot(q);
            q += (alpha[i] - beta) * S[i];
        }
        Eigen::VectorXd dir = -q;
        double slope = g.dot(dir);
        if (slope >= 0.0) {
            // Curvature information went bad; restart along steepest descent.
            S.clear();
            Y.clear();
            rho.clear();
            dir = -g * (1e-3 / std::max(g.norm(), 1e-300));
            slope = g.dot(dir);
        }

        double step = 1.0;
        double f_new = f;
        bool accepted = false;
        Eigen::VectorXd x_new;
        for (std::size_t bt = 0; bt <= options.max_backtracks; ++bt) {
            x_new = x + step * dir;
            scatter_values(params, x_new);
            f_new = evaluate();
            ++report.evaluations;
            if (std::isfinite(f_new) && f_new <= f + options.armijo * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No decrease possible at working precision.
            scatter_values(params, x);
            evaluate();
            ++report.evaluations;
            report.converged = true;
            break;
        }
        Eigen::VectorXd g_new = gather_grads(params);
        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / sy);
            if (S.size() > options.history) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }
        x = std::move(x_new);
        g = std::move(g_new);
        f = f_new;
        if (on_iteration) on_iteration(report.iterations + 1, f);
    }
    report.loss = f;
    return report;
}

} // namespace corrshift
