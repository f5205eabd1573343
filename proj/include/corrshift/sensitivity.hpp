#pragma once

#include "corrshift/model.hpp"
#include "corrshift/rng.hpp"
#include "corrshift/synthetic.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <functional>
#include <span>
#include <string>

namespace corrshift {

/// |theta_i|: the input gradient of theta^T x is theta everywhere.
Eigen::VectorXd sensitivity_linear(const Eigen::VectorXd& theta);

/// Mean over the dataset of |df/dx_i| by reverse mode. Needs a scalar output.
/// Chunks are reduced in a fixed order, so the result does not depend on
/// `batch`'s effect on scheduling, only on its value.
Eigen::VectorXd sensitivity_model(const Model& model, const LabeledDataset& data, std::size_t batch = 500);

struct NormalizedProfile {
    Eigen::VectorXd values;
    /// Input was all zeros and was returned unchanged.
    bool all_zero = false;
};

/// s / max(s), or s unchanged (flagged) when max(s) == 0.
NormalizedProfile normalize_profile(const Eigen::VectorXd& s);

struct SensitivityProfile {
    double beta = 0.0;
    Eigen::VectorXd p;
    Eigen::VectorXd s_raw;
    Eigen::VectorXd s_norm;
    bool normalized = false;
};

SensitivityProfile make_profile(const Eigen::VectorXd& p, const Eigen::VectorXd& s_raw, double beta);

/// {beta, p, s_raw, s_norm}.
nlohmann::json to_json(const SensitivityProfile& profile);
SensitivityProfile profile_from_json(const nlohmann::json& j);
/// Header `i,p,s_raw,s_norm`, one row per dimension.
std::string to_csv(const SensitivityProfile& profile);

/// Mean of `s` over the indices where `mask(p_i)` holds; NaN if none do.
double masked_mean(const Eigen::VectorXd& s, const Eigen::VectorXd& p, const std::function<bool(double)>& mask);

struct Prop1Result {
    std::size_t n = 0;
    /// Unbiased sample variance over all n draws.
    double variance = 0.0;
    /// 0.5 * mean over n/2 disjoint pairs of (a - b)^2.
    double pairwise = 0.0;
    double gap = 0.0;
    /// Monte-Carlo standard error of `gap`, from per-pair statistics.
    double gap_stderr = 0.0;
    /// Jarque-Bera statistic and whether it is under the 1% chi^2(2) cutoff.
    double jarque_bera = 0.0;
    bool normality_passed = false;

    /// |gap| <= k standard errors (exact zero counts when both are zero).
    bool agrees(double k = 4.0) const;
};

/// Pairs are consecutive draws (0,1), (2,3), ... Needs n >= 2 and even.
Prop1Result prop1_check(std::span<const double> draws);
Prop1Result prop1_check(const std::function<double(CounterRng&)>& sample, std::size_t n, std::uint64_t seed);

} // namespace corrshift
