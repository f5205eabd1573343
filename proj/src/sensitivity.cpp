#include "corrshift/sensitivity.hpp"

#include "corrshift/error.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace corrshift {

Eigen::VectorXd sensitivity_linear(const Eigen::VectorXd& theta) { return theta.cwiseAbs(); }

Eigen::VectorXd sensitivity_model(const Model& model, const LabeledDataset& data, std::size_t batch) {
    data.validate();
    if (model.outputs() != 1)
        throw SpecError("sensitivity_model: needs a scalar-output model, this one has " +
                        std::to_string(model.outputs()) + " outputs");
    if (data.size() == 0) throw SpecError("sensitivity_model: empty dataset");
    if (batch == 0) throw SpecError("sensitivity_model: batch must be positive");
    const std::size_t n = data.size(), width = data.sample_size();
    Eigen::VectorXd total = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width));
    Tape tape;
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t b = std::min(batch, n - start);
        Shape s = data.x.shape();
        s[0] = b;
        Tensor x(s, std::vector<double>(data.x.data().begin() + static_cast<std::ptrdiff_t>(start * width),
                                        data.x.data().begin() + static_cast<std::ptrdiff_t>((start + b) * width)));
        x.set_requires_grad(true);
        // Rows are independent, so d(sum f)/dx holds every per-sample gradient.
        tape.backward(sum(model.forward(tape, tape.leaf(x), AttachPoint::output, false).output));
        const ConstMatrixMap g(x.grad().data(), static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(width));
        total += g.cwiseAbs().colwise().sum().transpose();
    }
    return total / static_cast<double>(n);
}

NormalizedProfile normalize_profile(const Eigen::VectorXd& s) {
    NormalizedProfile out;
    const double mx = s.size() ? s.maxCoeff() : 0.0;
    if (!(mx > 0.0)) {
        out.values = s;
        out.all_zero = s.size() == 0 || s.cwiseAbs().maxCoeff() == 0.0;
        return out;
    }
    out.values = s / mx;
    return out;
}

SensitivityProfile make_profile(const Eigen::VectorXd& p, const Eigen::VectorXd& s_raw, double beta) {
    if (p.size() != s_raw.size())
        throw ShapeError("make_profile: p has " + std::to_string(p.size()) + " entries but s has " +
                         std::to_string(s_raw.size()));
    const NormalizedProfile n = normalize_profile(s_raw);
    return {beta, p, s_raw, n.values, !n.all_zero};
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::VectorXd::Map(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

nlohmann::json to_json(const SensitivityProfile& profile) {
    return {{"beta", profile.beta},
            {"p", to_vec(profile.p)},
            {"s_raw", to_vec(profile.s_raw)},
            {"s_norm", to_vec(profile.s_norm)}};
}

SensitivityProfile profile_from_json(const nlohmann::json& j) {
    try {
        SensitivityProfile out =
            make_profile(from_vec(j.at("p").get<std::vector<double>>()),
                         from_vec(j.at("s_raw").get<std::vector<double>>()), j.at("beta").get<double>());
        if (from_vec(j.at("s_norm").get<std::vector<double>>()).size() != out.s_raw.size())
            throw FormatError("profile: s_norm length differs from s_raw");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("profile: ") + e.what());
    }
}

std::string to_csv(const SensitivityProfile& profile) {
    std::ostringstream os;
    os.precision(17);
    os << "i,p,s_raw,s_norm\n";
    for (Eigen::Index i = 0; i < profile.p.size(); ++i)
        os << i << ',' << profile.p[i] << ',' << profile.s_raw[i] << ',' << profile.s_norm[i] << '\n';
    return os.str();
}

double masked_mean(const Eigen::VectorXd& s, const Eigen::VectorXd& p, const std::function<bool(double)>& mask) {
    if (s.size() != p.size()) throw ShapeError("masked_mean: length mismatch");
    double acc = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (mask(p[i])) {
            acc += s[i];
            ++count;
        }
    return count ? acc / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

bool Prop1Result::agrees(double k) const {
    if (gap_stderr == 0.0) return gap == 0.0;
    return std::abs(gap) <= k * gap_stderr;
}

Prop1Result prop1_check(std::span<const double> draws) {
    const std::size_t n = draws.size();
    if (n < 2 || n % 2) throw SpecError("prop1_check: n must be even and at least 2, got " + std::to_string(n));
    double mean = 0.0;
    for (double v : draws) mean += v;
    mean /= static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : draws) {
        const double c = v - mean, c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    const double nd = static_cast<double>(n);
    Prop1Result r;
    r.n = n;
    r.variance = m2 / (nd - 1.0);

    // Per pair, ((a-m)^2 + (b-m)^2)/2 - (a-b)^2/2 = (a-m)(b-m); the gap is
    // (up to the n/(n-1) factor) the mean of these, so its spread gives the SE.
    const std::size_t pairs = n / 2;
    double pw = 0.0, dsum = 0.0, dsq = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        const double a = draws[2 * i], b = draws[2 * i + 1];
        pw += 0.5 * (a - b) * (a - b);
        const double d = (a - mean) * (b - mean);
        dsum += d;
        dsq += d * d;
    }
    const double pd = static_cast<double>(pairs);
    r.pairwise = pw / pd;
    r.gap = r.variance - r.pairwise;
    const double dmean = dsum / pd;
    r.gap_stderr = pairs > 1 ? std::sqrt(std::max(0.0, (dsq / pd - dmean * dmean) * pd / (pd - 1.0)) / pd) : 0.0;

    m2 /= nd;
    if (m2 > 0.0) {
        const double skew = (m3 / nd) / std::pow(m2, 1.5);
        const double kurt = (m4 / nd) / (m2 * m2);
        r.jarque_bera = nd / 6.0 * (skew * skew + 0.25 * (kurt - 3.0) * (kurt - 3.0));
    }
    // chi^2 with 2 degrees of freedom, 99th percentile.
    r.normality_passed = m2 > 0.0 && r.jarque_bera < 9.2103;
    return r;
}

Prop1Result prop1_check(const std::function<double(CounterRng&)>& sample, std::size_t n, std::uint64_t seed) {
    if (n < 2 || n % 2) throw SpecError("prop1_check: n must be even and at least 2, got " + std::to_string(n));
    CounterRng rng(seed, 0x9e01);
    std::vector<double> draws(n);
    for (double& v : draws) v = sample(rng);
    return prop1_check(draws);
}

} // namespace corrshift
