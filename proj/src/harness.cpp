#include "corrshift/harness.hpp"

#include "corrshift/closed_form.hpp"
#include "corrshift/error.hpp"
#include "corrshift/sensitivity.hpp"
#include "corrshift/tensor_io.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#ifndef CORRSHIFT_DATA_DIR
#define CORRSHIFT_DATA_DIR "data/mnist-desk"
#endif

namespace corrshift {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::synthA: return "synthA";
    case ExperimentKind::synthB: return "synthB";
    case ExperimentKind::cmnist_shift: return "cmnist_shift";
    case ExperimentKind::ood_eval: return "ood_eval";
    case ExperimentKind::prop1: return "prop1";
    case ExperimentKind::closed_form: return "closed_form";
    }
    return "?";
}

std::string to_string(Method method) {
    switch (method) {
    case Method::correlation: return "correlation";
    case Method::vanilla: return "vanilla";
    case Method::clp: return "clp";
    case Method::gaussian_noise: return "gaussian_noise";
    case Method::pgd: return "pgd";
    }
    return "?";
}

namespace {

ExperimentKind parse_experiment(const std::string& s) {
    for (auto k : {ExperimentKind::synthA, ExperimentKind::synthB, ExperimentKind::cmnist_shift, ExperimentKind::ood_eval,
                   ExperimentKind::prop1, ExperimentKind::closed_form})
        if (to_string(k) == s) return k;
    throw ConfigError("experiment: unknown kind '" + s + "'");
}

Method parse_method(const std::string& s) {
    for (auto m : {Method::correlation, Method::vanilla, Method::clp, Method::gaussian_noise, Method::pgd})
        if (to_string(m) == s) return m;
    throw ConfigError("method: unknown method '" + s + "'");
}

// Both sides must be numbers of a compatible kind, or the same JSON type.
bool same_kind(const json& expect, const json& got) {
    if (expect.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
    if (expect.is_number()) return got.is_number();
    return expect.type() == got.type();
}

void merge_checked(json& into, const json& from, const std::string& prefix) {
    if (!from.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    for (const auto& [key, value] : from.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!into.contains(key)) throw ConfigError(path + ": unknown key");
        json& slot = into[key];
        if (slot.is_object()) {
            merge_checked(slot, value, path);
            continue;
        }
        if (!same_kind(slot, value))
            throw ConfigError(path + ": expected " + std::string(slot.type_name()) + ", got " + value.type_name());
        if (slot.is_number_unsigned() && value.is_number_integer()) {
            slot = value.get<std::uint64_t>();
        } else if (slot.is_number_float()) {
            slot = value.get<double>();
        } else {
            slot = value;
        }
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingDataError(path.string() + ": no such file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

} // namespace

const json& default_config() {
    static const json defaults = {
        {"experiment", "synthA"},
        {"method", "vanilla"},
        {"seed", 0u},
        {"output_dir", "runs/default"},
        {"early_stop_split", "auto"},
        {"synthetic",
         {{"dim", 500u}, {"n", 15000u}, {"sigma2", 1e-4}, {"k", 10.0}, {"p_seed", 0u},
          {"sensitivity_samples", 2000u}}},
        {"cmnist",
         {{"mnist_dir", CORRSHIFT_DATA_DIR},
          {"corpus_dir", ""},
          {"train_limit", 0u},
          {"test_limit", 0u},
          {"test_mode", "shared"},
          {"test_colors", 10u},
          {"threshold", 150u},
          {"noise_std", 0.04},
          {"train_fraction", 0.9},
          {"seeds", {{"palette", 1u}, {"assignment", 2u}, {"noise", 3u}, {"split", 4u}}}}},
        {"model",
         {{"kind", "mlp"},
          {"hidden_layers", 3u},
          {"width", 200u},
          {"conv_channels", json::array({16u, 32u})},
          {"kernel", 3u},
          {"pool", 2u}}},
        {"objective",
         {{"beta", 0.0}, {"lambda", 0.0}, {"loss", "auto"}, {"attach", "auto"}, {"pre_activation", false}}},
        {"baseline",
         {{"clp_coef", 0.5}, {"noise_std", 0.1}, {"pgd_epsilon", 8.0}, {"pgd_step_size", 2.0}, {"pgd_steps", 10u}}},
        {"train",
         {{"epochs", 10u},
          {"iterations", 0u},
          {"batch_size", 128u},
          {"lr", 1e-3},
          {"optimizer", "adam"},
          {"eval_every", 100u},
          {"lbfgs_history", 20u},
          {"checkpoints", "selected"}}},
        {"solve", {{"dataset", "A"}, {"moments", "empirical"}, {"rhs", "absolute"}}},
        {"prop1",
         {{"sampler", "gaussian"}, {"mean", 0.0}, {"variance", 4.0}, {"n", 1000000u}, {"checkpoint", ""},
          {"logit", 0u}}},
        {"eval", {{"checkpoint", ""}}},
    };
    return defaults;
}

json resolve_config(const json& overrides) {
    json out = default_config();
    merge_checked(out, overrides, "");
    return out;
}

json read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot read config");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set '" + assignment + "': expected key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
        parts.push_back(rest.substr(0, pos));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) throw ConfigError("--set '" + assignment + "': empty key segment");
        patch = json{{*it, patch}};
    }
    merge_checked(config, patch, "");
}

ExperimentConfig ExperimentConfig::from_json(const json& resolved) {
    ExperimentConfig c;
    c.resolved = resolve_config(resolved);
    const json& j = c.resolved;
    try {
        c.kind = parse_experiment(j.at("experiment").get<std::string>());
        c.method = parse_method(j.at("method").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.output_dir = j.at("output_dir").get<std::string>();

        const json& m = j.at("model");
        c.model = model_spec_from_json(m);

        const bool synth = c.kind == ExperimentKind::synthA || c.kind == ExperimentKind::synthB ||
                           c.kind == ExperimentKind::closed_form;
        const json& o = j.at("objective");
        c.objective.beta = o.at("beta").get<double>();
        c.objective.lambda = o.at("lambda").get<double>();
        const std::string loss = o.at("loss").get<std::string>();
        c.objective.loss = loss == "auto" ? (synth ? LossKind::squared_error : LossKind::cross_entropy)
                                          : parse_loss_kind(loss);
        const std::string attach = o.at("attach").get<std::string>();
        c.objective.attach = attach == "auto"
                                 ? (c.model.kind == ModelKind::linear ? AttachPoint::output : AttachPoint::first_hidden)
                                 : parse_attach_point(attach);
        c.objective.pre_activation = o.at("pre_activation").get<bool>();
        c.objective.num_classes = synth ? 2 : 10;

        const json& b = j.at("baseline");
        c.baseline.clp_coef = b.at("clp_coef").get<double>();
        c.baseline.noise_std = b.at("noise_std").get<double>();
        c.baseline.pgd_epsilon = b.at("pgd_epsilon").get<double>();
        c.baseline.pgd_step_size = b.at("pgd_step_size").get<double>();
        c.baseline.pgd_steps = b.at("pgd_steps").get<std::size_t>();
        switch (c.method) {
        case Method::correlation: c.baseline.kind = BaselineKind::none; break;
        case Method::vanilla: c.baseline.kind = BaselineKind::none; break;
        case Method::clp: c.baseline.kind = BaselineKind::clp; break;
        case Method::gaussian_noise: c.baseline.kind = BaselineKind::gaussian_noise; break;
        case Method::pgd: c.baseline.kind = BaselineKind::pgd; break;
        }
        if (c.method != Method::correlation) c.objective.beta = 0.0;

        const json& t = j.at("train");
        c.train.epochs = t.at("epochs").get<std::size_t>();
        c.train.iterations = t.at("iterations").get<std::size_t>();
        c.train.batch_size = t.at("batch_size").get<std::size_t>();
        c.train.lr = t.at("lr").get<double>();
        c.train.optimizer = parse_optimizer_kind(t.at("optimizer").get<std::string>());
        c.train.eval_every = t.at("eval_every").get<std::size_t>();
        c.train.lbfgs.history = t.at("lbfgs_history").get<std::size_t>();
        c.train.seed = c.seed;
        const std::string ckpt = t.at("checkpoints").get<std::string>();
        if (ckpt != "selected" && ckpt != "all" && ckpt != "none")
            throw ConfigError("train.checkpoints: expected selected, all or none, got '" + ckpt + "'");

        c.early_stop_split = j.at("early_stop_split").get<std::string>();
        if (c.early_stop_split == "auto") c.early_stop_split =
            c.kind == ExperimentKind::cmnist_shift || c.kind == ExperimentKind::ood_eval ? "val" : "train";
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    } catch (const json::exception& e) {
        throw ConfigError(e.what());
    }
    return c;
}

std::string config_hash(const json& resolved) {
    json copy = resolved;
    copy.erase("output_dir");
    const std::string text = copy.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- records

void RunRecord::summarize() {
    best.clear();
    for (const MetricsRow& r : rows) {
        auto it = best.find(r.split);
        if (it == best.end() || r.accuracy > it->second.accuracy)
            best[r.split] = {r.accuracy, r.epoch};
    }
    checkpoint_id.reset();
    if (rows.empty()) return;
    if (best.count(early_stop_split))
        checkpoint_id = best.at(early_stop_split).epoch;
    else
        checkpoint_id = rows.back().epoch;
}

void RunRecord::verify() const {
    RunRecord copy = *this;
    copy.summarize();
    if (copy.best.size() != best.size()) throw Error("RunRecord: summary splits do not match the metrics rows");
    for (const auto& [split, b] : copy.best) {
        auto it = best.find(split);
        if (it == best.end() || it->second.accuracy != b.accuracy || it->second.epoch != b.epoch)
            throw Error("RunRecord: summary for split '" + split + "' does not match the metrics rows");
    }
    if (copy.checkpoint_id != checkpoint_id) throw Error("RunRecord: checkpoint id does not match the metrics rows");
}

json RunRecord::summary_json() const {
    json j;
    j["config_hash"] = config_hash;
    json b = json::object();
    for (const auto& [split, v] : best) b[split] = {{"accuracy", v.accuracy}, {"epoch", v.epoch}};
    j["best"] = b;
    j["early_stop_split"] = early_stop_split;
    j["checkpoint_id"] = checkpoint_id ? json(*checkpoint_id) : json(nullptr);
    json at = json::object();
    if (checkpoint_id)
        for (const MetricsRow& r : rows)
            if (r.epoch == *checkpoint_id) at[r.split] = r.accuracy;
    j["at_checkpoint"] = at;
    j["saved_checkpoints"] = checkpoints;
    j["wall_clock_seconds"] = wall_clock_seconds;
    if (!extra.is_null()) j["extra"] = extra;
    return j;
}

std::size_t early_stop_select(const RunRecord& record, const std::string& split) {
    if (record.checkpoints.empty()) throw Error("early_stop_select: run has no checkpoints");
    const std::size_t epoch = best_epoch(record.rows, split);
    if (std::find(record.checkpoints.begin(), record.checkpoints.end(), epoch) == record.checkpoints.end())
        throw Error("early_stop_select: no checkpoint at epoch " + std::to_string(epoch));
    return epoch;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
    std::string out = "epoch,split,loss,accuracy\n";
    for (const MetricsRow& r : rows)
        out += std::to_string(r.epoch) + "," + r.split + "," + format_double(r.loss) + "," + format_double(r.accuracy) +
               "\n";
    return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "epoch,split,loss,accuracy")
        throw FormatError("metrics csv: missing header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string epoch, split, loss, acc;
        if (!std::getline(fields, epoch, ',') || !std::getline(fields, split, ',') || !std::getline(fields, loss, ',') ||
            !std::getline(fields, acc))
            throw FormatError("metrics csv: malformed row '" + line + "'");
        try {
            rows.push_back({std::stoull(epoch), split, std::stod(loss), std::stod(acc)});
        } catch (const std::exception&) {
            throw FormatError("metrics csv: malformed row '" + line + "'");
        }
    }
    return rows;
}

// ------------------------------------------------------------ checkpoints

json to_json(const ModelSpec& spec) {
    return {{"kind", to_string(spec.kind)},
            {"hidden_layers", spec.hidden_layers},
            {"width", spec.width},
            {"conv_channels", spec.conv_channels},
            {"kernel", spec.kernel},
            {"pool", spec.pool}};
}

ModelSpec model_spec_from_json(const json& j) {
    ModelSpec s;
    s.kind = parse_model_kind(j.at("kind").get<std::string>());
    s.hidden_layers = j.at("hidden_layers").get<std::size_t>();
    s.width = j.at("width").get<std::size_t>();
    s.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    s.kernel = j.at("kernel").get<std::size_t>();
    s.pool = j.at("pool").get<std::size_t>();
    s.validate();
    return s;
}

void save_checkpoint(const fs::path& dir, const Model& model, std::size_t epoch, std::uint64_t seed,
                     const json& config) {
    fs::create_directories(dir);
    const auto& params = model.parameter_values();
    for (std::size_t i = 0; i < params.size(); ++i)
        write_tensor(dir / ("param_" + std::to_string(i) + ".bin"), params[i], DType::f64);
    json manifest = {{"format", "corrshift-checkpoint"},
                     {"model", to_json(model.spec())},
                     {"sample_shape", model.sample_shape()},
                     {"outputs", model.outputs()},
                     {"parameters", params.size()},
                     {"epoch", epoch},
                     {"seed", seed},
                     {"config", config}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

SavedCheckpoint load_checkpoint(const fs::path& dir) {
    const json manifest = json::parse(read_text(dir / "manifest.json"), nullptr, false);
    if (manifest.is_discarded() || manifest.value("format", "") != "corrshift-checkpoint")
        throw FormatError((dir / "manifest.json").string() + ": not a checkpoint manifest");
    try {
        Model model(model_spec_from_json(manifest.at("model")), manifest.at("sample_shape").get<Shape>(),
                    manifest.at("outputs").get<std::size_t>(), 0);
        std::vector<Tensor> params;
        const auto count = manifest.at("parameters").get<std::size_t>();
        for (std::size_t i = 0; i < count; ++i) {
            const fs::path p = dir / ("param_" + std::to_string(i) + ".bin");
            if (!fs::exists(p)) throw MissingDataError(p.string() + ": no such file");
            params.push_back(read_tensor(p));
        }
        model.set_parameters(params);
        return {std::move(model), manifest.at("epoch").get<std::size_t>(), manifest.at("seed").get<std::uint64_t>(),
                manifest.at("config")};
    } catch (const json::exception& e) {
        throw FormatError((dir / "manifest.json").string() + ": " + e.what());
    }
}

// ------------------------------------------------------------- pipelines

namespace {

struct SynthData {
    Eigen::VectorXd p;
    LabeledDataset data;
    SynthSpecA a;
    SynthSpecB b;
    bool is_b = false;
};

bool dataset_is_b(const ExperimentConfig& cfg) {
    if (cfg.kind == ExperimentKind::synthB) return true;
    if (cfg.kind == ExperimentKind::synthA) return false;
    const std::string d = cfg.resolved.at("solve").at("dataset").get<std::string>();
    if (d != "A" && d != "B") throw ConfigError("solve.dataset: expected A or B, got '" + d + "'");
    return d == "B";
}

SynthData make_synth(const ExperimentConfig& cfg) {
    const json& s = cfg.resolved.at("synthetic");
    const auto dim = s.at("dim").get<std::size_t>();
    const auto n = s.at("n").get<std::size_t>();
    if (dim == 0 || n < 2) throw ConfigError("synthetic: dim must be positive and n at least 2");
    SynthData out;
    out.is_b = dataset_is_b(cfg);
    out.p = random_probabilities(dim, s.at("p_seed").get<std::uint64_t>());
    const double sigma2 = s.at("sigma2").get<double>();
    try {
        if (out.is_b) {
            out.b = {out.p, sigma2, s.at("k").get<double>()};
            out.data = sample_b(out.b, n, cfg.seed);
        } else {
            out.a = {out.p, sigma2};
            out.data = sample_a(out.a, n, cfg.seed);
        }
    } catch (const SpecError& e) {
        throw ConfigError(e.what());
    }
    return out;
}

RegularizedNormalSystem<double> make_system(const ExperimentConfig& cfg, const SynthData& sd) {
    const json& s = cfg.resolved.at("solve");
    const std::string moments = s.at("moments").get<std::string>();
    const std::string rhs = s.at("rhs").get<std::string>();
    const double beta = cfg.objective.beta, lambda = cfg.objective.lambda;
    if (moments == "empirical")
        return sd.is_b ? build_system_b(sd.b, beta, lambda, sd.data) : build_system_a(sd.a, beta, lambda, sd.data);
    if (moments != "analytic") throw ConfigError("solve.moments: expected empirical or analytic, got '" + moments + "'");
    if (sd.is_b) return build_system_b(sd.b, beta, lambda);
    if (rhs != "absolute" && rhs != "signed") throw ConfigError("solve.rhs: expected absolute or signed, got '" + rhs + "'");
    return build_system_a(sd.a, beta, lambda, rhs == "absolute" ? RhsForm::absolute : RhsForm::signed_moment);
}

void write_frozen_config(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.json", cfg.resolved.dump(2) + "\n");
}

RawMnist load_raw(const ExperimentConfig& cfg, bool train) {
    const json& c = cfg.resolved.at("cmnist");
    const fs::path dir = c.at("mnist_dir").get<std::string>();
    const std::string prefix = train ? "train" : "t10k";
    RawMnist raw = load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
    const auto limit = c.at(train ? "train_limit" : "test_limit").get<std::size_t>();
    return limit ? raw.head(limit) : raw;
}

CMnistSpec make_spec(const ExperimentConfig& cfg) {
    const json& c = cfg.resolved.at("cmnist");
    const json& s = c.at("seeds");
    CMnistSeeds seeds{s.at("palette").get<std::uint64_t>(), s.at("assignment").get<std::uint64_t>(),
                      s.at("noise").get<std::uint64_t>(), s.at("split").get<std::uint64_t>()};
    const std::string mode = c.at("test_mode").get<std::string>();
    if (mode != "shared" && mode != "separate")
        throw ConfigError("cmnist.test_mode: expected shared or separate, got '" + mode + "'");
    const auto threshold = c.at("threshold").get<std::uint64_t>();
    if (threshold > 255) throw ConfigError("cmnist.threshold: must be at most 255");
    CMnistSpec spec = make_cmnist_spec(seeds, 10, c.at("test_colors").get<std::size_t>(),
                                       mode == "shared" ? TestPaletteMode::shared : TestPaletteMode::separate);
    spec.threshold = static_cast<std::uint8_t>(threshold);
    spec.noise_std = c.at("noise_std").get<double>();
    spec.train_fraction = c.at("train_fraction").get<double>();
    try {
        spec.validate();
    } catch (const SpecError& e) {
        throw ConfigError(e.what());
    }
    return spec;
}

CMnistCorpus obtain_corpus(const ExperimentConfig& cfg) {
    const std::string corpus_dir = cfg.resolved.at("cmnist").at("corpus_dir").get<std::string>();
    if (!corpus_dir.empty()) return load_corpus(corpus_dir);
    return build_cmnist_corpus(load_raw(cfg, true), load_raw(cfg, false), make_spec(cfg));
}

template <typename Fn>
double timed(Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void finish_record(RunRecord& rec, const ExperimentConfig& cfg) {
    rec.config_hash = config_hash(cfg.resolved);
    rec.early_stop_split = cfg.early_stop_split;
    rec.summarize();
    rec.verify();
    write_text(cfg.output_dir / "metrics.csv", metrics_csv(rec.rows));
    write_text(cfg.output_dir / "summary.json", rec.summary_json().dump(2) + "\n");
}

void store_checkpoints(RunRecord& rec, const TrainResult& result, const ExperimentConfig& cfg) {
    const std::string mode = cfg.resolved.at("train").at("checkpoints").get<std::string>();
    RunRecord probe = rec;
    probe.early_stop_split = cfg.early_stop_split;
    probe.summarize();
    for (const Checkpoint& c : result.checkpoints) {
        const bool keep = mode == "all" || (mode == "selected" && probe.checkpoint_id == c.epoch);
        if (!keep) continue;
        Model m = result.model;
        m.set_parameters(c.params);
        save_checkpoint(cfg.output_dir / "checkpoints" / ("epoch_" + std::to_string(c.epoch)), m, c.epoch, cfg.seed,
                        cfg.resolved);
        rec.checkpoints.push_back(c.epoch);
    }
}

RunRecord run_synthetic(const ExperimentConfig& cfg) {
    RunRecord rec;
    SynthData sd = make_synth(cfg);
    std::optional<TrainResult> result;
    rec.wall_clock_seconds = timed([&] {
        result.emplace(train(cfg.model, cfg.objective, cfg.baseline, sd.data, cfg.train));
    });
    rec.rows = result->history;
    store_checkpoints(rec, *result, cfg);

    const auto samples = std::min<std::size_t>(cfg.resolved.at("synthetic").at("sensitivity_samples").get<std::size_t>(),
                                               sd.data.size());
    std::vector<std::size_t> idx(samples);
    for (std::size_t i = 0; i < samples; ++i) idx[i] = i;
    const Eigen::VectorXd s = sensitivity_model(result->model, sd.data.subset(idx));
    const SensitivityProfile profile = make_profile(sd.p, s, cfg.objective.beta);
    write_text(cfg.output_dir / "profile.json", to_json(profile).dump() + "\n");
    write_text(cfg.output_dir / "profile.csv", to_csv(profile));

    json extra = {{"steps", result->steps}};
    if (sd.is_b) {
        const double lo = masked_mean(profile.s_norm, sd.p, [](double q) { return q < 0.1; });
        const double hi = masked_mean(profile.s_norm, sd.p, [](double q) { return q > 0.9; });
        extra["low_p_mean"] = lo;
        extra["high_p_mean"] = hi;
        extra["low_high_ratio"] = lo / hi;
    } else {
        extra["mid_p_mean"] = masked_mean(profile.s_norm, sd.p, [](double q) { return std::abs(q - 0.5) < 0.1; });
    }
    if (cfg.model.kind == ModelKind::linear) {
        const Eigen::VectorXd theta = result->model.parameter_values().front().vec();
        const Eigen::VectorXd star = solve(make_system(cfg, sd));
        extra["closed_form_relative_gap"] = (theta - star).norm() / star.norm();
        write_text(cfg.output_dir / "theta.json", json{{"theta", vector_json(theta)}}.dump() + "\n");
    }
    rec.extra = extra;
    finish_record(rec, cfg);
    return rec;
}

RunRecord run_cmnist(const ExperimentConfig& cfg) {
    RunRecord rec;
    const CMnistCorpus corpus = obtain_corpus(cfg);
    const LabeledDataset ood = mnist_as_ood(load_raw(cfg, false));
    const NamedSplit splits[] = {{"val", &corpus.val}, {"test", &corpus.test}, {"mnist", &ood}};
    std::optional<TrainResult> result;
    rec.wall_clock_seconds = timed([&] {
        result.emplace(train(cfg.model, cfg.objective, cfg.baseline, corpus.train, cfg.train, splits));
    });
    rec.rows = result->history;
    store_checkpoints(rec, *result, cfg);
    rec.extra = {{"steps", result->steps},
                 {"train_size", corpus.train.size()},
                 {"val_size", corpus.val.size()},
                 {"test_size", corpus.test.size()},
                 {"mnist_size", ood.size()}};
    finish_record(rec, cfg);
    return rec;
}

RunRecord run_ood_eval(const ExperimentConfig& cfg) {
    const std::string ckpt = cfg.resolved.at("eval").at("checkpoint").get<std::string>();
    if (ckpt.empty()) throw ConfigError("eval.checkpoint: a checkpoint directory is required");
    const SavedCheckpoint saved = load_checkpoint(ckpt);
    RunRecord rec;
    rec.wall_clock_seconds = timed([&] {
        const CMnistCorpus corpus = obtain_corpus(cfg);
        const LabeledDataset ood = mnist_as_ood(load_raw(cfg, false));
        const NamedSplit splits[] = {{"val", &corpus.val}, {"test", &corpus.test}, {"mnist", &ood}};
        for (const NamedSplit& s : splits) {
            const Evaluation e = evaluate(saved.model, *s.data, cfg.objective.loss);
            rec.rows.push_back({saved.epoch, s.name, e.loss, e.accuracy});
        }
    });
    rec.checkpoints.push_back(saved.epoch);
    rec.extra = {{"checkpoint", ckpt}};
    finish_record(rec, cfg);
    return rec;
}

RunRecord run_prop1(const ExperimentConfig& cfg) {
    const json& p = cfg.resolved.at("prop1");
    const std::string sampler = p.at("sampler").get<std::string>();
    const auto n = p.at("n").get<std::size_t>();
    if (n < 2 || n % 2) throw ConfigError("prop1.n: must be even and at least 2");
    Prop1Result r;
    RunRecord rec;
    rec.wall_clock_seconds = timed([&] {
        if (sampler == "gaussian") {
            const double mean = p.at("mean").get<double>();
            const double var = p.at("variance").get<double>();
            if (!(var >= 0.0)) throw ConfigError("prop1.variance: must be non-negative");
            const double sd = std::sqrt(var);
            r = prop1_check([&](CounterRng& rng) { return rng.normal(mean, sd); }, n, cfg.seed);
        } else if (sampler == "uniform") {
            const double mean = p.at("mean").get<double>();
            const double half = std::sqrt(3.0 * p.at("variance").get<double>());
            r = prop1_check([&](CounterRng& rng) { return rng.uniform(mean - half, mean + half); }, n, cfg.seed);
        } else if (sampler == "logits") {
            const std::string ckpt = p.at("checkpoint").get<std::string>();
            if (ckpt.empty()) throw ConfigError("prop1.checkpoint: the logits sampler needs a checkpoint");
            const SavedCheckpoint saved = load_checkpoint(ckpt);
            const auto logit = p.at("logit").get<std::size_t>();
            if (logit >= saved.model.outputs()) throw ConfigError("prop1.logit: out of range");
            const CMnistCorpus corpus = obtain_corpus(cfg);
            const Tensor out = saved.model.predict(corpus.test.x);
            const std::size_t k = saved.model.outputs();
            std::vector<double> pool(out.dim(0));
            for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = out[i * k + logit];
            r = prop1_check([&](CounterRng& rng) { return pool[rng.below(pool.size())]; }, n, cfg.seed);
        } else {
            throw ConfigError("prop1.sampler: expected gaussian, uniform or logits, got '" + sampler + "'");
        }
    });
    std::string status = r.agrees() ? "agrees" : "disagrees";
    if (!r.normality_passed && !r.agrees()) status = "assumption unmet";
    const json out = {{"sampler", sampler},
                      {"n", r.n},
                      {"variance", r.variance},
                      {"pairwise", r.pairwise},
                      {"gap", r.gap},
                      {"gap_stderr", r.gap_stderr},
                      {"gap_in_stderr", r.gap_stderr > 0 ? r.gap / r.gap_stderr : 0.0},
                      {"jarque_bera", r.jarque_bera},
                      {"normality_passed", r.normality_passed},
                      {"status", status}};
    write_text(cfg.output_dir / "prop1.json", out.dump(2) + "\n");
    rec.extra = out;
    finish_record(rec, cfg);
    return rec;
}

} // namespace

void generate_synthetic(const ExperimentConfig& cfg) {
    if (cfg.kind != ExperimentKind::synthA && cfg.kind != ExperimentKind::synthB)
        throw ConfigError("gen-synth: experiment must be synthA or synthB");
    write_frozen_config(cfg);
    const SynthData sd = make_synth(cfg);
    write_tensor(cfg.output_dir / "x.bin", sd.data.x, DType::f64);
    write_labels(cfg.output_dir / "y.bin", sd.data.y);
    json spec = {{"dataset", sd.is_b ? "B" : "A"},
                 {"p", vector_json(sd.p)},
                 {"sigma2", sd.is_b ? sd.b.sigma2 : sd.a.sigma2},
                 {"n", sd.data.size()},
                 {"seed", cfg.seed}};
    if (sd.is_b) spec["k"] = sd.b.k;
    write_text(cfg.output_dir / "spec.json", spec.dump() + "\n");
}

CMnistCorpus generate_cmnist_corpus(const ExperimentConfig& cfg) {
    write_frozen_config(cfg);
    CMnistCorpus corpus = build_cmnist_corpus(load_raw(cfg, true), load_raw(cfg, false), make_spec(cfg));
    save_corpus(corpus, cfg.output_dir);
    return corpus;
}

json solve_closed_form(const ExperimentConfig& cfg) {
    if (cfg.kind != ExperimentKind::synthA && cfg.kind != ExperimentKind::synthB &&
        cfg.kind != ExperimentKind::closed_form)
        throw ConfigError("solve: experiment must be synthA, synthB or closed_form");
    write_frozen_config(cfg);
    const SynthData sd = make_synth(cfg);
    const RegularizedNormalSystem<double> sys = make_system(cfg, sd);
    const Eigen::VectorXd theta = solve(sys);
    const double residual = residual_norm(sys, theta);
    const json out = {{"theta", vector_json(theta)},
                      {"beta", cfg.objective.beta},
                      {"lambda", cfg.objective.lambda},
                      {"provenance", sys.provenance},
                      {"residual", residual},
                      {"relative_residual", residual / std::max(sys.rhs.lpNorm<Eigen::Infinity>(), 1e-300)}};
    write_text(cfg.output_dir / "theta.json", out.dump() + "\n");
    return out;
}

RunRecord run_experiment(const ExperimentConfig& cfg) {
    write_frozen_config(cfg);
    switch (cfg.kind) {
    case ExperimentKind::synthA:
    case ExperimentKind::synthB: return run_synthetic(cfg);
    case ExperimentKind::cmnist_shift: return run_cmnist(cfg);
    case ExperimentKind::ood_eval: return run_ood_eval(cfg);
    case ExperimentKind::prop1: return run_prop1(cfg);
    case ExperimentKind::closed_form: {
        RunRecord rec;
        rec.wall_clock_seconds = timed([&] { rec.extra = solve_closed_form(cfg); });
        rec.extra.erase("theta");
        finish_record(rec, cfg);
        return rec;
    }
    }
    throw ConfigError("unknown experiment");
}

// ------------------------------------------------------------------ sweep

SweepSpec parse_sweep(const json& j) {
    if (!j.is_object()) throw ConfigError("sweep: expected an object");
    for (const auto& [key, value] : j.items())
        if (key != "base" && key != "runs" && key != "grid" && key != "metric_split")
            throw ConfigError("sweep." + key + ": unknown key");
    SweepSpec spec;
    spec.base = j.value("base", json::object());
    spec.metric_split = j.value("metric_split", std::string("test"));
    if (j.contains("runs")) {
        for (const json& r : j.at("runs")) {
            if (!r.contains("id")) throw ConfigError("sweep.runs: every run needs an id");
            spec.runs.emplace_back(r.at("id").get<std::string>(), r.value("set", json::object()));
        }
    }
    if (j.contains("grid")) {
        for (const json& g : j.at("grid").is_array() ? j.at("grid") : json::array({j.at("grid")})) {
            const std::string prefix = g.value("id_prefix", std::string("grid"));
            const json fixed = g.value("set", json::object());
            std::vector<std::pair<std::string, json>> combos{{prefix, fixed}};
            for (const auto& [key, values] : g.at("axes").items()) {
                if (!values.is_array() || values.empty())
                    throw ConfigError("sweep.grid.axes." + key + ": expected a non-empty array");
                std::vector<std::pair<std::string, json>> next;
                for (const auto& [id, set] : combos)
                    for (const json& v : values) {
                        json s = set;
                        s[key] = v;
                        std::string label = v.is_string() ? v.get<std::string>() : v.dump();
                        next.emplace_back(id + "_" + key.substr(key.rfind('.') + 1) + "=" + label, s);
                    }
                combos = std::move(next);
            }
            spec.runs.insert(spec.runs.end(), combos.begin(), combos.end());
        }
    }
    if (spec.runs.empty()) throw ConfigError("sweep: no runs");
    return spec;
}

namespace {

json config_for_run(const SweepSpec& spec, const json& set, const fs::path& dir) {
    json c = resolve_config(spec.base);
    for (const auto& [key, value] : set.items()) {
        if (key.find('.') != std::string::npos)
            apply_override(c, key + "=" + value.dump());
        else
            merge_checked(c, json{{key, value}}, "");
    }
    c["output_dir"] = dir.string();
    return c;
}

} // namespace

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const fs::path& output_dir, std::size_t jobs) {
    std::vector<SweepRow> rows(spec.runs.size());
    // Resolve everything up front so config errors stop the sweep before any training.
    std::vector<ExperimentConfig> configs;
    for (const auto& [id, set] : spec.runs) {
        rows[configs.size()].config_id = id;
        configs.push_back(ExperimentConfig::from_json(config_for_run(spec, set, output_dir / id)));
        rows[configs.size() - 1].method = to_string(configs.back().method);
    }
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next++) < configs.size();) {
            try {
                const RunRecord rec = run_experiment(configs[i]);
                auto it = rec.best.find(spec.metric_split);
                if (it == rec.best.end()) throw Error("split '" + spec.metric_split + "' not in metrics");
                rows[i].best_accuracy = it->second.accuracy;
            } catch (const std::exception& e) {
                rows[i].failed = true;
                rows[i].error = e.what();
            }
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, configs.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.failed != b.failed) return !a.failed;
        return a.best_accuracy > b.best_accuracy;
    });
    fs::create_directories(output_dir);
    write_text(output_dir / "sweep.csv", sweep_csv(rows));
    return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
    std::string out = "config_id,method,best_accuracy,status\n";
    for (const SweepRow& r : rows)
        out += r.config_id + "," + r.method + "," + (r.failed ? std::string("nan") : format_double(r.best_accuracy)) +
               "," + (r.failed ? "failed" : "ok") + "\n";
    return out;
}

} // namespace corrshift
