#include "corrshift/closed_form.hpp"
#include "corrshift/error.hpp"
#include "corrshift/harness.hpp"
#include "corrshift/tensor_io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace corrshift;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("corrshift_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    const auto bytes = read_bytes(p);
    return {bytes.begin(), bytes.end()};
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "corrshift");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

json small_synth(const fs::path& out) {
    return {{"experiment", "synthA"},
            {"method", "correlation"},
            {"seed", 3},
            {"output_dir", out.string()},
            {"synthetic", {{"dim", 12}, {"n", 400}, {"sensitivity_samples", 100}}},
            {"model", {{"kind", "mlp"}, {"hidden_layers", 1}, {"width", 16}}},
            {"objective", {{"beta", 1.0}, {"lambda", 1e-5}}},
            {"train", {{"iterations", 40}, {"eval_every", 10}, {"batch_size", 32}, {"checkpoints", "all"}}}};
}

json small_cmnist(const fs::path& out) {
    return {{"experiment", "cmnist_shift"},
            {"method", "vanilla"},
            {"seed", 2},
            {"output_dir", out.string()},
            {"cmnist", {{"train_limit", 300}, {"test_limit", 100}}},
            {"model", {{"kind", "mlp"}, {"hidden_layers", 1}, {"width", 16}}},
            {"train", {{"epochs", 2}, {"batch_size", 64}}}};
}

RunRecord with_rows(std::vector<std::pair<std::size_t, double>> val) {
    RunRecord r;
    r.early_stop_split = "val";
    for (auto [e, a] : val) {
        r.rows.push_back({e, "train", 0.1, 0.9});
        r.rows.push_back({e, "val", 0.2, a});
        r.checkpoints.push_back(e);
    }
    r.summarize();
    return r;
}

} // namespace

TEST_CASE("config schema rejects unknown keys and wrong types") {
    CHECK_THROWS_AS(resolve_config({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"train", {{"epoch", 3}}}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"train", {{"epochs", "ten"}}}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"train", {{"epochs", -1}}}}), ConfigError);
    CHECK_THROWS_AS(resolve_config({{"model", 3}}), ConfigError);
    try {
        resolve_config({{"objective", {{"betta", 1.0}}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("objective.betta") != std::string::npos);
    }
    // Integers are accepted where a float is expected.
    const json c = resolve_config({{"objective", {{"beta", 10}}}});
    CHECK(c["objective"]["beta"].get<double>() == 10.0);
    CHECK(c["train"]["epochs"].get<int>() == 10);
}

TEST_CASE("dotted overrides parse JSON values and fall back to strings") {
    json c = resolve_config(json::object());
    apply_override(c, "objective.beta=2.5");
    apply_override(c, "model.kind=small_conv");
    apply_override(c, "model.conv_channels=[4,8]");
    apply_override(c, "objective.pre_activation=true");
    CHECK(c["objective"]["beta"].get<double>() == 2.5);
    CHECK(c["model"]["kind"] == "small_conv");
    CHECK(c["model"]["conv_channels"] == json::array({4, 8}));
    CHECK(c["objective"]["pre_activation"] == true);
    CHECK_THROWS_AS(apply_override(c, "objective.gamma=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "train.epochs=many"), ConfigError);
}

TEST_CASE("typed config forces beta to zero for baselines and picks defaults") {
    json j = resolve_config({{"method", "clp"}, {"objective", {{"beta", 5.0}}}});
    ExperimentConfig c = ExperimentConfig::from_json(j);
    CHECK(c.objective.beta == 0.0);
    CHECK(c.baseline.kind == BaselineKind::clp);
    CHECK(c.objective.loss == LossKind::squared_error);
    CHECK(c.objective.num_classes == 2);

    j = resolve_config({{"experiment", "cmnist_shift"}, {"method", "correlation"}, {"objective", {{"beta", 5.0}}}});
    c = ExperimentConfig::from_json(j);
    CHECK(c.objective.beta == 5.0);
    CHECK(c.objective.loss == LossKind::cross_entropy);
    CHECK(c.early_stop_split == "val");

    CHECK_THROWS_AS(ExperimentConfig::from_json(resolve_config({{"experiment", "synthC"}})), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(resolve_config({{"model", {{"kind", "resnet"}}}})), ConfigError);
}

TEST_CASE("config hash ignores the output directory only") {
    json a = resolve_config({{"output_dir", "x"}});
    json b = resolve_config({{"output_dir", "y"}});
    CHECK(config_hash(a) == config_hash(b));
    b["seed"] = 9u;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("early stopping: monotone, ties, missing checkpoints") {
    CHECK(early_stop_select(with_rows({{1, 0.5}, {2, 0.6}, {3, 0.7}}), "val") == 3);
    RunRecord tie = with_rows({{1, 0.2}, {3, 0.8}, {5, 0.4}, {7, 0.8}, {9, 0.1}});
    CHECK(early_stop_select(tie, "val") == 3);
    CHECK(tie.checkpoint_id == 3u);

    RunRecord none = with_rows({{1, 0.5}});
    none.checkpoints.clear();
    CHECK_THROWS_AS(early_stop_select(none, "val"), Error);

    // Selection is recomputable from the CSV alone.
    const auto rows = parse_metrics_csv(metrics_csv(tie.rows));
    CHECK(best_epoch(rows, "val") == 3);
}

TEST_CASE("run record consistency check catches a tampered summary") {
    RunRecord r = with_rows({{1, 0.5}, {2, 0.6}});
    CHECK_NOTHROW(r.verify());
    r.best["val"].accuracy = 0.9;
    CHECK_THROWS_AS(r.verify(), Error);
    r.summarize();
    r.checkpoint_id = 1;
    CHECK_THROWS_AS(r.verify(), Error);
}

TEST_CASE("metrics csv round-trips exactly") {
    std::vector<MetricsRow> rows{{1, "train", 0.1 + 0.2, 1.0 / 3.0}, {2, "val", 1e-300, 0.0}};
    const auto back = parse_metrics_csv(metrics_csv(rows));
    REQUIRE(back.size() == 2);
    CHECK(back[0].loss == rows[0].loss);
    CHECK(back[0].accuracy == rows[0].accuracy);
    CHECK(back[1].loss == rows[1].loss);
    CHECK(back[1].split == "val");
    CHECK_THROWS_AS(parse_metrics_csv("wrong header\n"), FormatError);
}

TEST_CASE("synthetic pipeline is deterministic and writes its artifacts") {
    TempDir t("harness_synth");
    const RunRecord a = run_experiment(ExperimentConfig::from_json(small_synth(t.path / "a")));
    const RunRecord b = run_experiment(ExperimentConfig::from_json(small_synth(t.path / "b")));
    for (const char* f : {"metrics.csv", "profile.json", "profile.csv"})
        CHECK(slurp(t.path / "a" / f) == slurp(t.path / "b" / f));
    CHECK(a.config_hash == b.config_hash);
    CHECK_NOTHROW(a.verify());
    CHECK(a.checkpoints.size() == 4);

    const json frozen = json::parse(slurp(t.path / "a" / "config.json"));
    CHECK(frozen == resolve_config(small_synth(t.path / "a")));

    const json summary = json::parse(slurp(t.path / "a" / "summary.json"));
    CHECK(summary["config_hash"] == a.config_hash);
    CHECK(summary["checkpoint_id"] == *a.checkpoint_id);

    // The final checkpoint reloads with its manifest.
    const SavedCheckpoint ck = load_checkpoint(t.path / "a" / "checkpoints" / "epoch_40");
    CHECK(ck.epoch == 40);
    CHECK(ck.seed == 3);
    CHECK(ck.config["synthetic"]["dim"] == 12);
    CHECK(ck.model.parameter_values().size() == 2);
}

TEST_CASE("linear synthetic run reports its gap to the closed form") {
    TempDir t("harness_linear");
    json j = small_synth(t.path);
    j["model"] = {{"kind", "linear"}};
    j["train"] = {{"iterations", 200}, {"eval_every", 50}, {"optimizer", "lbfgs"}, {"checkpoints", "none"}};
    const RunRecord r = run_experiment(ExperimentConfig::from_json(j));
    CHECK(r.extra["closed_form_relative_gap"].get<double>() < 1e-6);
    CHECK(fs::exists(t.path / "theta.json"));
}

TEST_CASE("cli solve matches the closed-form module") {
    TempDir t("harness_solve");
    write_file(t.path / "cfg.json", R"({"experiment": "closed_form", "synthetic": {"dim": 30, "n": 500},
        "method": "correlation", "objective": {"beta": 1.0, "lambda": 0.01}, "solve": {"dataset": "B"}})");
    REQUIRE(run_cli({"solve", "--config", (t.path / "cfg.json").string(), "--out", (t.path / "o").string(), "--seed",
                     "5"}) == exit_ok);
    const json out = json::parse(slurp(t.path / "o" / "theta.json"));

    SynthSpecB spec{random_probabilities(30, 0), 1e-4, 10.0};
    const LabeledDataset data = sample_b(spec, 500, 5);
    const Eigen::VectorXd theta = solve(build_system_b(spec, 1.0, 0.01, data));
    const auto got = out["theta"].get<std::vector<double>>();
    REQUIRE(got.size() == 30);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == theta[static_cast<Eigen::Index>(i)]);
    CHECK(out["relative_residual"].get<double>() <= 1e-8);
}

TEST_CASE("cli gen-synth exports tensors") {
    TempDir t("harness_gensynth");
    REQUIRE(run_cli({"gen-synth", "--set", "experiment=synthB", "--set", "synthetic.dim=5", "--set", "synthetic.n=20",
                     "--out", t.path.string()}) == exit_ok);
    const Tensor x = read_tensor(t.path / "x.bin");
    CHECK(x.shape() == Shape{20, 5});
    CHECK(read_labels(t.path / "y.bin").size() == 20);
    CHECK(json::parse(slurp(t.path / "spec.json"))["dataset"] == "B");
}

TEST_CASE("cli prop1 with a Gaussian sampler agrees") {
    TempDir t("harness_prop1");
    REQUIRE(run_cli({"prop1", "--set", "prop1.n=200000", "--out", t.path.string()}) == exit_ok);
    const json out = json::parse(slurp(t.path / "prop1.json"));
    CHECK(out["status"] == "agrees");
    CHECK(std::abs(out["gap_in_stderr"].get<double>()) <= 4.0);
}

TEST_CASE("cli exit codes") {
    TempDir t("harness_exit");
    CHECK(run_cli({"train", "--frobnicate"}) == exit_usage);
    CHECK(run_cli({}) == exit_usage);
    CHECK(run_cli({"train", "--config", (t.path / "absent.json").string()}) == exit_config);
    write_file(t.path / "bad.json", "{\"train\": {\"epochz\": 1}}");
    CHECK(run_cli({"train", "--config", (t.path / "bad.json").string()}) == exit_config);
    write_file(t.path / "broken.json", "{not json");
    CHECK(run_cli({"train", "--config", (t.path / "broken.json").string()}) == exit_config);
    CHECK(run_cli({"gen-cmnist", "--set", "cmnist.mnist_dir=" + (t.path / "nowhere").string(), "--out",
                   (t.path / "c").string()}) == exit_missing_data);
    CHECK(run_cli({"eval", "--set", "eval.checkpoint=" + (t.path / "nockpt").string(), "--out",
                   (t.path / "e").string()}) == exit_missing_data);
    CHECK(run_cli({"prop1", "--set", "experiment=synthA"}) == exit_config);
    CHECK(run_cli({"train", "--set", "experiment=synthA", "--set", "synthetic.dim=4", "--set", "synthetic.n=64",
                   "--set", "train.iterations=5", "--set", "train.lr=1e300", "--set", "model.width=4", "--out",
                   (t.path / "div").string()}) == exit_diverged);
}

TEST_CASE("C-MNIST pipeline: gen, train, eval twice gives identical bytes") {
    TempDir t("harness_cmnist");
    for (const char* run : {"r1", "r2"}) {
        const fs::path base = t.path / run;
        fs::create_directories(base);
        json cfg = small_cmnist(base / "train");
        write_file(base / "cfg.json", cfg.dump());
        REQUIRE(run_cli({"gen-cmnist", "--config", (base / "cfg.json").string(), "--out", (base / "corpus").string()}) ==
                exit_ok);
        REQUIRE(run_cli({"train", "--config", (base / "cfg.json").string(), "--set",
                         "cmnist.corpus_dir=" + (base / "corpus").string()}) == exit_ok);
        const json summary = json::parse(slurp(base / "train" / "summary.json"));
        const std::string ckpt =
            (base / "train" / "checkpoints" / ("epoch_" + std::to_string(summary["checkpoint_id"].get<int>()))).string();
        REQUIRE(run_cli({"eval", "--config", (base / "cfg.json").string(), "--set", "experiment=ood_eval", "--set",
                         "eval.checkpoint=" + ckpt, "--out", (base / "eval").string()}) == exit_ok);
    }
    for (const char* f : {"corpus/train_x.bin", "corpus/test_x.bin", "corpus/manifest.json", "train/metrics.csv",
                          "eval/metrics.csv"})
        CHECK(slurp(t.path / "r1" / f) == slurp(t.path / "r2" / f));

    // The evaluation reproduces the selected checkpoint's training-time metrics.
    const auto train_rows = parse_metrics_csv(slurp(t.path / "r1" / "train" / "metrics.csv"));
    const auto eval_rows = parse_metrics_csv(slurp(t.path / "r1" / "eval" / "metrics.csv"));
    for (const MetricsRow& e : eval_rows)
        for (const MetricsRow& r : train_rows)
            if (r.epoch == e.epoch && r.split == e.split) CHECK(r.accuracy == e.accuracy);
}

TEST_CASE("sweep table: one row per config, sorted, failures kept") {
    TempDir t("harness_sweep");
    json base = small_synth("unused");
    base["train"]["checkpoints"] = "none";
    base["train"]["iterations"] = 20;
    const json sweep = {{"metric_split", "train"},
                        {"base", base},
                        {"runs",
                         {{{"id", "same1"}, {"set", json::object()}},
                          {{"id", "same2"}, {"set", json::object()}},
                          {{"id", "broken"}, {"set", {{"synthetic.sigma2", -1.0}}}}}},
                        {"grid", {{"id_prefix", "g"}, {"axes", {{"objective.beta", {0.0, 10.0}}}}}}};
    const SweepSpec spec = parse_sweep(sweep);
    REQUIRE(spec.runs.size() == 5);
    const auto rows = run_sweep(spec, t.path, 2);
    REQUIRE(rows.size() == 5);
    double same1 = -1, same2 = -2;
    for (const SweepRow& r : rows) {
        if (r.config_id == "same1") same1 = r.best_accuracy;
        if (r.config_id == "same2") same2 = r.best_accuracy;
    }
    CHECK(same1 == same2);
    CHECK(rows.back().config_id == "broken");
    CHECK(rows.back().failed);
    for (std::size_t i = 1; i + 1 < rows.size(); ++i) CHECK(rows[i - 1].best_accuracy >= rows[i].best_accuracy);
    const std::string csv = slurp(t.path / "sweep.csv");
    CHECK(csv.rfind("config_id,method,best_accuracy,status\n", 0) == 0);
    CHECK(csv.find("broken,correlation,nan,failed") != std::string::npos);
    CHECK(fs::exists(t.path / "g_beta=10.0" / "metrics.csv"));

    CHECK_THROWS_AS(parse_sweep({{"runs", json::array()}}), ConfigError);
    CHECK_THROWS_AS(parse_sweep({{"runz", json::array()}}), ConfigError);
}
