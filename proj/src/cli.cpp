#include "corrshift/error.hpp"
#include "corrshift/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <optional>

namespace corrshift {

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool jobs) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--set", o.sets, "Override a config value, key=value (repeatable)");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Global seed");
    if (jobs) cmd->add_option("--jobs", o.jobs, "Parallel runs")->check(CLI::PositiveNumber);
}

nlohmann::json load_overrides(const CommonOptions& o, const std::string& default_experiment) {
    nlohmann::json file = o.config.empty() ? nlohmann::json::object() : read_config_file(o.config);
    if (file.is_object() && !file.contains("experiment")) file["experiment"] = default_experiment;
    nlohmann::json c = resolve_config(file);
    for (const std::string& s : o.sets) apply_override(c, s);
    if (o.seed) c["seed"] = *o.seed;
    if (!o.out.empty()) c["output_dir"] = o.out;
    return c;
}

void print_error(const char* kind, const std::string& message) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

void print_summary(const RunRecord& rec, const ExperimentConfig& cfg) {
    nlohmann::json j = rec.summary_json();
    j["output_dir"] = cfg.output_dir.string();
    std::cout << j.dump() << '\n';
}

} // namespace

int cli_dispatch(int argc, const char* const* argv) {
    CLI::App app{"Correlation-penalty experiments: synthetic data, closed-form solves, training and evaluation."};
    app.require_subcommand(1);

    struct Command {
        const char* name;
        const char* help;
        const char* experiment;
        CommonOptions opts;
        CLI::App* app = nullptr;
    };
    std::vector<Command> commands{
        {"gen-synth", "Sample a synthetic dataset to x.bin / y.bin", "synthA", {}},
        {"solve", "Solve the regularized normal equations, write theta.json", "closed_form", {}},
        {"train", "Train one configuration, write metrics.csv and summary.json", "synthA", {}},
        {"sensitivity", "Train on synthetic data and write profile.json / profile.csv", "synthA", {}},
        {"gen-cmnist", "Generate a C-MNIST corpus from IDX files", "cmnist_shift", {}},
        {"eval", "Evaluate a checkpoint on the C-MNIST splits and plain MNIST", "ood_eval", {}},
        {"prop1", "Compare variance and pairwise-difference estimates", "prop1", {}},
        {"sweep", "Run a list or grid of configurations, write sweep.csv", "cmnist_shift", {}},
    };
    for (Command& c : commands) {
        c.app = app.add_subcommand(c.name, c.help);
        add_common(c.app, c.opts, std::string(c.name) == "sweep");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return exit_usage;
    }

    const auto chosen = std::find_if(commands.begin(), commands.end(), [](const Command& c) { return c.app->parsed(); });
    const Command& cmd = *chosen;
    const std::string name = cmd.name;
    try {
        if (name == "sweep") {
            if (cmd.opts.config.empty()) throw ConfigError("sweep: --config with a sweep file is required");
            SweepSpec spec = parse_sweep(read_config_file(cmd.opts.config));
            for (const std::string& s : cmd.opts.sets) {
                nlohmann::json base = resolve_config(spec.base);
                apply_override(base, s);
                spec.base = base;
            }
            if (cmd.opts.seed) spec.base["seed"] = *cmd.opts.seed;
            const std::filesystem::path out = cmd.opts.out.empty() ? "runs/sweep" : cmd.opts.out;
            const auto rows = run_sweep(spec, out, cmd.opts.jobs);
            std::cout << sweep_csv(rows);
            for (const SweepRow& r : rows)
                if (r.failed) print_error("run_failed", r.config_id + ": " + r.error);
            return std::any_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.failed; }) ? exit_failure
                                                                                                     : exit_ok;
        }

        const ExperimentConfig cfg = ExperimentConfig::from_json(load_overrides(cmd.opts, cmd.experiment));
        const auto require = [&](std::initializer_list<ExperimentKind> kinds) {
            if (std::find(kinds.begin(), kinds.end(), cfg.kind) == kinds.end())
                throw ConfigError(name + ": experiment '" + to_string(cfg.kind) + "' is not supported here");
        };
        if (name == "gen-synth") {
            generate_synthetic(cfg);
            std::cout << nlohmann::json{{"output_dir", cfg.output_dir.string()}}.dump() << '\n';
        } else if (name == "solve") {
            const nlohmann::json out = solve_closed_form(cfg);
            std::cout << nlohmann::json{{"output_dir", cfg.output_dir.string()},
                                        {"residual", out.at("residual")},
                                        {"provenance", out.at("provenance")}}
                             .dump()
                      << '\n';
        } else if (name == "gen-cmnist") {
            const CMnistCorpus c = generate_cmnist_corpus(cfg);
            std::cout << nlohmann::json{{"output_dir", cfg.output_dir.string()},
                                        {"train", c.train.size()},
                                        {"val", c.val.size()},
                                        {"test", c.test.size()}}
                             .dump()
                      << '\n';
        } else {
            if (name == "train") require({ExperimentKind::synthA, ExperimentKind::synthB, ExperimentKind::cmnist_shift});
            if (name == "sensitivity") require({ExperimentKind::synthA, ExperimentKind::synthB});
            if (name == "eval") require({ExperimentKind::ood_eval});
            if (name == "prop1") require({ExperimentKind::prop1});
            print_summary(run_experiment(cfg), cfg);
        }
        return exit_ok;
    } catch (const ConfigError& e) {
        print_error("config", e.what());
        return exit_config;
    } catch (const MissingDataError& e) {
        print_error("missing_data", e.what());
        return exit_missing_data;
    } catch (const DivergenceError& e) {
        print_error("diverged", e.what());
        return exit_diverged;
    } catch (const std::exception& e) {
        print_error("failure", e.what());
        return exit_failure;
    }
}

} // namespace corrshift
