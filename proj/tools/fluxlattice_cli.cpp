// fluxlattice: staged cluster-then-regress study of axial flux profiles.
//
//   fluxlattice [--config F] [--seed S] [--out DIR] [--jobs N] <stage>
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 a stage was run
// before the stage producing its inputs, 1 anything else.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fluxlattice/pipeline.hpp"

namespace fl = fluxlattice;

int main(int argc, char** argv) {
    CLI::App app{"Cluster-then-regress study of axial flux profiles"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string out = "run";
    bool print_config = false;
    app.add_option("--config", config_path, "Run configuration file (key = value lines)");
    app.add_option("--seed", seed, "Master seed; overrides the config file");
    app.add_option("--out", out, "Run directory")->capture_default_str();
    app.add_option("--jobs", jobs, "Worker threads; results do not depend on it")->check(CLI::Range(1, 1024));
    app.add_flag("--print-config", print_config, "Print the resolved configuration before running");

    const std::pair<const char*, const char*> stages[] = {
        {"synth", "Generate the synthetic dataset and ground truth"},
        {"preprocess", "Decay-correct, normalize, smooth and gap-fill profiles"},
        {"cluster", "Cluster historical profile shapes (k-means and AP)"},
        {"train", "Train pooled and per-cluster GP and MC-dropout models"},
        {"predict", "Route held-out cycles and predict them with every model"},
        {"evaluate", "NRMSE, box statistics and CI coverage, pooled vs clustered"},
        {"report", "Plot-ready CSV/JSON report"},
        {"all", "Run every stage in order"},
    };
    for (const auto& [name, help] : stages) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        fl::RunConfig cfg;
        if (!config_path.empty()) cfg = fl::load_run_config(config_path);
        if (seed) cfg.seed = *seed;
        if (jobs) cfg.jobs = *jobs;
        cfg.validate();
        if (print_config) std::cout << fl::to_text(cfg, true);

        const std::string stage = app.get_subcommands().front()->get_name();
        std::vector<std::string> log;
        if (stage == "synth") log.push_back(fl::cmd_synth(cfg, out));
        else if (stage == "preprocess") log.push_back(fl::cmd_preprocess(cfg, out));
        else if (stage == "cluster") log.push_back(fl::cmd_cluster(cfg, out));
        else if (stage == "train") log.push_back(fl::cmd_train(cfg, out));
        else if (stage == "predict") log.push_back(fl::cmd_predict(cfg, out));
        else if (stage == "evaluate") log.push_back(fl::cmd_evaluate(cfg, out));
        else if (stage == "report") log.push_back(fl::cmd_report(cfg, out));
        else log = fl::run_all(cfg, out, cfg.paths.dataset.empty());
        for (const auto& line : log) std::cout << line << '\n';
        return 0;
    } catch (const fl::StagedDependencyError& e) {
        std::cerr << "error: " << e.what() << " (run the producing stage first)\n";
        return e.exit_code();
    } catch (const fl::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
