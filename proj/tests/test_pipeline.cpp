#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "fluxlattice/pipeline.hpp"

namespace fl = fluxlattice;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# small, fast study
seed = 7
axial_grid_size = 60
split.hold_out_last = 4
synth.n_cycles = 24
synth.assemblies = C5:0.6/0.4, E5:0.5/0.5
kmeans.restarts = 3
ap.tune_candidates = 8
gp.stride = 2
mlp.hidden_sizes = 8,8
mlp.epochs = 3
mlp.batch_size = 32
mlp.mc_passes = 20
)";

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("fl_pipeline_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

fl::RunConfig tiny() { return fl::parse_run_config(kTinyConfig); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(FLUXLATTICE_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, DefaultsValidate) {
    const fl::RunConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.seed, 42u);
    EXPECT_EQ(cfg.hold_out_last, 10u);
}

TEST(RunConfig, ParseAppliesKeys) {
    const auto cfg = tiny();
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.axial_grid_size, 60);
    EXPECT_EQ(cfg.synth.n_cycles, 24);
    ASSERT_EQ(cfg.synth.assemblies.size(), 2u);
    EXPECT_EQ(cfg.synth.assemblies[1].id, "E5");
    EXPECT_EQ(cfg.mlp.hidden_sizes, (std::vector<int>{8, 8}));
}

TEST(RunConfig, TextRoundTrip) {
    auto cfg = tiny();
    cfg.ap_preference = fl::PreferenceMode::fixed;
    cfg.ap_preference_value = -12.5;
    cfg.synth.assemblies[0].outliers = 1;
    const std::string text = fl::to_text(cfg, true);
    const auto back = fl::parse_run_config(text);
    EXPECT_EQ(fl::to_text(back, true), text);
}

TEST(RunConfig, Errors) {
    try {
        fl::parse_run_config("seed = 1\nbogus.key = 3\n");
        FAIL();
    } catch (const fl::ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    EXPECT_THROW(fl::parse_run_config("seed 1\n"), fl::ParseError);
    EXPECT_THROW(fl::parse_run_config("kmeans.k = two\n"), fl::ParseError);
    EXPECT_THROW(fl::parse_run_config("ap.damping = 0.2\n"), fl::ValidationError);
    EXPECT_THROW(fl::load_run_config("/nonexistent/fluxlattice.cfg"), fl::ConfigError);
}

TEST(RunConfig, JobsNotPartOfHashedText) {
    auto a = tiny(), b = tiny();
    b.jobs = 5;
    EXPECT_EQ(fl::to_text(a), fl::to_text(b));
    EXPECT_NE(fl::to_text(a, true), fl::to_text(b, true));
}

TEST(Pipeline, StageBeforeInputsIsStagedDependencyError) {
    const auto dir = fresh_dir("staged");
    const auto cfg = tiny();
    try {
        fl::cmd_preprocess(cfg, dir);
        FAIL();
    } catch (const fl::StagedDependencyError& e) {
        EXPECT_NE(e.missing().find("dataset.csv"), std::string::npos);
        EXPECT_EQ(e.exit_code(), 3);
    }
    fl::cmd_synth(cfg, dir);
    EXPECT_THROW(fl::cmd_cluster(cfg, dir), fl::StagedDependencyError);
    EXPECT_THROW(fl::cmd_train(cfg, dir), fl::StagedDependencyError);
    EXPECT_THROW(fl::cmd_evaluate(cfg, dir), fl::StagedDependencyError);
    fs::remove_all(dir);
}

TEST(Pipeline, TinyRunProducesArtifactsAndIsDeterministic) {
    const auto a = fresh_dir("run_a"), b = fresh_dir("run_b");
    auto cfg = tiny();
    fl::run_all(cfg, a);
    cfg.jobs = 3;
    fl::run_all(cfg, b);

    for (const char* f : {"data/dataset.csv", "data/split.csv", "data/truth_labels.csv", "preprocess/shapes.csv",
                          "preprocess/noise_floor.csv", "cluster/labels.csv", "cluster/summary.json",
                          "models/index.csv", "predict/routing.csv", "predict/predictions.csv", "evaluate/nrmse.csv",
                          "evaluate/summary.json", "report/report.json", "manifest.txt"})
        EXPECT_TRUE(fs::exists(a / f)) << f;

    // every artifact is listed with its hash, and results do not depend on --jobs
    const auto ma = fl::read_manifest_artifacts(a / "manifest.txt");
    EXPECT_GT(ma.size(), 10u);
    for (const auto& [name, hash] : ma) EXPECT_EQ(hash, fl::file_hash(a / name)) << name;
    EXPECT_EQ(slurp(a / "manifest.txt"), slurp(b / "manifest.txt"));

    // every held-out profile routed to exactly one cluster
    const auto routing = fl::detail::read_csv(a / "predict" / "routing.csv");
    std::set<std::pair<std::string, std::string>> seen, assigned;
    for (const auto& r : routing.rows) {
        seen.insert({r[routing.col("cycle_id")], r[routing.col("assembly_id")]});
        if (r[routing.col("assigned")] == "1") {
            EXPECT_TRUE(assigned.insert({r[routing.col("cycle_id")], r[routing.col("assembly_id")]}).second);
        }
    }
    EXPECT_EQ(seen.size(), 2u * 4u);
    EXPECT_EQ(assigned, seen);

    const auto summary = nlohmann::json::parse(slurp(a / "evaluate" / "summary.json"));
    EXPECT_TRUE(summary.contains("gp"));
    EXPECT_TRUE(summary.contains("mlp"));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Pipeline, StageRerunIsIdempotent) {
    const auto dir = fresh_dir("idem");
    const auto cfg = tiny();
    fl::cmd_synth(cfg, dir);
    fl::cmd_preprocess(cfg, dir);
    fl::cmd_cluster(cfg, dir);
    const std::string first = slurp(dir / "cluster" / "labels.csv");
    fl::cmd_cluster(cfg, dir);
    EXPECT_EQ(slurp(dir / "cluster" / "labels.csv"), first);
    fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
    const auto dir = fresh_dir("cli");
    const auto cfg_path = dir / "tiny.cfg";
    {
        std::ofstream out(cfg_path);
        out << kTinyConfig;
    }
    const std::string common = "--config " + cfg_path.string() + " --out " + (dir / "run").string();
    EXPECT_EQ(run_cli(common + " cluster"), 3);
    EXPECT_EQ(run_cli(common + " synth"), 0);
    EXPECT_EQ(run_cli(common + " --jobs 0 synth"), 2);
    EXPECT_EQ(run_cli(common + " frobnicate"), 2);
    {
        std::ofstream out(dir / "bad.cfg");
        out << "kmeans.k = 0\n";
    }
    EXPECT_EQ(run_cli("--config " + (dir / "bad.cfg").string() + " --out " + (dir / "run").string() + " synth"), 2);
    EXPECT_EQ(run_cli(common + " --seed 9 preprocess"), 0);
    fs::remove_all(dir);
}
