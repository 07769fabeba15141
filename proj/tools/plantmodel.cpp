// Command-line front end: one subcommand per pipeline stage plus run-all.
//
// Exit status: 0 on success, 1 for invalid input (bad arguments, config or
// data), 2 for any other failure.

#include "plantmodel/error.hpp"
#include "plantmodel/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

using namespace plantmodel;

int main(int argc, char** argv) {
    CLI::App app{"Semantic plant modelling from synthetic point clouds"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool force = false, timings = false, quiet = false;
    std::string measured, reference;

    app.add_option("-c,--config", config_path, "TOML configuration (defaults apply without one)");
    app.add_option("--seed", seed, "override the configured seed");
    app.add_option("-o,--out", out_dir, "output directory (overrides the config)");
    app.add_flag("-f,--force", force, "recompute stages even when their artifacts are current");
    app.add_flag("--timings", timings, "report wall-clock times in the clustering table");
    app.add_flag("-q,--quiet", quiet, "no progress output");

    struct Sub {
        CLI::App* app;
        std::vector<Stage> stages;
    };
    std::vector<Sub> subs;
    for (Stage s : kAllStages) {
        const std::string name(stage_name(s));
        auto* sub = app.add_subcommand(name, "run the " + name + " stage");
        if (s == Stage::quality) {
            sub->add_option("--measured", measured, "measured cloud (default: first test tact)");
            sub->add_option("--reference", reference, "reference cloud (default: its noise-free twin)");
        }
        subs.push_back({sub, {s}});
    }
    subs.push_back({app.add_subcommand("run-all", "run every stage in order"),
                    std::vector<Stage>(std::begin(kAllStages), std::end(kAllStages))});
    auto* show = app.add_subcommand("config", "print the effective configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (timings) cfg.timings = true;
        if (!measured.empty()) cfg.quality_measured = measured;
        if (!reference.empty()) cfg.quality_reference = reference;
        cfg.validate();

        if (show->parsed()) {
            std::cout << cfg.canonical();
            return 0;
        }
        RunOptions opts;
        opts.force = force;
        opts.log = quiet ? nullptr : &std::cout;
        for (const auto& sub : subs)
            if (sub.app->parsed())
                for (Stage s : sub.stages) run_stage(s, cfg, opts);
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << (config_path.empty() ? "" : config_path + ": ") << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
