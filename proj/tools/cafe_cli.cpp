// Command-line front end: validate configs, run experiments, compare runs.
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cafe/config.hpp"
#include "cafe/error.hpp"
#include "cafe/kernels.hpp"
#include "cafe/runner.hpp"

namespace {

cafe::run::ExperimentConfig load(const std::string& config_path, const std::string& out_override,
                                 long long seed_override) {
    cafe::run::ExperimentConfig cfg = cafe::run::parse_config(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seed_override >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed_override)};
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"curvature-aligned federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    long long seed_override = -1;

    CLI::App* validate = app.add_subcommand("validate", "parse and validate a config file");
    validate->add_option("--config", config_path, "config file path")->required();

    CLI::App* run_cmd = app.add_subcommand("run", "run the configured experiment");
    run_cmd->add_option("--config", config_path, "config file path")->required();
    run_cmd->add_option("--out", out_dir, "override output_dir");
    run_cmd->add_option("--seed-override", seed_override, "run only this seed");

    std::vector<std::string> run_dirs;
    int baseline_index = 0;
    std::string report_out = "comparison";
    CLI::App* report_cmd = app.add_subcommand("report", "compare completed runs");
    report_cmd->add_option("dirs", run_dirs, "run directories")->required();
    report_cmd->add_option("--baseline", baseline_index, "index of the baseline run");
    report_cmd->add_option("--out", report_out, "output path stem");

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) {
            cafe::run::parse_config(config_path);
            std::printf("config ok\n");
            return 0;
        }
        if (run_cmd->parsed()) {
            cafe::run::ExperimentConfig cfg = load(config_path, out_dir, seed_override);
            std::printf("kernels: %s\n", cafe::kernels::name(cafe::kernels::active()));
            int rc = cafe::run::run_experiment_config(cfg);
            std::printf("%s (artifacts in %s)\n", rc == 0 ? "done" : "done with failures",
                        cfg.output_dir.c_str());
            return rc;
        }
        if (report_cmd->parsed()) {
            cafe::run::write_report(run_dirs, baseline_index, report_out);
            std::printf("wrote %s.txt and %s.json\n", report_out.c_str(), report_out.c_str());
            return 0;
        }
    } catch (const cafe::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const cafe::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 2;
    }
    return 0;
}
