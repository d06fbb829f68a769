#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "padapt/bench.hpp"
#include "padapt/config.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitNumeric = 4;

int dispatch(const std::string& command, const std::string& config_path, bool force,
             const std::vector<std::string>& run_dirs, const std::string& report_out) {
    using namespace padapt;
    if (command == "report") {
        cmd_report(run_dirs, report_out);
        return kExitOk;
    }
    const RunConfig cfg = load_config_file(config_path);
    if (command == "gen-data") {
        cmd_gen_data(cfg);
    } else if (command == "train-source") {
        cmd_train_source(cfg, force);
    } else if (command == "adapt") {
        cmd_adapt(cfg);
    } else if (command == "sweep") {
        cmd_sweep(cfg);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual test-time adaptation with additive visual prompts"};
    app.require_subcommand(1);

    std::string config_path;
    bool force = false;
    std::vector<std::string> run_dirs;
    std::string report_out = ".";

    const auto add_config = [&](CLI::App* cmd, bool required) {
        auto* opt = cmd->add_option("--config", config_path, "JSON config file");
        if (required) {
            opt->required();
        }
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the glyph dataset");
    add_config(gen, true);
    CLI::App* train = app.add_subcommand("train-source", "train and freeze the source classifier");
    add_config(train, true);
    train->add_flag("--force", force, "overwrite an existing checkpoint");
    CLI::App* adapt = app.add_subcommand("adapt", "run a continual adaptation stream");
    add_config(adapt, true);
    CLI::App* sweep = app.add_subcommand("sweep", "run the configured parameter sweep");
    add_config(sweep, true);
    CLI::App* report = app.add_subcommand("report", "consolidate completed runs");
    add_config(report, false);
    report->add_option("dirs", run_dirs, "run directories containing summary.json");
    report->add_option("--out", report_out, "output directory for the consolidated report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return dispatch(command, config_path, force, run_dirs, report_out);
    } catch (const padapt::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const padapt::MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return kExitMissingArtifact;
    } catch (const padapt::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
