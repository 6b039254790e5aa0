// palora: batch driver for sparse low-rank adapter experiments.
//   palora <pretrain|derive|train|slt-check|report> --config <path>
//          [--out <dir>] [--seed <n>] [--mode <m>]
// Exit codes: 0 success, 2 config error, 3 numeric failure.

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "palora/commands.hpp"

namespace {

palora::cli::ExperimentConfig load_config(const std::string& path, long long seed_override,
                                          const std::string& command) {
    palora::cli::ExperimentConfig config = palora::cli::load_experiment_config(path);
    if (seed_override >= 0) {
        const uint64_t s = static_cast<uint64_t>(seed_override);
        if (command == "pretrain") config.pretrain.seed = s;
        else if (command == "derive" && config.derive) config.derive->shot_seed = s;
        else if (command == "train" && config.trainconf) config.trainconf->seed = s;
        else if (command == "slt-check" && config.slt_check) config.slt_check->harness.seed = s;
    }
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse low-rank adapter laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mode, checkpoint, profile, run_dir;
    long long seed_override = -1;

    CLI::App* cmd_pretrain = app.add_subcommand("pretrain", "train and freeze a base model");
    cmd_pretrain->add_option("--config", config_path)->required();
    cmd_pretrain->add_option("--out", out_dir);
    cmd_pretrain->add_option("--seed", seed_override);

    CLI::App* cmd_derive = app.add_subcommand("derive", "derive per-layer sparsity ratios");
    cmd_derive->add_option("--config", config_path)->required();
    cmd_derive->add_option("--checkpoint", checkpoint)->required();
    cmd_derive->add_option("--out", out_dir);
    cmd_derive->add_option("--seed", seed_override);

    CLI::App* cmd_train = app.add_subcommand("train", "fine-tune adapters under masks");
    cmd_train->add_option("--config", config_path)->required();
    cmd_train->add_option("--checkpoint", checkpoint)->required();
    cmd_train->add_option("--profile", profile);
    cmd_train->add_option("--mode", mode);
    cmd_train->add_option("--out", out_dir);
    cmd_train->add_option("--seed", seed_override);

    CLI::App* cmd_slt = app.add_subcommand("slt-check", "width-bound calculators + mask search");
    cmd_slt->add_option("--config", config_path)->required();
    cmd_slt->add_option("--out", out_dir);
    cmd_slt->add_option("--seed", seed_override);

    CLI::App* cmd_report = app.add_subcommand("report", "aggregate run records");
    cmd_report->add_option("--run-dir", run_dir)->required();
    cmd_report->add_option("--out", out_dir);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_pretrain->parsed()) {
            const auto config = load_config(config_path, seed_override, "pretrain");
            palora::cli::run_pretrain(config, palora::cli::resolve_run_dir(config, out_dir));
        } else if (cmd_derive->parsed()) {
            const auto config = load_config(config_path, seed_override, "derive");
            palora::cli::run_derive(config, checkpoint,
                                    palora::cli::resolve_run_dir(config, out_dir));
        } else if (cmd_train->parsed()) {
            const auto config = load_config(config_path, seed_override, "train");
            palora::cli::run_train(config, checkpoint, profile, mode,
                                   palora::cli::resolve_run_dir(config, out_dir));
        } else if (cmd_slt->parsed()) {
            const auto config = load_config(config_path, seed_override, "slt-check");
            palora::cli::run_slt_check(config, palora::cli::resolve_run_dir(config, out_dir));
        } else if (cmd_report->parsed()) {
            palora::cli::run_report(run_dir, out_dir.empty() ? run_dir : out_dir);
        }
    } catch (const palora::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const palora::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 2;
    } catch (const palora::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const palora::ConvergenceError& e) {
        std::fprintf(stderr, "convergence error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
