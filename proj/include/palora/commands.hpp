#pragma once

#include <string>

#include "palora/config.hpp"

namespace palora::cli {

// Subcommand bodies, CLI-independent so tests can drive them in-process.
// Each writes its artifacts under out_dir and returns the directory used.

std::string resolve_run_dir(const ExperimentConfig& config, const std::string& out_override);

std::string run_pretrain(const ExperimentConfig& config, const std::string& out_dir);

std::string run_derive(const ExperimentConfig& config, const std::string& checkpoint_path,
                       const std::string& out_dir);

std::string run_train(const ExperimentConfig& config, const std::string& checkpoint_path,
                      const std::string& profile_path, const std::string& mode_override,
                      const std::string& out_dir);

std::string run_slt_check(const ExperimentConfig& config, const std::string& out_dir);

std::string run_report(const std::string& run_dir, const std::string& out_dir);

}  // namespace palora::cli
