#pragma once

#include "sattag/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>

namespace sattag {

struct DataConfig {
    std::filesystem::path annotations;
    std::filesystem::path audio_root;  // defaults to the annotation file's directory
    std::filesystem::path train_list;  // explicit split lists; hash rule when all are empty
    std::filesystem::path valid_list;
    std::filesystem::path test_list;
    std::filesystem::path cache_dir;   // optional log-mel cache
};

// Flat key=value file with model.*, train.* and data.* keys. '#' starts a
// comment; blank lines are ignored; unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::set<std::string> explicit_keys;
};

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);
Metadata data_settings(const DataConfig& data);

// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitIo = 3, kExitNumerical = 4, kExitCheckpoint = 5 };

// Entry point of the command-line tool: synth, train, eval, visualize.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sattag
