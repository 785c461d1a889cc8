#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "lfc/run_config.hpp"
#include "lfc/segnet.hpp"
#include "lfc/synth.hpp"

namespace lfc {

// Command implementations behind the CLI. They throw on failure; the CLI
// entry point maps exception types onto exit codes (0 ok, 2 usage/config,
// 3 filesystem conflict, 4 numerical failure).

struct GenDataArgs {
    std::filesystem::path out;
    std::uint64_t seed = 42;
    std::optional<std::filesystem::path> source_spec;
    std::optional<std::filesystem::path> target_spec;
    BenchmarkSizes sizes;
    bool force = false;
};
void cmd_gen_data(const GenDataArgs& args);

struct TrainSourceArgs {
    std::filesystem::path data;
    std::filesystem::path out;
    std::optional<std::filesystem::path> config;
};
void cmd_train_source(const TrainSourceArgs& args);

struct AdaptArgs {
    std::filesystem::path source_model;
    std::filesystem::path data;
    std::filesystem::path out;
    std::optional<std::filesystem::path> config;
};
void cmd_adapt(const AdaptArgs& args);

struct EvaluateArgs {
    std::filesystem::path model;  // ignored in oracle mode
    std::filesystem::path data;
    std::string domain = "target";
    std::string split = "test";
    std::filesystem::path out;  // report CSV file
    bool oracle = false;        // evaluate ground truth against itself
};
void cmd_evaluate(const EvaluateArgs& args);

struct AblateSuiteArgs {
    std::filesystem::path source_model;
    std::filesystem::path data;
    std::filesystem::path out;
    std::optional<std::filesystem::path> config;
    int seeds = 3;
    unsigned max_workers = 0;  // 0: hardware concurrency
};
void cmd_ablate_suite(const AblateSuiteArgs& args);

// Shared helpers.
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_file,
                         const std::filesystem::path& data,
                         const std::filesystem::path& out);

// Mean foreground Dice (disc and cup classes) of a model over a dataset.
double dataset_mean_dice(ModelBranch& model, const Dataset& ds);

inline const std::vector<int> kForegroundClasses = {1, 2};

}  // namespace lfc
