#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace lfc {

// Plain-text `key = value` run configuration. Unknown keys are rejected; every
// command writes the fully resolved result next to its outputs so a run
// directory is self-contained.
struct RunConfig {
    std::uint64_t seed = 1;
    int epochs = 10;
    int batch_size = 2;
    double lr = 0.001;
    double tau = 0.99;
    int r_max = 5;
    double delta = 1.5;
    std::string ablation = "full";
    std::string data_dir;
    std::string out_dir;

    static RunConfig from_text(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);
    std::string to_text() const;
    void validate() const;
};

}  // namespace lfc
