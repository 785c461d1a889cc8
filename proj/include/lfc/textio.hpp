#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lfc {

// Shortest representation that round-trips the exact double; identical values
// always produce identical text, which keeps CSV outputs reproducible.
std::string fmt_double(double v);

// "mean±std" with two decimals, e.g. "83.18±6.46".
std::string fmt_mean_std(double mean, double std, double scale = 1.0);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

// Splits one CSV line on commas (no quoting; our files never need it).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace lfc
