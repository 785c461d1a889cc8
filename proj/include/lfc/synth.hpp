#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfc/tensor.hpp"

namespace lfc {

// Seeded generator for fundus-like disc/cup images under controllable domain
// styles. Geometry (nested ellipses) is shared across domains for a given
// sample id; the photometric pipeline (gamma, noise, blur, vignette) is what
// carries the domain shift. Labels come from the clean geometry.

struct DomainSpec {
    std::string name = "domain";
    double background_level = 0.2;
    double disc_level = 0.6;
    double cup_level = 0.9;
    double contrast_gamma = 1.0;  // > 0
    double noise_sigma = 0.0;     // >= 0
    int blur_radius = 0;          // >= 0, box blur
    double vignette_strength = 0.0;  // >= 0

    void validate() const;
};

// Calibrated default pair; the shift is strong enough that a source-trained
// model drops hard on the target before adaptation.
DomainSpec default_source_spec();
DomainSpec default_target_spec();

struct Sample {
    Tensor4 image;   // (1,1,h,w) in [0,1]
    Tensor4 label;   // (1,1,h,w) values {0 background, 1 disc, 2 cup}
    int sample_id = 0;
};

inline constexpr int kImageSize = 64;

// Deterministic: the per-sample stream is derived from (split_seed, sample_id),
// so a sample is independent of n and of generation order.
std::vector<Sample> generate(const DomainSpec& spec, int n, std::uint64_t split_seed,
                             int first_sample_id = 0);

// 16-bit big-endian P5 for images (maxval 65535), 8-bit P5 for labels.
void write_sample(const Sample& s, const std::filesystem::path& dir);
Sample read_sample(const std::filesystem::path& dir, int sample_id);

struct Manifest {
    std::string domain;
    std::string split;
    std::uint64_t seed = 0;
    DomainSpec spec;
    std::vector<int> sample_ids;
};

void write_manifest(const Manifest& m, const std::filesystem::path& dir);
Manifest read_manifest(const std::filesystem::path& dir);

struct BenchmarkSizes {
    int source_train = 400;
    int target_train = 99;
    int target_test = 60;
};

// Writes source/train, target/train, target/test with manifests. Refuses a
// non-empty output directory unless force is set.
void benchmark(const DomainSpec& source_spec, const DomainSpec& target_spec,
               const BenchmarkSizes& sizes, std::uint64_t seed,
               const std::filesystem::path& out_dir, bool force = false);

// Loaded split: images and labels as tensors plus ids, ready for training.
struct Dataset {
    Manifest manifest;
    std::vector<Tensor4> images;
    std::vector<Tensor4> labels;
    std::vector<int> sample_ids;
};

Dataset load_dataset(const std::filesystem::path& split_dir);

// key = value spec file (all DomainSpec fields).
DomainSpec read_spec_file(const std::filesystem::path& path);
void write_spec_file(const DomainSpec& spec, const std::filesystem::path& path);

}  // namespace lfc
