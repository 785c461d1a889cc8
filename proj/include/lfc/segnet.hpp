#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lfc/graph.hpp"
#include "lfc/param.hpp"
#include "lfc/tensor.hpp"

namespace lfc {

// Compact U-Net style encoder-decoder: per level conv3x3-BN-ReLU x2, 2x max
// pooling on the way down, nearest-neighbor upsampling plus skip concatenation
// on the way up, 1x1 head. Shared by all three branches of a run.
struct SegNetConfig {
    int in_channels = 1;
    int num_classes = 3;
    int base_width = 8;
    int depth = 3;

    int spatial_multiple() const { return 1 << depth; }
    void validate() const;
    bool operator==(const SegNetConfig&) const = default;
};

enum class Role : std::uint8_t { source = 0, target = 1, momentum = 2 };

const char* role_name(Role r);

struct ConvBnBlock {
    Parameter w1, b1;
    BatchNormState bn1;
    Parameter w2, b2;
    BatchNormState bn2;
};

struct ModelBranch {
    SegNetConfig config;
    Role role = Role::target;
    bool trainable = true;  // always derived from role

    std::vector<ConvBnBlock> encoder;
    ConvBnBlock bottleneck;
    std::vector<ConvBnBlock> decoder;
    Parameter head_w, head_b;

    void set_role(Role r);

    // Deterministic traversal order; names are stable and used by the
    // checkpoint format and the EMA update.
    std::vector<std::pair<std::string, Parameter*>> named_parameters();
    std::vector<std::pair<std::string, BatchNormState*>> named_bn_states();
    std::vector<Parameter*> parameters();
    std::vector<BatchNormState*> bn_states();
};

// He-initialized branch; bit-identical for identical (config, seed).
ModelBranch build(const SegNetConfig& config, std::uint64_t seed);

// Architecture shell with zeroed weights (checkpoint loading target).
ModelBranch make_arch(const SegNetConfig& config);

// Logits with shape (n, num_classes, h, w). A source-role branch always runs
// in eval mode regardless of the requested one. Train mode updates BN running
// statistics; eval mode performs no writes.
Tensor4 forward(ModelBranch& branch, const Tensor4& images, BnMode mode);

// Same pass recorded on the autodiff trace; requires a trainable branch.
Value forward_traced(ModelBranch& branch, const Tensor4& images, BnMode mode);

// Copies the source branch into a trainable target branch and replaces every
// BN running statistic with the exact activation mean/variance over one full
// pass of the target images. Weights are untouched; the source is untouched.
ModelBranch adabn_init(const ModelBranch& source, const std::vector<Tensor4>& target_images,
                       int batch_size);

// Deep copy with role=momentum.
ModelBranch clone_into_momentum(const ModelBranch& target);

// Stacks single-image tensors [first, last) into one batch.
Tensor4 stack_images(const std::vector<Tensor4>& images, std::size_t first, std::size_t last);

}  // namespace lfc
