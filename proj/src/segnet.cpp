#include "lfc/segnet.hpp"

#include <cmath>

#include "lfc/errors.hpp"
#include "lfc/rng.hpp"

namespace lfc {

namespace {

Parameter he_conv(int c_out, int c_in, int k, Rng& rng) {
    Tensor4 w(c_out, c_in, k, k);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(c_in) * k * k));
    for (double& v : w.data) v = rng.normal(0.0, stddev);
    return Parameter(std::move(w));
}

Parameter zero_bias(int c_out) { return Parameter(Tensor4(1, c_out, 1, 1, 0.0)); }

ConvBnBlock make_block(int c_in, int c_out) {
    ConvBnBlock b;
    b.w1 = Parameter(Tensor4(c_out, c_in, 3, 3));
    b.b1 = zero_bias(c_out);
    b.bn1 = BatchNormState(c_out);
    b.w2 = Parameter(Tensor4(c_out, c_out, 3, 3));
    b.b2 = zero_bias(c_out);
    b.bn2 = BatchNormState(c_out);
    return b;
}

void init_block(ConvBnBlock& b, Rng& rng) {
    const int c_out = b.w1.value.n;
    const int c_in = b.w1.value.c;
    b.w1 = he_conv(c_out, c_in, 3, rng);
    b.b1 = zero_bias(c_out);
    b.w2 = he_conv(c_out, c_out, 3, rng);
    b.b2 = zero_bias(c_out);
}

Value block_forward(ConvBnBlock& blk, const Value& in, BnMode mode, bool with_grad) {
    auto wrap = [with_grad](Parameter& p) { return with_grad ? param_leaf(p) : constant(p.value); };
    Value x = conv2d(in, wrap(blk.w1), wrap(blk.b1), 1, 1);
    x = batchnorm(x, blk.bn1, wrap(blk.bn1.gamma), wrap(blk.bn1.beta), mode);
    x = relu(x);
    x = conv2d(x, wrap(blk.w2), wrap(blk.b2), 1, 1);
    x = batchnorm(x, blk.bn2, wrap(blk.bn2.gamma), wrap(blk.bn2.beta), mode);
    return relu(x);
}

Value build_forward(ModelBranch& m, const Tensor4& images, BnMode mode, bool with_grad) {
    m.config.validate();
    if (images.c != m.config.in_channels) {
        throw ConfigError("forward: image channels " + images.shape_str() + " do not match model (" +
                          std::to_string(m.config.in_channels) + " expected)");
    }
    const int mult = m.config.spatial_multiple();
    if (images.h % mult != 0 || images.w % mult != 0) {
        throw ConfigError("forward: spatial dims of " + images.shape_str() +
                          " must be divisible by " + std::to_string(mult));
    }
    if (m.role == Role::source) mode = BnMode::eval;

    auto wrap = [with_grad](Parameter& p) { return with_grad ? param_leaf(p) : constant(p.value); };
    Value x = constant(images);
    std::vector<Value> skips;
    skips.reserve(m.encoder.size());
    for (auto& blk : m.encoder) {
        x = block_forward(blk, x, mode, with_grad);
        skips.push_back(x);
        x = maxpool2x2(x);
    }
    x = block_forward(m.bottleneck, x, mode, with_grad);
    for (int i = static_cast<int>(m.decoder.size()) - 1; i >= 0; --i) {
        x = upsample2x_nearest(x);
        x = concat_channels(x, skips[static_cast<std::size_t>(i)]);
        x = block_forward(m.decoder[static_cast<std::size_t>(m.decoder.size()) - 1 - i], x, mode,
                          with_grad);
    }
    return conv2d(x, wrap(m.head_w), wrap(m.head_b), 1, 0);
}

}  // namespace

void SegNetConfig::validate() const {
    if (in_channels < 1 || num_classes < 2 || base_width < 1 || depth < 1) {
        throw ConfigError("invalid network config: in_channels=" + std::to_string(in_channels) +
                          " num_classes=" + std::to_string(num_classes) +
                          " base_width=" + std::to_string(base_width) +
                          " depth=" + std::to_string(depth));
    }
}

const char* role_name(Role r) {
    switch (r) {
        case Role::source: return "source";
        case Role::target: return "target";
        case Role::momentum: return "momentum";
    }
    return "?";
}

void ModelBranch::set_role(Role r) {
    role = r;
    trainable = (r == Role::target);
}

std::vector<std::pair<std::string, Parameter*>> ModelBranch::named_parameters() {
    std::vector<std::pair<std::string, Parameter*>> out;
    auto add_block = [&out](const std::string& prefix, ConvBnBlock& b) {
        out.emplace_back(prefix + ".conv1.w", &b.w1);
        out.emplace_back(prefix + ".conv1.b", &b.b1);
        out.emplace_back(prefix + ".bn1.gamma", &b.bn1.gamma);
        out.emplace_back(prefix + ".bn1.beta", &b.bn1.beta);
        out.emplace_back(prefix + ".conv2.w", &b.w2);
        out.emplace_back(prefix + ".conv2.b", &b.b2);
        out.emplace_back(prefix + ".bn2.gamma", &b.bn2.gamma);
        out.emplace_back(prefix + ".bn2.beta", &b.bn2.beta);
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) add_block("enc" + std::to_string(i), encoder[i]);
    add_block("bott", bottleneck);
    for (std::size_t i = 0; i < decoder.size(); ++i) add_block("dec" + std::to_string(i), decoder[i]);
    out.emplace_back("head.w", &head_w);
    out.emplace_back("head.b", &head_b);
    return out;
}

std::vector<std::pair<std::string, BatchNormState*>> ModelBranch::named_bn_states() {
    std::vector<std::pair<std::string, BatchNormState*>> out;
    auto add_block = [&out](const std::string& prefix, ConvBnBlock& b) {
        out.emplace_back(prefix + ".bn1", &b.bn1);
        out.emplace_back(prefix + ".bn2", &b.bn2);
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) add_block("enc" + std::to_string(i), encoder[i]);
    add_block("bott", bottleneck);
    for (std::size_t i = 0; i < decoder.size(); ++i) add_block("dec" + std::to_string(i), decoder[i]);
    return out;
}

std::vector<Parameter*> ModelBranch::parameters() {
    std::vector<Parameter*> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
}

std::vector<BatchNormState*> ModelBranch::bn_states() {
    std::vector<BatchNormState*> out;
    for (auto& [name, s] : named_bn_states()) out.push_back(s);
    return out;
}

ModelBranch make_arch(const SegNetConfig& config) {
    config.validate();
    ModelBranch m;
    m.config = config;
    int ch = config.in_channels;
    for (int i = 0; i < config.depth; ++i) {
        const int c_out = config.base_width << i;
        m.encoder.push_back(make_block(ch, c_out));
        ch = c_out;
    }
    const int c_bott = config.base_width << config.depth;
    m.bottleneck = make_block(ch, c_bott);
    ch = c_bott;
    for (int i = config.depth - 1; i >= 0; --i) {
        const int c_skip = config.base_width << i;
        m.decoder.push_back(make_block(ch + c_skip, c_skip));
        ch = c_skip;
    }
    m.head_w = Parameter(Tensor4(config.num_classes, ch, 1, 1));
    m.head_b = zero_bias(config.num_classes);
    m.set_role(Role::target);
    return m;
}

ModelBranch build(const SegNetConfig& config, std::uint64_t seed) {
    ModelBranch m = make_arch(config);
    Rng rng(mix_seed(seed, 0x6e657477ULL));  // weight stream
    for (auto& blk : m.encoder) init_block(blk, rng);
    init_block(m.bottleneck, rng);
    for (auto& blk : m.decoder) init_block(blk, rng);
    m.head_w = he_conv(config.num_classes, config.base_width, 1, rng);
    m.head_b = zero_bias(config.num_classes);
    return m;
}

Tensor4 forward(ModelBranch& branch, const Tensor4& images, BnMode mode) {
    return build_forward(branch, images, mode, false)->value;
}

Value forward_traced(ModelBranch& branch, const Tensor4& images, BnMode mode) {
    if (!branch.trainable) {
        throw UsageError("forward_traced: branch with role '" + std::string(role_name(branch.role)) +
                         "' is not trainable");
    }
    return build_forward(branch, images, mode, true);
}

ModelBranch adabn_init(const ModelBranch& source, const std::vector<Tensor4>& target_images,
                       int batch_size) {
    if (target_images.empty()) {
        throw DegenerateInputError("adabn_init: empty target image set");
    }
    if (batch_size < 1) throw ConfigError("adabn_init: batch_size must be >= 1");
    ModelBranch target = source;
    target.set_role(Role::target);
    for (BatchNormState* st : target.bn_states()) st->begin_recalibration();
    for (std::size_t first = 0; first < target_images.size(); first += batch_size) {
        const std::size_t last = std::min(first + batch_size, target_images.size());
        const Tensor4 batch = stack_images(target_images, first, last);
        forward(target, batch, BnMode::recalibrate);
    }
    for (BatchNormState* st : target.bn_states()) st->finish_recalibration();
    return target;
}

ModelBranch clone_into_momentum(const ModelBranch& target) {
    ModelBranch m = target;
    m.set_role(Role::momentum);
    return m;
}

Tensor4 stack_images(const std::vector<Tensor4>& images, std::size_t first, std::size_t last) {
    if (first >= last || last > images.size()) {
        throw UsageError("stack_images: bad range");
    }
    const Tensor4& head = images[first];
    Tensor4 out(static_cast<int>(last - first), head.c, head.h, head.w);
    for (std::size_t i = first; i < last; ++i) {
        const Tensor4& img = images[i];
        if (img.n != 1 || img.c != head.c || img.h != head.h || img.w != head.w) {
            throw ConfigError("stack_images: inconsistent image shape " + img.shape_str());
        }
        std::copy(img.data.begin(), img.data.end(),
                  out.data.begin() +
                      static_cast<std::ptrdiff_t>((i - first) * img.data.size()));
    }
    return out;
}

}  // namespace lfc
