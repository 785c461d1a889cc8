#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lfc/param.hpp"
#include "lfc/tensor.hpp"

namespace lfc {

// Define-by-run reverse-mode differentiation. Every op builds a Node holding
// the forward value and a closure that pushes gradients into its inputs; one
// trace is built per forward pass and consumed by a single backward() call.

class Node;
using Value = std::shared_ptr<Node>;

class Node {
public:
    Tensor4 value;
    Tensor4 grad;  // allocated on first use during backward
    bool has_grad = false;
    bool requires_grad = false;
    bool backward_consumed = false;
    Parameter* bound_param = nullptr;  // leaf bound to a trainable parameter
    std::vector<Value> inputs;
    std::function<void(Node&)> backprop;

    Tensor4& ensure_grad() {
        if (!has_grad) {
            grad = Tensor4::zeros_like(value);
            has_grad = true;
        }
        return grad;
    }
};

// Leaves.
Value constant(Tensor4 v);
Value param_leaf(Parameter& p);

// Layer ops.
Value conv2d(const Value& input, const Value& weight, const Value& bias, int stride, int padding);
Value batchnorm(const Value& input, BatchNormState& state, const Value& gamma, const Value& beta,
                BnMode mode);
Value relu(const Value& input);
Value maxpool2x2(const Value& input);
Value upsample2x_nearest(const Value& input);
Value concat_channels(const Value& a, const Value& b);
Value softmax_channels(const Value& logits);

// Losses and scalar plumbing.
Value cross_entropy_soft(const Value& pred_prob, const Tensor4& target_prob,
                         const Tensor4& pixel_mask);
Value slice_sample(const Value& input, int sample);
Value add(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double k);
Value sum_all(const Value& a);

// Runs reverse-mode accumulation from a scalar loss node. Gradients of every
// reachable parameter leaf are added into Parameter::grad. A trace can be
// consumed once; rebuilding the forward pass is required before the next call.
void backward(const Value& loss);

// Log clamp shared by the losses and the KL difficulty measure.
inline constexpr double kLogEps = 1e-8;

}  // namespace lfc
