#pragma once

#include <cstdint>

#include "lfc/tensor.hpp"

namespace lfc {

// A trainable array: value plus gradient and Adam moment buffers, all the
// same shape. Biases and batch-norm affines use the (1,c,1,1) layout.
struct Parameter {
    Tensor4 value;
    Tensor4 grad;
    Tensor4 adam_m;
    Tensor4 adam_v;
    std::int64_t step_count = 0;

    Parameter() = default;
    explicit Parameter(Tensor4 v)
        : value(std::move(v)),
          grad(Tensor4::zeros_like(value)),
          adam_m(Tensor4::zeros_like(value)),
          adam_v(Tensor4::zeros_like(value)) {}

    void zero_grad() { grad.fill(0.0); }
};

enum class BnMode : std::uint8_t {
    train,        // normalize with batch statistics, EMA-update running stats
    eval,         // normalize with running statistics only
    recalibrate,  // emit eval-normalized output, accumulate exact target stats
};

// Per-channel normalization state. gamma/beta are trainable; the running
// statistics are updated in train mode (EMA) or replaced wholesale by a
// recalibration pass.
struct BatchNormState {
    Parameter gamma;       // (1,c,1,1)
    Parameter beta;        // (1,c,1,1)
    Tensor4 running_mean;  // (1,c,1,1)
    Tensor4 running_var;   // (1,c,1,1), strictly positive
    double eps = 1e-5;
    double momentum = 0.1;  // new_running = (1 - momentum) * running + momentum * batch
    BnMode mode = BnMode::eval;

    // Recalibration accumulators (sum, sum of squares, pixel count per channel).
    Tensor4 recal_sum;
    Tensor4 recal_sumsq;
    std::int64_t recal_count = 0;

    BatchNormState() = default;
    explicit BatchNormState(int channels)
        : gamma(Tensor4(1, channels, 1, 1, 1.0)),
          beta(Tensor4(1, channels, 1, 1, 0.0)),
          running_mean(1, channels, 1, 1, 0.0),
          running_var(1, channels, 1, 1, 1.0),
          recal_sum(1, channels, 1, 1, 0.0),
          recal_sumsq(1, channels, 1, 1, 0.0) {}

    int channels() const { return gamma.value.c; }

    void begin_recalibration();
    // Replaces running statistics with the exact mean/population variance of
    // everything accumulated since begin_recalibration(); resets to eval mode.
    void finish_recalibration();
};

}  // namespace lfc
