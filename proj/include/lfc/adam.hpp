#pragma once

#include <vector>

#include "lfc/param.hpp"

namespace lfc {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam update over all parameters; zeroes gradients afterward.
void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg);

}  // namespace lfc
