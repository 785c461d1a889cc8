#include "lfc/param.hpp"

#include <algorithm>

#include "lfc/errors.hpp"

namespace lfc {

void BatchNormState::begin_recalibration() {
    recal_sum.fill(0.0);
    recal_sumsq.fill(0.0);
    recal_count = 0;
    mode = BnMode::recalibrate;
}

void BatchNormState::finish_recalibration() {
    if (recal_count == 0) {
        throw DegenerateInputError("batch-norm recalibration saw no data");
    }
    const double inv = 1.0 / static_cast<double>(recal_count);
    for (int ch = 0; ch < channels(); ++ch) {
        const double mean = recal_sum.data[ch] * inv;
        double var = recal_sumsq.data[ch] * inv - mean * mean;
        var = std::max(var, 1e-12);  // keep running_var strictly positive
        running_mean.data[ch] = mean;
        running_var.data[ch] = var;
    }
    recal_sum.fill(0.0);
    recal_sumsq.fill(0.0);
    recal_count = 0;
    mode = BnMode::eval;
}

}  // namespace lfc
