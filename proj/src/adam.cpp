#include "lfc/adam.hpp"

#include <cmath>

namespace lfc {

void adam_step(const std::vector<Parameter*>& params, const AdamConfig& cfg) {
    for (Parameter* p : params) {
        p->step_count += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
        for (std::size_t i = 0; i < p->value.data.size(); ++i) {
            const double g = p->grad.data[i];
            const double m = cfg.beta1 * p->adam_m.data[i] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * p->adam_v.data[i] + (1.0 - cfg.beta2) * g * g;
            p->adam_m.data[i] = m;
            p->adam_v.data[i] = v;
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            p->value.data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
        p->zero_grad();
    }
}

}  // namespace lfc
