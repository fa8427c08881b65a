#pragma once

#include <cmath>
#include <vector>

#include "csiloc/errors.hpp"
#include "csiloc/layers.hpp"

namespace csiloc {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One Adam update with bias correction. Moments and the update itself are
// computed in double so float training stays stable.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, const AdamConfig& cfg) {
    for (Parameter<T>* p : params) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) {
            if (!std::isfinite(static_cast<double>(p->grad[i]))) {
                throw NumericError("adam: non-finite gradient in parameter '" + p->name +
                                   "' at flat index " + std::to_string(i));
            }
        }
        p->step_count += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = static_cast<double>(p->grad[i]);
            const double m = cfg.beta1 * static_cast<double>(p->m[i]) + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * static_cast<double>(p->v[i]) + (1.0 - cfg.beta2) * g * g;
            p->m[i] = static_cast<T>(m);
            p->v[i] = static_cast<T>(v);
            const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
            p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
        }
    }
}

} // namespace csiloc
