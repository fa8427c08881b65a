#pragma once

#include "csiloc/errors.hpp"
#include "csiloc/tensor.hpp"

namespace csiloc {

template <typename T>
struct LossResult {
    double value;
    Tensor<T> grad;
};

// Mean squared error over all elements: loss = mean((pred - target)^2),
// d loss / d pred = 2 (pred - target) / count. Accumulated in double
// regardless of T.
template <typename T>
LossResult<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target)) {
        throw DimensionError("mse: prediction shape " + shape_string(pred.shape()) +
                             " does not match target shape " + shape_string(target.shape()));
    }
    const std::size_t n = pred.size();
    Tensor<T> grad(pred.shape());
    double sum = 0.0;
    const double scale = 2.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        sum += d * d;
        grad[i] = static_cast<T>(scale * d);
    }
    return {sum / static_cast<double>(n), std::move(grad)};
}

// Forward-only variant for validation passes.
template <typename T>
double mse_value(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target)) {
        throw DimensionError("mse: prediction shape " + shape_string(pred.shape()) +
                             " does not match target shape " + shape_string(target.shape()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

} // namespace csiloc
