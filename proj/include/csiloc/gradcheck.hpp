#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "csiloc/layers.hpp"
#include "csiloc/loss.hpp"
#include "csiloc/rng.hpp"

namespace csiloc {

struct GradCheckOptions {
    double eps = 1e-6;               // central-difference step
    std::size_t coords_per_tensor = 200; // sampled coordinates (all, if the tensor is smaller)
    std::uint64_t seed = 17;
};

struct GradCheckEntry {
    std::string param;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<GradCheckEntry> worst_per_param; // worst coordinate of each tensor
    bool pass(double tol) const { return max_rel_error <= tol; }
};

// Central finite differences against analytic gradients. Double precision
// only; float truncation would drown the signal.
//
// run_backward must zero gradients, run a full forward pass and backpropagate.
// loss_fn must re-evaluate the loss at the current parameter values without
// touching any cached state.
inline GradCheckReport grad_check(
    const std::vector<std::pair<std::string, Parameter<double>*>>& params,
    const std::function<void()>& run_backward,
    const std::function<double()>& loss_fn,
    const GradCheckOptions& opt = {}) {
    run_backward();

    GradCheckReport report;
    Rng rng(opt.seed);
    for (const auto& [name, p] : params) {
        const std::size_t n = p->value.size();
        std::vector<std::size_t> coords;
        if (n <= opt.coords_per_tensor) {
            coords = identity_permutation(n);
        } else {
            coords = identity_permutation(n);
            rng.shuffle(coords);
            coords.resize(opt.coords_per_tensor);
        }

        GradCheckEntry worst{name, 0, 0.0, 0.0, -1.0};
        for (std::size_t idx : coords) {
            const double saved = p->value[idx];
            p->value[idx] = saved + opt.eps;
            const double loss_hi = loss_fn();
            p->value[idx] = saved - opt.eps;
            const double loss_lo = loss_fn();
            p->value[idx] = saved;

            const double numeric = (loss_hi - loss_lo) / (2.0 * opt.eps);
            const double analytic = p->grad[idx];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > worst.rel_error) worst = {name, idx, analytic, numeric, rel};
        }
        report.max_rel_error = std::max(report.max_rel_error, worst.rel_error);
        report.worst_per_param.push_back(worst);
    }
    return report;
}

// Checks a plain stack against the MSE objective.
inline GradCheckReport grad_check_stack(Stack<double>& net, const Tensor<double>& input,
                                        const Tensor<double>& target,
                                        const GradCheckOptions& opt = {}) {
    auto run_backward = [&] {
        net.zero_grad();
        Tensor<double> pred = net.forward(input);
        auto loss = mse_loss(pred, target);
        net.backward(loss.grad);
    };
    auto loss_fn = [&] { return mse_value(net.apply(input), target); };
    return grad_check(net.named_params(), run_backward, loss_fn, opt);
}

} // namespace csiloc
