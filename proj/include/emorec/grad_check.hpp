#pragma once

#include <functional>

#include "emorec/tensor.hpp"

namespace emorec {

// Central-difference check against the accumulated gradient of a module
// parameter. loss_fn re-runs the module forward; the parameter is perturbed
// in place between evaluations.
inline double grad_check_param(const std::function<Tensor<double>()>& loss_fn,
                               Tensor<double> param, double eps = 1e-5) {
    param.zero_grad();
    Tensor<double> loss = loss_fn();
    if (loss.numel() != 1) throw ValidationError("grad_check: loss must be scalar");
    loss.backward();
    const std::vector<double> analytic = param.grad();

    double max_err = 0.0;
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double orig = param.data()[i];
        param.data()[i] = orig + eps;
        const double fp = loss_fn().item();
        param.data()[i] = orig - eps;
        const double fm = loss_fn().item();
        param.data()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
        max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

// Central-difference check of reverse-mode gradients. f must be scalar-valued
// and is re-evaluated 2*numel times, so keep the point small. Returns
// max_i |analytic_i - numeric_i| / max(1e-12, |analytic_i| + |numeric_i|).
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                         const Tensor<double>& point, double eps = 1e-5) {
    Tensor<double> x = point.detach();
    x.set_requires_grad(true);
    Tensor<double> loss = f(x);
    if (loss.numel() != 1) throw ValidationError("grad_check: f must be scalar-valued");
    loss.backward();
    const std::vector<double> analytic = x.grad();

    Tensor<double> probe = point.detach();
    double max_err = 0.0;
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + eps;
        const double fp = f(probe).item();
        probe.data()[i] = orig - eps;
        const double fm = f(probe).item();
        probe.data()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double denom = std::max(1e-12, std::abs(analytic[i]) + std::abs(numeric));
        max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

} // namespace emorec
