#pragma once

#include <cmath>
#include <vector>

#include "emorec/tensor.hpp"

namespace emorec {

// Adam with bias correction, applied in place to a fixed parameter list.
template <typename T>
class Adam {
public:
    struct Options {
        T lr = T(1e-4);
        T beta1 = T(0.9);
        T beta2 = T(0.999);
        T eps = T(1e-8);
    };

    Adam(std::vector<Tensor<T>> params, Options opts) : params_(std::move(params)), opts_(opts) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].numel(), T(0));
            v_[i].assign(params_[i].numel(), T(0));
        }
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(opts_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(opts_.beta2, static_cast<T>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            const auto& g = p.grad();
            if (g.size() != p.numel())
                throw ValidationError("adam: gradient/parameter size mismatch");
            auto& m = m_[i];
            auto& v = v_[i];
            auto& w = p.data();
            for (std::size_t j = 0; j < w.size(); ++j) {
                const T gj = g[j];
                if (!std::isfinite(static_cast<double>(gj)))
                    throw NumericError("adam: non-finite gradient");
                m[j] = opts_.beta1 * m[j] + (T(1) - opts_.beta1) * gj;
                v[j] = opts_.beta2 * v[j] + (T(1) - opts_.beta2) * gj * gj;
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                w[j] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t steps() const { return t_; }
    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }

private:
    std::vector<Tensor<T>> params_;
    Options opts_;
    std::vector<std::vector<T>> m_, v_;
    std::size_t t_ = 0;
};

} // namespace emorec
