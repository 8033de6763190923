#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "emorec/ops.hpp"
#include "emorec/rng.hpp"
#include "emorec/tensor.hpp"

namespace emorec {

enum class Mode { Train, Eval };

// Ordered (name, tensor) list; ordering fixes init and checkpoint layout.
template <typename T>
struct ParamRegistry {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, Tensor<T> t) {
        t.set_requires_grad(true);
        items.emplace_back(name, std::move(t));
    }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        out.reserve(items.size());
        for (const auto& [_, t] : items) out.push_back(t);
        return out;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : items) n += t.numel();
        return n;
    }
};

// uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return random_uniform<T>(std::move(shape), rng, static_cast<T>(-bound),
                             static_cast<T>(bound));
}

template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : w_(glorot_uniform<T>({in, out}, in, out, rng)), b_(Tensor<T>::zeros({out})) {}

    Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, w_), b_); }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + ".weight", w_);
        reg.add(prefix + ".bias", b_);
    }

    const Tensor<T>& weight() const { return w_; }
    const Tensor<T>& bias() const { return b_; }

private:
    Tensor<T> w_, b_;
};

template <typename T>
class Conv1dLayer {
public:
    Conv1dLayer() = default;
    Conv1dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, Rng& rng,
                PadMode pad = PadMode::Zero)
        : w_(glorot_uniform<T>({out_ch, in_ch, k}, in_ch * k, out_ch * k, rng)),
          b_(Tensor<T>::zeros({out_ch})),
          pad_(pad) {}

    Tensor<T> forward(const Tensor<T>& x) const { return conv1d(x, w_, b_, pad_); }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + ".weight", w_);
        reg.add(prefix + ".bias", b_);
    }

private:
    Tensor<T> w_, b_;
    PadMode pad_ = PadMode::Zero;
};

template <typename T>
class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t k, Rng& rng)
        : w_(glorot_uniform<T>({out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, rng)),
          b_(Tensor<T>::zeros({out_ch})) {}

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, w_, b_); }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + ".weight", w_);
        reg.add(prefix + ".bias", b_);
    }

private:
    Tensor<T> w_, b_;
};

template <typename T>
class BatchNorm {
public:
    BatchNorm() = default;
    explicit BatchNorm(std::size_t channels)
        : gamma_(Tensor<T>::ones({channels})),
          beta_(Tensor<T>::zeros({channels})),
          running_mean_(channels, T(0)),
          running_var_(channels, T(1)) {}

    Tensor<T> forward(const Tensor<T>& x, Mode mode) const {
        return batch_norm(x, gamma_, beta_, running_mean_, running_var_, mode == Mode::Train,
                          mode == Mode::Train && track_running_);
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + ".gamma", gamma_);
        reg.add(prefix + ".beta", beta_);
    }

    // grad checks re-evaluate the same batch; freezing the running stats keeps
    // those evaluations side-effect free
    void set_track_running(bool on) { track_running_ = on; }

    std::vector<T>& running_mean() { return running_mean_; }
    std::vector<T>& running_var() { return running_var_; }

private:
    Tensor<T> gamma_, beta_;
    mutable std::vector<T> running_mean_, running_var_;
    bool track_running_ = true;
};

} // namespace emorec
