#pragma once

#include <array>
#include <vector>

#include "emorec/config.hpp"
#include "emorec/dataset.hpp"
#include "emorec/layers.hpp"
#include "emorec/ops.hpp"

// Context 3: socio-dynamic encoding in two interchangeable variants, a depth
// map CNN and a proximity-graph GCN over agent positions. Both emit a
// C-dimensional h3 behind the same interface.

namespace emorec {

// ---------------------------------------------------------------------------
// depth variant: five conv+pool stages, then FC 1000 -> C
// ---------------------------------------------------------------------------

template <typename T>
class DepthCnn {
public:
    DepthCnn(std::size_t classes, const std::vector<std::size_t>& channels, Rng& rng,
             std::size_t image_size = kImageSize)
        : image_size_(image_size) {
        if (channels.size() != 5)
            throw ValidationError("depth_stream: exactly five conv stages");
        if (image_size % 32 != 0)
            throw ValidationError("depth_stream: image size must be divisible by 32");
        std::size_t in = 1;
        for (std::size_t i = 0; i < 5; ++i) {
            conv_[i] = Conv2dLayer<T>(in, channels[i], 3, rng);
            in = channels[i];
        }
        const std::size_t side = image_size / 32;
        fc1_ = Linear<T>(in * side * side, kDepthFcWidth, rng);
        fc2_ = Linear<T>(kDepthFcWidth, classes, rng);
    }

    Tensor<T> forward(const Tensor<T>& depth) const {
        if (depth.ndim() != 4 || depth.shape()[1] != 1 || depth.shape()[2] != image_size_ ||
            depth.shape()[3] != image_size_)
            throw ValidationError("depth_stream: expected [B,1," + std::to_string(image_size_) +
                                  "," + std::to_string(image_size_) + "], got " +
                                  shape_str(depth.shape()));
        for (const T& v : depth.data())
            if (!std::isfinite(static_cast<double>(v)) || v < T(0))
                throw ValidationError("depth_stream: depth values must be finite and >= 0");
        Tensor<T> h = depth;
        for (std::size_t i = 0; i < 5; ++i) h = maxpool2d(relu(conv_[i].forward(h)), 2);
        h = reshape(h, {h.shape()[0], h.shape()[1] * h.shape()[2] * h.shape()[3]});
        return fc2_.forward(relu(fc1_.forward(h)));
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < 5; ++i)
            conv_[i].register_params(reg, prefix + ".conv" + std::to_string(i));
        fc1_.register_params(reg, prefix + ".fc1");
        fc2_.register_params(reg, prefix + ".fc2");
    }

private:
    std::size_t image_size_;
    std::array<Conv2dLayer<T>, 5> conv_;
    Linear<T> fc1_, fc2_;
};

// ---------------------------------------------------------------------------
// proximity graph variant
// ---------------------------------------------------------------------------

// A(i,j) = exp(-d(v_i,v_j)) when the Euclidean distance is strictly below mu,
// 0 otherwise. Coincident agents (d=0) get weight 1; the diagonal is 1.
template <typename T>
Tensor<T> build_adjacency(const Tensor<T>& positions, double mu) {
    if (positions.ndim() != 2 || positions.shape()[1] != 2 || positions.shape()[0] < 1)
        throw ValidationError("build_adjacency: expected [n,2] with n>=1, got " +
                              shape_str(positions.shape()));
    if (mu <= 0) throw ValidationError("build_adjacency: mu must be > 0");
    for (const T& v : positions.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw ValidationError("build_adjacency: non-finite position");
    const std::size_t n = positions.shape()[0];
    const T* X = positions.ptr();
    Tensor<T> a({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double dx = static_cast<double>(X[i * 2] - X[j * 2]);
            const double dy = static_cast<double>(X[i * 2 + 1] - X[j * 2 + 1]);
            const double d = std::sqrt(dx * dx + dy * dy);
            a.data()[i * n + j] = d < mu ? static_cast<T>(std::exp(-d)) : T(0);
        }
    }
    return a;
}

// D^{-1/2} A D^{-1/2}; isolated rows fall back to unit degree
template <typename T>
Tensor<T> normalize_adjacency(const Tensor<T>& a) {
    const std::size_t n = a.shape()[0];
    std::vector<T> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        T deg = T(0);
        for (std::size_t j = 0; j < n; ++j) deg += a.data()[i * n + j];
        inv_sqrt[i] = deg > T(0) ? T(1) / std::sqrt(deg) : T(1);
    }
    Tensor<T> out({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out.data()[i * n + j] = a.data()[i * n + j] * inv_sqrt[i] * inv_sqrt[j];
    return out;
}

// two graph convs H <- relu(A_hat H W), mean pool over agents, FC 100 -> C.
// Graphs vary in size per sample, so the stream runs one graph at a time.
template <typename T>
class GcnStream {
public:
    GcnStream(std::size_t classes, const std::vector<std::size_t>& hidden, Rng& rng) {
        if (hidden.size() != 2) throw ValidationError("gcn_stream: exactly two graph convs");
        w1_ = glorot_uniform<T>({2, hidden[0]}, 2, hidden[0], rng);
        w1_.set_requires_grad(true);
        w2_ = glorot_uniform<T>({hidden[0], hidden[1]}, hidden[0], hidden[1], rng);
        w2_.set_requires_grad(true);
        fc1_ = Linear<T>(hidden[1], kGcnFcWidth, rng);
        fc2_ = Linear<T>(kGcnFcWidth, classes, rng);
    }

    // positions [n,2], adjacency from build_adjacency -> [1,C]
    Tensor<T> forward(const Tensor<T>& positions, const Tensor<T>& adjacency) const {
        const std::size_t n = positions.shape()[0];
        if (adjacency.shape() != Shape{n, n})
            throw ValidationError("gcn_stream: adjacency " + shape_str(adjacency.shape()) +
                                  " does not match " + std::to_string(n) + " agents");
        Tensor<T> ahat = normalize_adjacency(adjacency);
        Tensor<T> h = relu(matmul(ahat, matmul(positions, w1_)));
        h = relu(matmul(ahat, matmul(h, w2_)));
        Tensor<T> pooled = reshape(reduce_mean(h, {0}), {1, w2_.shape()[1]});
        return fc2_.forward(relu(fc1_.forward(pooled)));
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + ".w1", w1_);
        reg.add(prefix + ".w2", w2_);
        fc1_.register_params(reg, prefix + ".fc1");
        fc2_.register_params(reg, prefix + ".fc2");
    }

private:
    Tensor<T> w1_, w2_;
    Linear<T> fc1_, fc2_;
};

} // namespace emorec
