#pragma once

#include <array>
#include <vector>

#include "emorec/config.hpp"
#include "emorec/dataset.hpp"
#include "emorec/layers.hpp"
#include "emorec/ops.hpp"

// Context 1: per-agent modality streams (face landmarks, gait skeleton) fused
// multiplicatively into a C-dimensional encoding, with per-modality class
// probabilities feeding the confidence-weighted fusion loss.

namespace emorec {

template <typename T>
struct StreamOutput {
    Tensor<T> feature; // [B,64]
    Tensor<T> probs;   // [B,C], rows sum to 1
};

// ---------------------------------------------------------------------------
// face stream: three conv1d+BN+ReLU stages, max pool, three FC+BN+ReLU stages
// ---------------------------------------------------------------------------

template <typename T>
class FaceStream {
public:
    FaceStream(std::size_t classes, const std::vector<std::size_t>& conv_channels,
               const std::vector<std::size_t>& fc_hidden, Rng& rng, std::size_t input_len = kFaceDim)
        : input_len_(input_len), classes_(classes) {
        std::size_t in_ch = 1;
        for (std::size_t i = 0; i < 3; ++i) {
            conv_[i] = Conv1dLayer<T>(in_ch, conv_channels[i], 3, rng);
            bn_[i] = BatchNorm<T>(conv_channels[i]);
            in_ch = conv_channels[i];
        }
        const std::size_t flat = (input_len / 2) * conv_channels[2];
        const std::array<std::size_t, 3> fc_out = {fc_hidden[0], fc_hidden[1], kFeatureDim};
        std::size_t in = flat;
        for (std::size_t i = 0; i < 3; ++i) {
            fc_[i] = Linear<T>(in, fc_out[i], rng);
            fc_bn_[i] = BatchNorm<T>(fc_out[i]);
            in = fc_out[i];
        }
        aux_ = Linear<T>(kFeatureDim, classes, rng);
    }

    StreamOutput<T> forward(const Tensor<T>& face, Mode mode) const {
        if (face.ndim() != 2 || face.shape()[1] != input_len_)
            throw ValidationError("face_stream: expected [B," + std::to_string(input_len_) +
                                  "], got " + shape_str(face.shape()));
        detail::check_input_finite(face, "face_stream");
        const std::size_t B = face.shape()[0];
        Tensor<T> h = reshape(face, {B, 1, input_len_});
        for (std::size_t i = 0; i < 3; ++i) h = relu(bn_[i].forward(conv_[i].forward(h), mode));
        h = maxpool1d(h, 2);
        h = reshape(h, {B, h.shape()[1] * h.shape()[2]});
        for (std::size_t i = 0; i < 3; ++i) h = relu(fc_bn_[i].forward(fc_[i].forward(h), mode));
        return {h, softmax(aux_.forward(h), 1)};
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < 3; ++i) {
            conv_[i].register_params(reg, prefix + ".conv" + std::to_string(i));
            bn_[i].register_params(reg, prefix + ".bn" + std::to_string(i));
        }
        for (std::size_t i = 0; i < 3; ++i) {
            fc_[i].register_params(reg, prefix + ".fc" + std::to_string(i));
            fc_bn_[i].register_params(reg, prefix + ".fcbn" + std::to_string(i));
        }
        aux_.register_params(reg, prefix + ".aux");
    }

    void set_track_running(bool on) {
        for (auto& b : bn_) b.set_track_running(on);
        for (auto& b : fc_bn_) b.set_track_running(on);
    }

private:
    std::size_t input_len_, classes_;
    std::array<Conv1dLayer<T>, 3> conv_;
    std::array<BatchNorm<T>, 3> bn_;
    std::array<Linear<T>, 3> fc_;
    std::array<BatchNorm<T>, 3> fc_bn_;
    Linear<T> aux_;
};

// ---------------------------------------------------------------------------
// gait stream: three blocks of graph conv over the BODY-25 skeleton plus a
// temporal conv along frames, then average pooling over joints and time
// ---------------------------------------------------------------------------

// OpenPose BODY-25 limb pairs
inline const std::vector<std::pair<int, int>>& body25_edges() {
    static const std::vector<std::pair<int, int>> edges = {
        {1, 8},   {1, 2},   {1, 5},   {2, 3},   {3, 4},   {5, 6},   {6, 7},   {8, 9},
        {9, 10},  {10, 11}, {8, 12},  {12, 13}, {13, 14}, {1, 0},   {0, 15},  {15, 17},
        {0, 16},  {16, 18}, {14, 19}, {19, 20}, {14, 21}, {11, 22}, {22, 23}, {11, 24},
    };
    return edges;
}

// D^{-1/2} (A + I) D^{-1/2} for a binary undirected adjacency
template <typename T>
Tensor<T> normalized_skeleton_adjacency(const std::vector<std::pair<int, int>>& edges,
                                        std::size_t joints) {
    std::vector<T> a(joints * joints, T(0));
    for (std::size_t i = 0; i < joints; ++i) a[i * joints + i] = T(1);
    for (auto [u, v] : edges) {
        a[static_cast<std::size_t>(u) * joints + static_cast<std::size_t>(v)] = T(1);
        a[static_cast<std::size_t>(v) * joints + static_cast<std::size_t>(u)] = T(1);
    }
    std::vector<T> deg(joints, T(0));
    for (std::size_t i = 0; i < joints; ++i)
        for (std::size_t j = 0; j < joints; ++j) deg[i] += a[i * joints + j];
    std::vector<T> out(joints * joints);
    for (std::size_t i = 0; i < joints; ++i)
        for (std::size_t j = 0; j < joints; ++j)
            out[i * joints + j] = a[i * joints + j] / std::sqrt(deg[i] * deg[j]);
    return Tensor<T>::from({joints, joints}, std::move(out));
}

template <typename T>
class GaitStream {
public:
    GaitStream(std::size_t classes, const std::vector<std::size_t>& channels, Rng& rng,
               std::size_t joints = kGaitJoints,
               const std::vector<std::pair<int, int>>& edges = body25_edges())
        : joints_(joints), adj_(normalized_skeleton_adjacency<T>(edges, joints)) {
        if (channels.back() != kFeatureDim)
            throw ValidationError("gait_stream: final block width must be 64");
        std::size_t in = 2;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            spatial_.push_back(
                glorot_uniform<T>({in, channels[i]}, in, channels[i], rng));
            // temporal mixing uses edge replication so a constant sequence maps
            // to the same per-frame value for any T
            temporal_.push_back(Conv1dLayer<T>(channels[i], channels[i], 3, rng,
                                               PadMode::Replicate));
            in = channels[i];
        }
        aux_ = Linear<T>(kFeatureDim, classes, rng);
    }

    StreamOutput<T> forward(const Tensor<T>& gait, Mode /*mode*/) const {
        if (gait.ndim() != 4 || gait.shape()[2] != joints_ || gait.shape()[3] != 2)
            throw ValidationError("gait_stream: expected [B,T," + std::to_string(joints_) +
                                  ",2], got " + shape_str(gait.shape()));
        if (gait.shape()[1] < 1) throw ValidationError("gait_stream: needs T >= 1");
        detail::check_input_finite(gait, "gait_stream");
        const std::size_t B = gait.shape()[0], Tn = gait.shape()[1], V = joints_;

        Tensor<T> h = gait;
        for (std::size_t i = 0; i < spatial_.size(); ++i) {
            const std::size_t cin = h.shape()[3];
            const std::size_t cout = spatial_[i].shape()[1];
            // spatial: A_hat * H * W
            h = matmul(reshape(h, {B * Tn * V, cin}), spatial_[i]);
            h = matmul(adj_, reshape(h, {B * Tn, V, cout}));
            // temporal conv along T per joint
            h = reshape(permute(reshape(h, {B, Tn, V, cout}), {0, 2, 3, 1}), {B * V, cout, Tn});
            h = temporal_[i].forward(h);
            h = permute(reshape(h, {B, V, cout, Tn}), {0, 3, 1, 2});
            h = relu(h);
        }
        Tensor<T> feature = reduce_mean(h, {1, 2}); // over frames and joints
        return {feature, softmax(aux_.forward(feature), 1)};
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < spatial_.size(); ++i) {
            reg.add(prefix + ".spatial" + std::to_string(i), spatial_[i]);
            temporal_[i].register_params(reg, prefix + ".temporal" + std::to_string(i));
        }
        aux_.register_params(reg, prefix + ".aux");
    }

    const Tensor<T>& adjacency() const { return adj_; }

private:
    std::size_t joints_;
    Tensor<T> adj_;
    std::vector<Tensor<T>> spatial_;
    std::vector<Conv1dLayer<T>> temporal_;
    Linear<T> aux_;
};

// ---------------------------------------------------------------------------
// fusion of n >= 2 modality features into h1
// ---------------------------------------------------------------------------

template <typename T>
class ModalityFusion {
public:
    ModalityFusion(std::size_t n_modalities, std::size_t classes, FusionMode mode, Rng& rng)
        : mode_(mode) {
        if (n_modalities < 2) throw ValidationError("fusion: needs at least 2 modalities");
        for (std::size_t i = 0; i < n_modalities; ++i)
            proj_.emplace_back(kFeatureDim, classes, rng);
    }

    // element-wise product (or sum, for the additive baseline) of per-modality
    // projections to C dims
    Tensor<T> fuse(const std::vector<Tensor<T>>& features) const {
        if (features.size() < 2) throw ValidationError("fusion: needs at least 2 modalities");
        if (features.size() != proj_.size())
            throw ValidationError("fusion: got " + std::to_string(features.size()) +
                                  " features for " + std::to_string(proj_.size()) +
                                  " projections");
        Tensor<T> h = proj_[0].forward(features[0]);
        for (std::size_t i = 1; i < proj_.size(); ++i) {
            Tensor<T> p = proj_[i].forward(features[i]);
            h = mode_ == FusionMode::Multiplicative ? mul(h, p) : add(h, p);
        }
        return h;
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < proj_.size(); ++i)
            proj_[i].register_params(reg, prefix + ".proj" + std::to_string(i));
    }

    std::size_t modalities() const { return proj_.size(); }

private:
    std::vector<Linear<T>> proj_;
    FusionMode mode_;
};

// ---------------------------------------------------------------------------
// confidence-weighted fusion loss over the per-modality probabilities:
//   -sum_i (p_i^e)^(beta/(n-1)) log p_i^e
// summed over modalities, averaged over each sample's active classes and over
// the batch. Probabilities are clamped to [1e-7, 1] before the log.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> multiplicative_loss(const std::vector<Tensor<T>>& modality_probs,
                              const Tensor<T>& targets, double beta) {
    const std::size_t n = modality_probs.size();
    if (n < 2) throw ValidationError("multiplicative_loss: needs at least 2 modalities");
    if (targets.ndim() != 2)
        throw ValidationError("multiplicative_loss: targets must be [B,C]");
    const std::size_t B = targets.shape()[0], C = targets.shape()[1];

    // constant per-element weights: 1/#active for active classes, 0 otherwise
    Tensor<T> weight_mask({B, C});
    for (std::size_t b = 0; b < B; ++b) {
        T active = T(0);
        for (std::size_t c = 0; c < C; ++c) active += targets.data()[b * C + c];
        if (active == T(0))
            throw ValidationError("multiplicative_loss: empty active-class set in row " +
                                  std::to_string(b));
        for (std::size_t c = 0; c < C; ++c)
            weight_mask.data()[b * C + c] = targets.data()[b * C + c] / active;
    }

    const T expo = static_cast<T>(beta / static_cast<double>(n - 1));
    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (const auto& probs : modality_probs) {
        if (probs.shape() != targets.shape())
            throw ValidationError("multiplicative_loss: probs shape " + shape_str(probs.shape()) +
                                  " vs targets " + shape_str(targets.shape()));
        for (std::size_t b = 0; b < B; ++b) {
            T row = T(0);
            for (std::size_t c = 0; c < C; ++c) row += probs.data()[b * C + c];
            if (std::abs(static_cast<double>(row) - 1.0) > 1e-3)
                throw ValidationError("multiplicative_loss: probability row does not sum to 1");
        }
        Tensor<T> p = clamp(probs, static_cast<T>(1e-7), T(1));
        Tensor<T> term = mul(pow(p, expo), log(p));
        acc = add(acc, sum_all(mul(term, weight_mask)));
    }
    return scale(acc, static_cast<T>(-1.0 / static_cast<double>(B)));
}

} // namespace emorec
