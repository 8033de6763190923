#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "emorec/errors.hpp"

namespace emorec {

// Per-context feature width (f1, f2) is fixed at 64 by contract.
inline constexpr std::size_t kFeatureDim = 64;
// Depth CNN penultimate layer and GCN hidden linear are fixed widths.
inline constexpr std::size_t kDepthFcWidth = 1000;
inline constexpr std::size_t kGcnFcWidth = 100;

enum class Context3Mode { Depth, Gcn };
enum class FusionMode { Multiplicative, Additive };

// Channel/width knobs. Defaults are sized for CPU-scale training; every value
// is overridable through the config file or CLI flags.
struct StreamWidths {
    std::vector<std::size_t> face_conv{8, 16, 16};
    std::vector<std::size_t> face_fc{128, 96}; // hidden widths; the stream ends at 64
    std::vector<std::size_t> gait_channels{16, 32, 64}; // last one must be 64
    std::vector<std::size_t> abn_channels{4, 6, 8, 8};
    std::vector<std::size_t> depth_channels{4, 6, 8, 8, 16}; // exactly five stages
    std::vector<std::size_t> gcn_hidden{32, 64};             // exactly two graph convs
};

struct ModelConfig {
    std::size_t classes = 4;
    double beta = 0.1;     // confidence exponent of the fusion loss
    double lambda1 = 1.0;  // fusion-loss weight
    double lambda2 = 1.0;  // classification-loss weight
    double mu = 3.0;       // proximity threshold (scene units)
    Context3Mode context3_mode = Context3Mode::Depth;
    FusionMode fusion_mode = FusionMode::Multiplicative;
    std::set<int> enabled_contexts{1, 2, 3};
    bool abn_aux_loss = false;

    double lr = 1e-4;
    std::size_t batch_size = 32; // agents per step for video datasets
    std::size_t epochs = 75;
    uint64_t seed = 0;
    std::size_t threads = 0; // 0 = hardware concurrency

    std::size_t image_size = 224; // spatial input; reduced in verification nets
    std::size_t image_channels = 3;
    std::size_t gait_frames = 6; // default T for synthetic gait sequences

    void validate() const {
        if (classes == 0) throw ValidationError("config: classes must be >= 1");
        if (lambda1 < 0 || lambda2 < 0) throw ValidationError("config: lambda must be >= 0");
        if (beta < 0) throw ValidationError("config: beta must be >= 0");
        if (mu <= 0) throw ValidationError("config: mu must be > 0");
        if (!enabled_contexts.count(1))
            throw ValidationError("config: context 1 is always enabled");
        for (int c : enabled_contexts)
            if (c < 1 || c > 3) throw ValidationError("config: contexts are 1, 2 and 3");
        if (widths.face_conv.size() != 3)
            throw ValidationError("config: face stream uses three conv stages");
        if (widths.face_fc.size() != 2)
            throw ValidationError("config: face stream uses three linear stages (last is 64)");
        if (widths.gait_channels.size() != 3 || widths.gait_channels.back() != kFeatureDim)
            throw ValidationError("config: gait stream uses three blocks ending at 64 channels");
        if (widths.abn_channels.size() != 4)
            throw ValidationError("config: attention backbone uses four conv blocks");
        if (widths.depth_channels.size() != 5)
            throw ValidationError("config: depth stream uses exactly five conv stages");
        if (widths.gcn_hidden.size() != 2)
            throw ValidationError("config: proximity stream uses exactly two graph convs");
        if (image_size % 32 != 0)
            throw ValidationError("config: image size must be divisible by 32");
        if (batch_size == 0 || epochs > 1000000)
            throw ValidationError("config: bad batch size or epoch count");
    }

    StreamWidths widths;
};

} // namespace emorec
