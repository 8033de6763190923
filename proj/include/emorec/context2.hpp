#pragma once

#include <array>
#include <vector>

#include "emorec/config.hpp"
#include "emorec/dataset.hpp"
#include "emorec/layers.hpp"
#include "emorec/ops.hpp"

// Context 2: the primary agent is zeroed out of the frame and the remaining
// scene is encoded by a small attention-branch classifier whose attention map
// can be dumped for inspection.

namespace emorec {

struct BoundingBox {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0; // inclusive-exclusive pixel range

    void validate(std::size_t width, std::size_t height) const {
        if (x0 >= x1 || y0 >= y1)
            throw ValidationError("bbox: degenerate box (zero area)");
        if (x1 > width || y1 > height)
            throw ValidationError("bbox: exceeds image bounds");
    }
};

// Zero every channel inside the box; all other pixels are bit-identical.
// Image layout is [H,W,Ch].
template <typename T>
Tensor<T> compute_mask(const Tensor<T>& image, const BoundingBox& bbox) {
    if (image.ndim() != 3)
        throw ValidationError("compute_mask: expected [H,W,Ch], got " + shape_str(image.shape()));
    const std::size_t H = image.shape()[0], W = image.shape()[1], Ch = image.shape()[2];
    bbox.validate(W, H);
    Tensor<T> out = image.detach();
    for (std::size_t y = bbox.y0; y < bbox.y1; ++y)
        for (std::size_t x = bbox.x0; x < bbox.x1; ++x)
            for (std::size_t c = 0; c < Ch; ++c) out.data()[(y * W + x) * Ch + c] = T(0);
    return out;
}

template <typename T>
struct AbnOutput {
    Tensor<T> h2;         // [B,C]
    Tensor<T> attention;  // [B,1,s,s], values in (0,1)
    Tensor<T> aux_logits; // [B,C], pooled attention-branch logits
};

// Backbone of four conv+relu+pool blocks; an attention branch produces a
// single-channel map M, and the perception branch pools feature*(1+M).
template <typename T>
class AbnStream {
public:
    AbnStream(std::size_t classes, const std::vector<std::size_t>& channels, Rng& rng,
              std::size_t image_size = kImageSize, std::size_t in_channels = kImageChannels)
        : image_size_(image_size), in_channels_(in_channels) {
        if (image_size % 16 != 0)
            throw ValidationError("abn: image size must be divisible by 16");
        std::size_t in = in_channels;
        for (std::size_t i = 0; i < 4; ++i) {
            conv_[i] = Conv2dLayer<T>(in, channels[i], 3, rng);
            in = channels[i];
        }
        att1_ = Conv2dLayer<T>(in, classes, 1, rng);
        att2_ = Conv2dLayer<T>(classes, 1, 1, rng);
        percept_ = Linear<T>(in, classes, rng);
    }

    Tensor<T> backbone(const Tensor<T>& image) const {
        if (image.ndim() != 4 || image.shape()[1] != in_channels_ ||
            image.shape()[2] != image_size_ || image.shape()[3] != image_size_)
            throw ValidationError("abn: expected [B," + std::to_string(in_channels_) + "," +
                                  std::to_string(image_size_) + "," + std::to_string(image_size_) +
                                  "], got " + shape_str(image.shape()));
        detail::check_input_finite(image, "abn");
        Tensor<T> h = image;
        for (std::size_t i = 0; i < 4; ++i) h = maxpool2d(relu(conv_[i].forward(h)), 2);
        return h;
    }

    // plain backbone -> pool -> linear, the (1+M)=1 path
    Tensor<T> forward_ungated(const Tensor<T>& image) const {
        return percept_.forward(global_avg_pool(backbone(image)));
    }

    AbnOutput<T> forward(const Tensor<T>& image) const {
        Tensor<T> h = backbone(image);

        Tensor<T> att_feat = att1_.forward(h);               // [B,C,s,s]
        Tensor<T> attention = sigmoid(att2_.forward(att_feat)); // [B,1,s,s]
        Tensor<T> aux_logits = global_avg_pool(att_feat);    // [B,C]

        Tensor<T> gated = mul(h, add_scalar(attention, T(1)));
        Tensor<T> h2 = percept_.forward(global_avg_pool(gated));
        return {h2, attention, aux_logits};
    }

    void register_params(ParamRegistry<T>& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < 4; ++i)
            conv_[i].register_params(reg, prefix + ".conv" + std::to_string(i));
        att1_.register_params(reg, prefix + ".att1");
        att2_.register_params(reg, prefix + ".att2");
        percept_.register_params(reg, prefix + ".percept");
    }

    std::size_t map_size() const { return image_size_ / 16; }

private:
    std::size_t image_size_, in_channels_;
    std::array<Conv2dLayer<T>, 4> conv_;
    Conv2dLayer<T> att1_, att2_;
    Linear<T> percept_;
};

} // namespace emorec
