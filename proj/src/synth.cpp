#include "emorec/synth.hpp"

#include <cmath>

#include "emorec/context2.hpp"
#include "emorec/rng.hpp"

namespace emorec {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kNeutralRadius = 2.0;
constexpr double kSceneToPixel = 24.0;

struct ClassPattern {
    std::vector<float> face_template; // [144]
    std::vector<float> gait_offsets;  // [25*2]
    double blob_x = 0, blob_y = 0;    // pixel center of the background blob
    double ring_radius = kNeutralRadius;
};

ClassPattern class_pattern(uint64_t seed, std::size_t c, const SynthPlan& plan) {
    Rng rng(derive_seed(seed, 0xC1A5500 + c));
    ClassPattern p;
    p.face_template.resize(kFaceDim);
    for (auto& v : p.face_template) v = rng.uniform() < 0.5 ? -0.5f : 0.5f;
    p.gait_offsets.resize(kGaitJoints * 2);
    for (auto& v : p.gait_offsets) v = static_cast<float>(rng.uniform(-0.4, 0.4));

    const int quadrant =
        plan.context2_quadrant >= 0 ? plan.context2_quadrant % 4 : static_cast<int>(c % 4);
    const double qx = (quadrant % 2) * 112.0;
    const double qy = (quadrant / 2) * 112.0;
    p.blob_x = qx + rng.uniform(30.0, 82.0);
    p.blob_y = qy + rng.uniform(30.0, 82.0);

    // alternate tight/wide crowd rings so consecutive same-context classes
    // separate well
    std::size_t rank = 0;
    for (std::size_t cc = 0; cc < c; ++cc)
        if (assigned_context(cc, plan) == assigned_context(c, plan)) ++rank;
    p.ring_radius = (rank % 2 == 0 ? 1.0 : 3.1) + 0.12 * static_cast<double>(rank / 2) +
                    rng.uniform(0.0, 0.1);
    return p;
}

// fixed base skeleton shared by every sample of a dataset
std::vector<float> base_skeleton(uint64_t seed) {
    Rng rng(derive_seed(seed, 0x5CE1E70));
    std::vector<float> bp(kGaitJoints * 2);
    for (std::size_t j = 0; j < kGaitJoints; ++j) {
        bp[j * 2] = static_cast<float>(rng.uniform(-0.15, 0.15));
        bp[j * 2 + 1] = static_cast<float>(j) / static_cast<float>(kGaitJoints);
    }
    return bp;
}

std::vector<int> draw_labels(Rng& rng, std::size_t C, const SynthPlan& plan) {
    std::vector<int> labels(C, 0);
    const auto primary = rng.below(C);
    const double u = rng.uniform();
    auto second = rng.below(C - 1 > 0 ? C - 1 : 1);
    labels[primary] = 1;
    if (C > 1 && u < plan.second_label_prob) {
        if (second >= primary) ++second;
        labels[second] = 1;
    }
    return labels;
}

} // namespace

int assigned_context(std::size_t class_index, const SynthPlan& plan) {
    std::vector<int> active;
    if (plan.s1 > 0) active.push_back(1);
    if (plan.s2 > 0) active.push_back(2);
    if (plan.s3 > 0) active.push_back(3);
    if (active.empty()) return 0;
    return active[class_index % active.size()];
}

namespace {

Sample make_sample(uint64_t seed, std::size_t agent_index, std::size_t frame,
                   const std::vector<int>& labels, const std::vector<ClassPattern>& patterns,
                   const std::vector<float>& base_pose, const LabelVocabulary& vocab,
                   const SynthPlan& plan) {
    const std::size_t C = vocab.size();
    Rng rng(derive_seed(seed, 1 + agent_index * 97 + frame));
    Sample s;
    s.id = plan.frames_per_agent > 1
               ? "agent" + std::to_string(agent_index) + "#" + std::to_string(frame)
               : "sample" + std::to_string(agent_index);
    s.labels = labels;

    auto ctx_active = [&](int ctx) {
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < C; ++c)
            if (labels[c] && assigned_context(c, plan) == ctx) out.push_back(c);
        return out;
    };

    // --- face: noise plus class templates ---
    s.face = Tensor<float>({kFaceDim});
    for (auto& v : s.face.data()) v = static_cast<float>(rng.normal(0.0, 0.25));
    for (std::size_t c : ctx_active(1))
        for (std::size_t i = 0; i < kFaceDim; ++i)
            s.face.data()[i] += static_cast<float>(plan.s1 * 0.6) * patterns[c].face_template[i];

    // --- gait: base pose, walk cycle, noise, class offsets ---
    const std::size_t T = plan.gait_frames;
    s.gait = Tensor<float>({T, kGaitJoints, 2});
    const double phase0 = rng.uniform(0.0, 1.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < kGaitJoints; ++j) {
            const double ph = kTwoPi * (static_cast<double>(t) / static_cast<double>(T) + phase0 +
                                        0.07 * static_cast<double>(j));
            float x = base_pose[j * 2] + 0.08f * static_cast<float>(std::sin(ph));
            float y = base_pose[j * 2 + 1] + 0.05f * static_cast<float>(std::cos(ph));
            x += static_cast<float>(rng.normal(0.0, 0.04));
            y += static_cast<float>(rng.normal(0.0, 0.04));
            s.gait.data()[(t * kGaitJoints + j) * 2] = x;
            s.gait.data()[(t * kGaitJoints + j) * 2 + 1] = y;
        }
    }
    for (std::size_t c : ctx_active(1)) {
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t i = 0; i < kGaitJoints * 2; ++i)
                s.gait.data()[t * kGaitJoints * 2 + i] +=
                    static_cast<float>(plan.s1 * 0.5) * patterns[c].gait_offsets[i];
    }

    // --- image: gradient background, noise, class blobs, then agent masking ---
    Tensor<float> raw({kImageSize, kImageSize, kImageChannels});
    for (std::size_t y = 0; y < kImageSize; ++y) {
        for (std::size_t x = 0; x < kImageSize; ++x) {
            const float base =
                0.25f + 0.12f * static_cast<float>(x) / static_cast<float>(kImageSize);
            for (std::size_t ch = 0; ch < kImageChannels; ++ch)
                raw.data()[(y * kImageSize + x) * kImageChannels + ch] =
                    base + static_cast<float>(rng.uniform(-0.05, 0.05));
        }
    }
    for (std::size_t c : ctx_active(2)) {
        const double amp = 0.5 * plan.s2;
        const double bx = patterns[c].blob_x, by = patterns[c].blob_y;
        const int x_lo = std::max(0, static_cast<int>(bx) - 36);
        const int x_hi = std::min<int>(kImageSize, static_cast<int>(bx) + 36);
        const int y_lo = std::max(0, static_cast<int>(by) - 36);
        const int y_hi = std::min<int>(kImageSize, static_cast<int>(by) + 36);
        for (int y = y_lo; y < y_hi; ++y) {
            for (int x = x_lo; x < x_hi; ++x) {
                const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                const float add = static_cast<float>(amp * std::exp(-d2 / (2.0 * 10.0 * 10.0)));
                for (std::size_t ch = 0; ch < kImageChannels; ++ch)
                    raw.data()[(static_cast<std::size_t>(y) * kImageSize +
                                static_cast<std::size_t>(x)) *
                                   kImageChannels +
                               ch] += add;
            }
        }
    }
    // primary agent: textured rectangle near the center, later zeroed by the mask
    BoundingBox bbox;
    bbox.x0 = 92 + rng.below(9);
    bbox.y0 = 72 + rng.below(9);
    bbox.x1 = bbox.x0 + 40 + rng.below(8);
    bbox.y1 = bbox.y0 + 64 + rng.below(12);
    for (std::size_t y = bbox.y0; y < bbox.y1; ++y)
        for (std::size_t x = bbox.x0; x < bbox.x1; ++x)
            for (std::size_t ch = 0; ch < kImageChannels; ++ch)
                raw.data()[(y * kImageSize + x) * kImageChannels + ch] = 0.55f;
    for (auto& v : raw.data()) v = std::min(1.0f, std::max(0.0f, v));
    s.masked_image = compute_mask(raw, bbox);

    // --- scene: primary agent at the origin, others on a class-dependent ring ---
    const std::size_t others = 2 + rng.below(4);
    double ring = kNeutralRadius;
    const auto active3 = ctx_active(3);
    if (!active3.empty()) {
        double target = 0;
        for (std::size_t c : active3) target += patterns[c].ring_radius;
        target /= static_cast<double>(active3.size());
        ring = kNeutralRadius + plan.s3 * (target - kNeutralRadius);
    }
    s.agents = Tensor<float>({others + 1, 2});
    s.agents.data()[0] = static_cast<float>(rng.uniform(-0.15, 0.15));
    s.agents.data()[1] = static_cast<float>(rng.uniform(-0.15, 0.15));
    for (std::size_t k = 0; k < others; ++k) {
        const double angle = rng.uniform(0.0, kTwoPi);
        const double radius = ring * (0.85 + rng.uniform(0.0, 0.3));
        s.agents.data()[(k + 1) * 2] =
            s.agents.data()[0] + static_cast<float>(radius * std::cos(angle));
        s.agents.data()[(k + 1) * 2 + 1] =
            s.agents.data()[1] + static_cast<float>(radius * std::sin(angle));
    }

    // --- depth: background gradient plus one disk per agent ---
    s.depth = Tensor<float>({kImageSize, kImageSize});
    for (std::size_t y = 0; y < kImageSize; ++y)
        for (std::size_t x = 0; x < kImageSize; ++x)
            s.depth.data()[y * kImageSize + x] =
                0.85f + 0.1f * static_cast<float>(y) / static_cast<float>(kImageSize) +
                static_cast<float>(rng.uniform(-0.03, 0.03));
    const std::size_t n_agents = s.agents.shape()[0];
    for (std::size_t k = 0; k < n_agents; ++k) {
        const double ax = s.agents.data()[k * 2], ay = s.agents.data()[k * 2 + 1];
        const double px = std::clamp(112.0 + kSceneToPixel * ax, 10.0, 214.0);
        const double py = std::clamp(112.0 + kSceneToPixel * ay, 10.0, 214.0);
        const double d0 = std::sqrt((ax - s.agents.data()[0]) * (ax - s.agents.data()[0]) +
                                    (ay - s.agents.data()[1]) * (ay - s.agents.data()[1]));
        const float value = static_cast<float>(0.25 + 0.1 * d0);
        for (int dy = -8; dy <= 8; ++dy) {
            for (int dx = -8; dx <= 8; ++dx) {
                if (dx * dx + dy * dy > 64) continue;
                const auto yy = static_cast<std::size_t>(py + dy);
                const auto xx = static_cast<std::size_t>(px + dx);
                float& cell = s.depth.data()[yy * kImageSize + xx];
                cell = std::min(cell, value);
            }
        }
    }
    return s;
}

} // namespace

Dataset synthesize_dataset(uint64_t seed, std::size_t n_samples, const LabelVocabulary& vocab,
                           const SynthPlan& plan) {
    vocab.validate();
    if (n_samples < 1) throw ValidationError("synthesize_dataset: need n_samples >= 1");
    if (plan.s1 < 0 || plan.s1 > 1 || plan.s2 < 0 || plan.s2 > 1 || plan.s3 < 0 || plan.s3 > 1)
        throw ValidationError("synthesize_dataset: strengths must be in [0,1]");
    if (plan.gait_frames < 1 || plan.frames_per_agent < 1)
        throw ValidationError("synthesize_dataset: frame counts must be >= 1");

    const std::size_t C = vocab.size();
    std::vector<ClassPattern> patterns;
    patterns.reserve(C);
    for (std::size_t c = 0; c < C; ++c) patterns.push_back(class_pattern(seed, c, plan));
    const auto base_pose = base_skeleton(seed);

    Dataset ds;
    ds.vocabulary = vocab;
    ds.kind = plan.frames_per_agent > 1 ? DatasetKind::Video : DatasetKind::Image;
    for (std::size_t i = 0; i < n_samples; ++i) {
        Rng label_rng(derive_seed(seed, 0x1ABE15 + i));
        const auto labels = draw_labels(label_rng, C, plan);
        for (std::size_t f = 0; f < plan.frames_per_agent; ++f)
            ds.samples.push_back(make_sample(seed, i, f, labels, patterns, base_pose, vocab, plan));
    }
    ds.validate();
    return ds;
}

std::vector<double> planted_statistics(const Sample& sample, uint64_t seed,
                                       const LabelVocabulary& vocab, const SynthPlan& plan) {
    const std::size_t C = vocab.size();
    std::vector<double> stats(C, 0.0);

    double image_mean = 0.0;
    for (float v : sample.masked_image.data()) image_mean += v;
    image_mean /= static_cast<double>(sample.masked_image.numel());

    const std::size_t n_agents = sample.agents.shape()[0];
    double mean_dist = 0.0;
    if (n_agents > 1) {
        for (std::size_t k = 1; k < n_agents; ++k) {
            const double dx = sample.agents.data()[k * 2] - sample.agents.data()[0];
            const double dy = sample.agents.data()[k * 2 + 1] - sample.agents.data()[1];
            mean_dist += std::sqrt(dx * dx + dy * dy);
        }
        mean_dist /= static_cast<double>(n_agents - 1);
    }

    for (std::size_t c = 0; c < C; ++c) {
        const ClassPattern p = class_pattern(seed, c, plan);
        switch (assigned_context(c, plan)) {
            case 1: {
                double dot = 0.0;
                for (std::size_t i = 0; i < kFaceDim; ++i)
                    dot += sample.face.data()[i] * p.face_template[i];
                stats[c] = dot / static_cast<double>(kFaceDim);
                break;
            }
            case 2: {
                double local = 0.0;
                std::size_t count = 0;
                const int bx = static_cast<int>(p.blob_x), by = static_cast<int>(p.blob_y);
                for (int y = std::max(0, by - 12); y < std::min<int>(kImageSize, by + 12); ++y) {
                    for (int x = std::max(0, bx - 12); x < std::min<int>(kImageSize, bx + 12);
                         ++x) {
                        for (std::size_t ch = 0; ch < kImageChannels; ++ch)
                            local += sample.masked_image
                                         .data()[(static_cast<std::size_t>(y) * kImageSize +
                                                  static_cast<std::size_t>(x)) *
                                                     kImageChannels +
                                                 ch];
                        count += kImageChannels;
                    }
                }
                stats[c] = local / static_cast<double>(count) - image_mean;
                break;
            }
            case 3: {
                const double target =
                    kNeutralRadius + plan.s3 * (p.ring_radius - kNeutralRadius);
                stats[c] = -std::abs(mean_dist - target);
                break;
            }
            default:
                stats[c] = 0.0;
        }
    }
    return stats;
}

} // namespace emorec
