#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "emorec/context2.hpp"
#include "emorec/grad_check.hpp"
#include "emorec/model.hpp"
#include "emorec/synth.hpp"

using namespace emorec;

namespace {

using T64 = Tensor<double>;

T64 scalarize(const T64& t, uint64_t seed = 7) {
    Rng rng(seed);
    T64 w(t.shape());
    for (auto& v : w.data()) v = rng.uniform(-1.0, 1.0);
    return sum_all(mul(t, w));
}

} // namespace

TEST_CASE("compute_mask: zeroing, untouched complement, idempotence") {
    Rng rng(3);
    auto img = random_uniform<float>({20, 20, 3}, rng, 0.1f, 1.0f);

    // full frame -> all zero
    auto full = compute_mask(img, {0, 0, 20, 20});
    for (float v : full.data()) CHECK(v == 0.f);

    // random boxes: inside sums to zero, outside byte-identical
    for (int rep = 0; rep < 25; ++rep) {
        BoundingBox box;
        box.x0 = rng.below(19);
        box.y0 = rng.below(19);
        box.x1 = box.x0 + 1 + rng.below(20 - box.x0);
        box.y1 = box.y0 + 1 + rng.below(20 - box.y0);
        auto masked = compute_mask(img, box);
        for (std::size_t y = 0; y < 20; ++y)
            for (std::size_t x = 0; x < 20; ++x)
                for (std::size_t c = 0; c < 3; ++c) {
                    const float v = masked.data()[(y * 20 + x) * 3 + c];
                    const bool inside = x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1;
                    if (inside)
                        CHECK(v == 0.f);
                    else
                        CHECK(v == img.data()[(y * 20 + x) * 3 + c]);
                }
        // idempotence
        auto twice = compute_mask(masked, box);
        CHECK(twice.data() == masked.data());
    }

    // a box that covers nothing of a probed pixel leaves it unchanged
    auto masked = compute_mask(img, {0, 0, 1, 1});
    CHECK(masked.data()[(5 * 20 + 5) * 3] == img.data()[(5 * 20 + 5) * 3]);

    CHECK_THROWS_AS(compute_mask(img, {4, 4, 4, 9}), ValidationError); // zero area
    CHECK_THROWS_AS(compute_mask(img, {0, 0, 21, 5}), ValidationError);
}

TEST_CASE("abn: zero input gives an all-0.5 attention map") {
    Rng rng(5);
    AbnStream<double> abn(4, {2, 3, 3, 4}, rng, 32, 3);
    auto out = abn.forward(T64::zeros({1, 3, 32, 32}));
    CHECK(out.attention.shape() == Shape{1, 1, 2, 2});
    for (double v : out.attention.data()) CHECK(v == 0.5);
    for (double v : out.attention.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(out.h2.shape() == Shape{1, 4});
}

TEST_CASE("abn: attention forced to zero reduces to backbone+pool+linear") {
    Rng rng(7);
    AbnStream<double> abn(3, {2, 3, 3, 4}, rng, 32, 3);
    ParamRegistry<double> reg;
    abn.register_params(reg, "abn");
    // drive the attention conv to a large negative constant -> sigmoid ~ 0
    for (auto& [name, t] : reg.items) {
        if (name == "abn.att2.weight")
            for (auto& v : t.data()) v = 0.0;
        if (name == "abn.att2.bias")
            for (auto& v : t.data()) v = -60.0;
    }
    Rng drng(8);
    auto x = random_uniform<double>({2, 3, 32, 32}, drng, 0.0, 1.0);
    auto gated = abn.forward(x);
    auto plain = abn.forward_ungated(x);
    for (std::size_t i = 0; i < plain.numel(); ++i)
        CHECK(gated.h2.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-9));
}

TEST_CASE("abn: attention map stays in (0,1) and h2 is finite") {
    Rng rng(9);
    AbnStream<double> abn(5, {2, 3, 3, 4}, rng, 32, 3);
    auto x = random_uniform<double>({2, 3, 32, 32}, rng, 0.0, 1.0);
    auto out = abn.forward(x);
    for (double v : out.attention.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    for (double v : out.h2.data()) CHECK(std::isfinite(v));
    CHECK_THROWS_AS(abn.forward(T64::zeros({1, 3, 16, 16})), ValidationError);
}

TEST_CASE("gating monotonicity: raising one attention cell never shrinks its contribution") {
    // pooled features are linear in (1+M); check the gating algebra directly
    Rng rng(11);
    auto feat = random_uniform<double>({1, 3, 4, 4}, rng, 0.1, 1.0);
    auto gate = [&](double m, std::size_t cell) {
        Tensor<double> M = Tensor<double>::zeros({1, 1, 4, 4});
        M.data()[cell] = m;
        auto pooled = global_avg_pool(mul(feat, add_scalar(M, 1.0)));
        return pooled.data()[0]; // channel 0 pooled magnitude
    };
    for (std::size_t cell : {0ul, 5ul, 15ul}) {
        double prev = gate(0.0, cell);
        for (double m : {0.2, 0.5, 0.9}) {
            const double cur = gate(m, cell);
            CHECK(cur >= prev - 1e-12);
            prev = cur;
        }
    }
}

TEST_CASE("abn gradients match finite differences through the attention gating") {
    Rng rng(13);
    AbnStream<double> abn(3, {2, 2, 3, 3}, rng, 32, 3);
    auto x = random_uniform<double>({1, 3, 32, 32}, rng, 0.0, 1.0);
    auto f = [&](const T64& p) { return scalarize(abn.forward(p).h2, 17); };
    CHECK(grad_check(f, x, 1e-5) < 1e-4);

    ParamRegistry<double> reg;
    abn.register_params(reg, "abn");
    for (const char* name : {"abn.att1.weight", "abn.att2.weight", "abn.percept.weight"}) {
        for (auto& [n, t] : reg.items) {
            if (n != name) continue;
            auto loss_fn = [&]() { return scalarize(abn.forward(x).h2, 17); };
            CHECK(grad_check_param(loss_fn, t) < 1e-4);
        }
    }
}

TEST_CASE("attention localizes a quadrant-planted background signal after training") {
    // all class signal carried by context 2, blobs pinned to quadrant 0
    const auto vocab = LabelVocabulary::groupwalk();
    SynthPlan plan;
    plan.s1 = 0.0;
    plan.s2 = 1.0;
    plan.s3 = 0.0;
    plan.context2_quadrant = 0;
    plan.gait_frames = 2;
    auto ds = synthesize_dataset(23, 64, vocab, plan);

    ModelConfig cfg;
    cfg.classes = 4;
    cfg.enabled_contexts = {1, 2};
    cfg.lr = 5e-3;
    cfg.epochs = 20;
    cfg.batch_size = 8;
    cfg.seed = 23;
    cfg.abn_aux_loss = true; // trains the attention branch directly
    cfg.widths.abn_channels = {4, 6, 8, 8};
    MultiContextModel<float> model(cfg);
    train_model(model, ds);

    // mean attention over the planted quadrant vs the rest, across samples
    NoGradGuard no_grad;
    double planted = 0, rest = 0;
    auto units = ds.units();
    std::vector<std::size_t> idx;
    for (const auto& u : units) idx.push_back(u[0]);
    auto out = model.forward(assemble_batch<float>(ds, idx, cfg), Mode::Eval);
    const std::size_t s = out.attention.shape()[2];
    const std::size_t B = out.attention.shape()[0];
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x) {
                const double v = out.attention.data()[(b * s + y) * s + x];
                if (x < s / 2 && y < s / 2)
                    planted += v;
                else
                    rest += v;
            }
    }
    planted /= static_cast<double>(B * (s / 2) * (s / 2));
    rest /= static_cast<double>(B * (s * s - (s / 2) * (s / 2)));
    INFO("planted quadrant mean " << planted << " vs rest " << rest);
    CHECK(planted > rest);
}
