#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "emorec/dataset.hpp"
#include "emorec/emt1.hpp"
#include "emorec/rng.hpp"
#include "emorec/synth.hpp"
#include "oracles.hpp"

using namespace emorec;
namespace fs = std::filesystem;

namespace {

std::vector<AnnotationRecord> records_for(const std::vector<std::string>& raw,
                                          const std::string& agent = "a0") {
    std::vector<AnnotationRecord> out;
    for (std::size_t i = 0; i < raw.size(); ++i)
        out.push_back({agent, "ann" + std::to_string(i), parse_raw_label(raw[i])});
    return out;
}

std::pair<std::vector<std::vector<double>>, std::vector<std::vector<int>>> stats_and_labels(
    const Dataset& ds, uint64_t seed, const SynthPlan& plan) {
    std::vector<std::vector<double>> stats;
    std::vector<std::vector<int>> labels;
    for (const auto& s : ds.samples) {
        stats.push_back(planted_statistics(s, seed, ds.vocabulary, plan));
        labels.push_back(s.labels);
    }
    return {stats, labels};
}

} // namespace

TEST_CASE("vocabulary presets") {
    const auto emotic = LabelVocabulary::emotic();
    CHECK(emotic.size() == 26);
    CHECK(emotic.names.front() == "Affection");
    CHECK(emotic.names.back() == "Yearning");
    emotic.validate();

    const auto gw = LabelVocabulary::groupwalk();
    CHECK(gw.names == std::vector<std::string>{"Angry", "Happy", "Neutral", "Sad"});
    CHECK(gw.index_of("Neutral") == 2);
    CHECK_THROWS_AS(gw.index_of("Calm"), ValidationError);

    LabelVocabulary dup{{"A", "A"}};
    CHECK_THROWS_AS(dup.validate(), ValidationError);
}

TEST_CASE("annotation aggregation: worked examples") {
    const auto vocab = LabelVocabulary::groupwalk();

    // unanimous: ten Extremely Happy
    {
        auto recs = records_for(std::vector<std::string>(10, "Extremely Happy"));
        auto scores = annotation_scores(recs, vocab).at("a0");
        CHECK(scores == std::vector<double>{0, 20, 0, 0});
        CHECK(aggregate_annotations(recs, vocab).at("a0") == std::vector<int>{0, 1, 0, 0});
    }
    // Extremely Happy + Somewhat Happy + Neutral -> [0,3,1,0] -> [0,1,0,0]
    {
        auto recs = records_for({"Extremely Happy", "Somewhat Happy", "Neutral"});
        auto scores = annotation_scores(recs, vocab).at("a0");
        CHECK(scores == std::vector<double>{0, 3, 1, 0});
        CHECK(aggregate_annotations(recs, vocab).at("a0") == std::vector<int>{0, 1, 0, 0});
    }
    // Somewhat Sad + Neutral: tie at max -> both labeled
    {
        auto recs = records_for({"Somewhat Sad", "Neutral"});
        auto scores = annotation_scores(recs, vocab).at("a0");
        CHECK(scores == std::vector<double>{0, 0, 1, 1});
        CHECK(aggregate_annotations(recs, vocab).at("a0") == std::vector<int>{0, 0, 1, 1});
    }

    CHECK_THROWS_AS(parse_raw_label("Very Happy"), ValidationError);
    CHECK_THROWS_AS(aggregate_annotations({}, vocab), ValidationError);
    CHECK_THROWS_AS(aggregate_annotations(records_for({"Neutral"}), LabelVocabulary::emotic()),
                    ValidationError);
}

TEST_CASE("aggregation is order invariant; one annotator moves scores by <= 2") {
    const auto vocab = LabelVocabulary::groupwalk();
    Rng rng(13);
    const std::vector<std::string> pool = {
        "Somewhat Happy", "Extremely Happy", "Somewhat Sad",  "Extremely Sad",
        "Somewhat Angry", "Extremely Angry", "Neutral",
    };
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<std::string> raw;
        const std::size_t n = 1 + rng.below(9);
        for (std::size_t i = 0; i < n; ++i) raw.push_back(pool[rng.below(pool.size())]);
        auto recs = records_for(raw);
        const auto base = aggregate_annotations(recs, vocab).at("a0");
        const auto base_scores = annotation_scores(recs, vocab).at("a0");

        auto shuffled = recs;
        for (std::size_t i = shuffled.size(); i-- > 1;)
            std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
        CHECK(aggregate_annotations(shuffled, vocab).at("a0") == base);

        // label vector is binary with at least one positive
        int positives = 0;
        for (int v : base) {
            CHECK((v == 0 || v == 1));
            positives += v;
        }
        CHECK(positives >= 1);

        // adding one more record moves each score component by at most 2
        auto extended = recs;
        extended.push_back({"a0", "extra", parse_raw_label(pool[rng.below(pool.size())])});
        const auto ext_scores = annotation_scores(extended, vocab).at("a0");
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(std::abs(ext_scores[c] - base_scores[c]) <= 2.0);
    }
}

TEST_CASE("synthesize_dataset determinism: same seed, bit-identical") {
    const auto vocab = LabelVocabulary::groupwalk();
    SynthPlan plan;
    auto a = synthesize_dataset(11, 4, vocab, plan);
    auto b = synthesize_dataset(11, 4, vocab, plan);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].id == b.samples[i].id);
        CHECK(a.samples[i].labels == b.samples[i].labels);
        CHECK(a.samples[i].face.data() == b.samples[i].face.data());
        CHECK(a.samples[i].gait.data() == b.samples[i].gait.data());
        CHECK(a.samples[i].masked_image.data() == b.samples[i].masked_image.data());
        CHECK(a.samples[i].depth.data() == b.samples[i].depth.data());
        CHECK(a.samples[i].agents.data() == b.samples[i].agents.data());
    }
    auto c = synthesize_dataset(12, 4, vocab, plan);
    CHECK(a.samples[0].face.data() != c.samples[0].face.data());
}

TEST_CASE("planted probe: strong signal reaches mAP >= 0.9 on 512 samples") {
    const auto vocab = LabelVocabulary::groupwalk();
    SynthPlan plan; // strengths (1,1,1)
    auto ds = synthesize_dataset(42, 512, vocab, plan);
    auto [stats, labels] = stats_and_labels(ds, 42, plan);
    const double map = oracles::probe_map(stats, labels);
    INFO("probe mAP = " << map);
    CHECK(map >= 0.9);
}

TEST_CASE("zero signal strengths: probe stays near the chance baseline") {
    const auto vocab = LabelVocabulary::groupwalk();
    SynthPlan plan;
    plan.s1 = plan.s2 = plan.s3 = 0.0;
    auto ds = synthesize_dataset(7, 256, vocab, plan);
    auto [stats, labels] = stats_and_labels(ds, 7, plan);
    const double map = oracles::probe_map(stats, labels);

    // chance baseline: expected AP of a label-independent ranking ~ prevalence
    double chance = 0.0;
    for (std::size_t c = 0; c < vocab.size(); ++c) {
        double pos = 0;
        for (const auto& l : labels) pos += l[c];
        chance += pos / static_cast<double>(labels.size());
    }
    chance /= static_cast<double>(vocab.size());
    INFO("probe mAP = " << map << ", chance = " << chance);
    CHECK(std::abs(map - chance) < 0.1);
}

TEST_CASE("planted probe mAP is monotone in signal strength (3 seeds)") {
    // held-out probe, on a ladder below the saturation point
    const auto vocab = LabelVocabulary::groupwalk();
    for (uint64_t seed : {5ull, 6ull, 7ull}) {
        double prev = -1.0;
        for (double s : {0.05, 0.1, 0.2, 0.3}) {
            SynthPlan plan;
            plan.s1 = plan.s2 = plan.s3 = s;
            auto ds = synthesize_dataset(seed, 192, vocab, plan);
            auto [stats, labels] = stats_and_labels(ds, seed, plan);
            const double map = oracles::probe_map_holdout(stats, labels);
            INFO("seed " << seed << " strength " << s << " mAP " << map);
            CHECK(map > prev);
            prev = map;
        }
    }
}

TEST_CASE("split: ratios, determinism, disjointness, video grouping") {
    const auto vocab = LabelVocabulary::groupwalk();
    SynthPlan plan;
    plan.gait_frames = 2;
    auto ds = synthesize_dataset(3, 100, vocab, plan);

    auto [train, test] = split(ds, 0.85, 0.15, 99);
    CHECK(train.samples.size() == 85);
    CHECK(test.samples.size() == 15);

    auto [train2, test2] = split(ds, 0.85, 0.15, 99);
    for (std::size_t i = 0; i < train.samples.size(); ++i)
        CHECK(train.samples[i].id == train2.samples[i].id);

    std::set<std::string> seen;
    for (const auto& s : train.samples) seen.insert(s.id);
    for (const auto& s : test.samples) CHECK(!seen.count(s.id));
    CHECK(train.samples.size() + test.samples.size() == ds.samples.size());

    CHECK_THROWS_AS(split(ds, 1.0, 0.0, 1), ValidationError);
    CHECK_THROWS_AS(split(ds, 0.5, 0.4, 1), ValidationError);

    // video: agents stay whole
    SynthPlan vplan;
    vplan.frames_per_agent = 3;
    vplan.gait_frames = 2;
    auto vds = synthesize_dataset(4, 20, vocab, vplan);
    CHECK(vds.kind == DatasetKind::Video);
    CHECK(vds.samples.size() == 60);
    auto [vtrain, vtest] = split(vds, 0.8, 0.2, 5);
    CHECK(vtrain.samples.size() % 3 == 0);
    CHECK(vtest.samples.size() % 3 == 0);
    std::set<std::string> train_agents, test_agents;
    for (const auto& s : vtrain.samples) train_agents.insert(s.agent_id());
    for (const auto& s : vtest.samples) test_agents.insert(s.agent_id());
    for (const auto& a : test_agents) CHECK(!train_agents.count(a));
}

TEST_CASE("manifest round-trip is element-exact; malformed inputs are rejected by name") {
    const auto vocab = LabelVocabulary::groupwalk();
    SynthPlan plan;
    plan.gait_frames = 2;
    auto ds = synthesize_dataset(21, 3, vocab, plan);

    const fs::path dir = fs::temp_directory_path() / "emorec_ds_test";
    fs::remove_all(dir);
    save_dataset(ds, dir);
    auto loaded = load_dataset(dir / "manifest.json");
    REQUIRE(loaded.samples.size() == ds.samples.size());
    CHECK(loaded.vocabulary == ds.vocabulary);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(loaded.samples[i].face.data() == ds.samples[i].face.data());
        CHECK(loaded.samples[i].gait.data() == ds.samples[i].gait.data());
        CHECK(loaded.samples[i].masked_image.data() == ds.samples[i].masked_image.data());
        CHECK(loaded.samples[i].depth.data() == ds.samples[i].depth.data());
        CHECK(loaded.samples[i].agents.data() == ds.samples[i].agents.data());
        CHECK(loaded.samples[i].labels == ds.samples[i].labels);
    }

    // face vector of length 143 -> rejection naming the sample
    {
        Tensor<float> bad({143});
        write_emt1(dir / "sample_1_face.emt1", bad);
        try {
            load_dataset(dir / "manifest.json");
            FAIL("expected rejection");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find(ds.samples[1].id) != std::string::npos);
        }
        write_emt1(dir / "sample_1_face.emt1", ds.samples[1].face);
    }
    // missing file -> rejection naming the sample
    {
        fs::rename(dir / "sample_2_depth.emt1", dir / "sample_2_depth.bak");
        try {
            load_dataset(dir / "manifest.json");
            FAIL("expected rejection");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find(ds.samples[2].id) != std::string::npos);
        }
        fs::rename(dir / "sample_2_depth.bak", dir / "sample_2_depth.emt1");
    }
    // duplicate sample id
    {
        Dataset dup = ds;
        dup.samples.push_back(dup.samples[0]);
        CHECK_THROWS_AS(dup.validate(), ValidationError);
    }
    // labels outside {0,1} and no-positive labels
    {
        Dataset bad = ds;
        bad.samples[0].labels[0] = 2;
        CHECK_THROWS_AS(bad.validate(), ValidationError);
        bad.samples[0].labels = {0, 0, 0, 0};
        CHECK_THROWS_AS(bad.validate(), ValidationError);
    }
    // empty dataset is valid
    {
        Dataset empty{vocab, DatasetKind::Image, {}};
        empty.validate();
        CHECK(empty.units().empty());
    }
    fs::remove_all(dir);
}
