#include "emorec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "emorec/emt1.hpp"
#include "emorec/rng.hpp"

namespace emorec {

using nlohmann::json;

int LabelVocabulary::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ValidationError("vocabulary: unknown label name '" + name + "'");
}

void LabelVocabulary::validate() const {
    if (names.empty()) throw ValidationError("vocabulary: zero classes");
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw ValidationError("vocabulary: empty label name");
        if (!seen.insert(n).second)
            throw ValidationError("vocabulary: duplicate label name '" + n + "'");
    }
}

LabelVocabulary LabelVocabulary::emotic() {
    return {{
        "Affection",    "Anger",      "Annoyance",  "Anticipation", "Aversion",
        "Confidence",   "Disapproval", "Disconnection", "Disquietment", "Doubt/Confusion",
        "Embarrassment", "Engagement", "Esteem",     "Excitement",   "Fatigue",
        "Fear",         "Happiness",  "Pain",       "Peace",        "Pleasure",
        "Sadness",      "Sensitivity", "Suffering",  "Surprise",     "Sympathy",
        "Yearning",
    }};
}

LabelVocabulary LabelVocabulary::groupwalk() { return {{"Angry", "Happy", "Neutral", "Sad"}}; }

namespace {

void check_shape(const Tensor<float>& t, const Shape& want, const std::string& field,
                 const std::string& id) {
    if (t.shape() != want)
        throw ValidationError("sample '" + id + "': " + field + " has shape " +
                              shape_str(t.shape()) + ", expected " + shape_str(want));
}

void check_finite_range(const Tensor<float>& t, float lo, float hi, const std::string& field,
                        const std::string& id) {
    for (float v : t.data()) {
        if (!std::isfinite(v))
            throw ValidationError("sample '" + id + "': non-finite value in " + field);
        if (v < lo || v > hi)
            throw ValidationError("sample '" + id + "': " + field + " value " +
                                  std::to_string(v) + " outside [" + std::to_string(lo) + "," +
                                  std::to_string(hi) + "]");
    }
}

void validate_sample(const Sample& s, std::size_t classes) {
    check_shape(s.face, {kFaceDim}, "face", s.id);
    for (float v : s.face.data())
        if (!std::isfinite(v)) throw ValidationError("sample '" + s.id + "': non-finite face");
    if (s.gait.ndim() != 3 || s.gait.dim(0) < 1 || s.gait.dim(1) != kGaitJoints ||
        s.gait.dim(2) != 2)
        throw ValidationError("sample '" + s.id + "': gait has shape " + shape_str(s.gait.shape()) +
                              ", expected [T,25,2] with T>=1");
    for (float v : s.gait.data())
        if (!std::isfinite(v)) throw ValidationError("sample '" + s.id + "': non-finite gait");
    check_shape(s.masked_image, {kImageSize, kImageSize, kImageChannels}, "masked_image", s.id);
    check_finite_range(s.masked_image, 0.f, 1.f, "masked_image", s.id);
    check_shape(s.depth, {kImageSize, kImageSize}, "depth", s.id);
    for (float v : s.depth.data()) {
        if (!std::isfinite(v) || v < 0.f)
            throw ValidationError("sample '" + s.id + "': depth must be finite and >= 0");
    }
    if (s.agents.ndim() != 2 || s.agents.dim(0) < 1 || s.agents.dim(1) != 2)
        throw ValidationError("sample '" + s.id + "': agents has shape " +
                              shape_str(s.agents.shape()) + ", expected [n,2] with n>=1");
    for (float v : s.agents.data())
        if (!std::isfinite(v)) throw ValidationError("sample '" + s.id + "': non-finite agents");
    if (s.labels.size() != classes)
        throw ValidationError("sample '" + s.id + "': " + std::to_string(s.labels.size()) +
                              " labels for " + std::to_string(classes) + " classes");
    int positives = 0;
    for (int v : s.labels) {
        if (v != 0 && v != 1)
            throw ValidationError("sample '" + s.id + "': labels must be 0 or 1");
        positives += v;
    }
    if (positives == 0)
        throw ValidationError("sample '" + s.id + "': no positive label");
}

} // namespace

void Dataset::validate() const {
    vocabulary.validate();
    std::unordered_set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.id).second)
            throw ValidationError("dataset: duplicate sample id '" + s.id + "'");
        validate_sample(s, classes());
    }
}

std::vector<std::vector<std::size_t>> Dataset::units() const {
    std::vector<std::vector<std::size_t>> groups;
    if (kind == DatasetKind::Image) {
        groups.reserve(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) groups.push_back({i});
        return groups;
    }
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string aid = samples[i].agent_id();
        auto it = slot.find(aid);
        if (it == slot.end()) {
            slot.emplace(aid, groups.size());
            groups.push_back({i});
        } else {
            groups[it->second].push_back(i);
        }
    }
    return groups;
}

namespace {

Tensor<float> load_tensor(const std::filesystem::path& base, const std::string& rel,
                          const std::string& id, const std::string& field) {
    const auto path = base / rel;
    if (!std::filesystem::exists(path))
        throw ValidationError("sample '" + id + "': missing " + field + " file " + path.string());
    return read_emt1(path).as_f32();
}

} // namespace

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("manifest: cannot open " + manifest_path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("manifest: invalid JSON: " + std::string(e.what()));
    }

    Dataset ds;
    try {
        ds.vocabulary.names = doc.at("vocabulary").get<std::vector<std::string>>();
        const std::string kind = doc.at("kind").get<std::string>();
        if (kind == "image")
            ds.kind = DatasetKind::Image;
        else if (kind == "video")
            ds.kind = DatasetKind::Video;
        else
            throw ValidationError("manifest: kind must be 'image' or 'video', got '" + kind + "'");

        const auto base = manifest_path.parent_path();
        for (const auto& js : doc.at("samples")) {
            Sample s;
            s.id = js.at("id").get<std::string>();
            s.face = load_tensor(base, js.at("face").get<std::string>(), s.id, "face");
            s.gait = load_tensor(base, js.at("gait").get<std::string>(), s.id, "gait");
            s.masked_image =
                load_tensor(base, js.at("masked_image").get<std::string>(), s.id, "masked_image");
            s.depth = load_tensor(base, js.at("depth").get<std::string>(), s.id, "depth");
            s.agents = load_tensor(base, js.at("agents").get<std::string>(), s.id, "agents");
            s.labels = js.at("labels").get<std::vector<int>>();
            ds.samples.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ValidationError("manifest: bad schema: " + std::string(e.what()));
    }
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    json doc;
    doc["vocabulary"] = ds.vocabulary.names;
    doc["kind"] = ds.kind == DatasetKind::Image ? "image" : "video";
    doc["samples"] = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const Sample& s = ds.samples[i];
        const std::string stem = "sample_" + std::to_string(i);
        json js;
        js["id"] = s.id;
        const std::pair<const char*, const Tensor<float>*> fields[] = {
            {"face", &s.face},           {"gait", &s.gait}, {"masked_image", &s.masked_image},
            {"depth", &s.depth},         {"agents", &s.agents},
        };
        for (const auto& [name, tensor] : fields) {
            const std::string rel = stem + "_" + name + ".emt1";
            write_emt1(dir / rel, *tensor);
            js[name] = rel;
        }
        js["labels"] = s.labels;
        doc["samples"].push_back(std::move(js));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ValidationError("manifest: cannot write to " + dir.string());
    out << doc.dump(2) << "\n";
}

RawLabel parse_raw_label(const std::string& text) {
    static const std::unordered_map<std::string, RawLabel> table = {
        {"Somewhat Happy", RawLabel::SomewhatHappy},
        {"Extremely Happy", RawLabel::ExtremelyHappy},
        {"Somewhat Sad", RawLabel::SomewhatSad},
        {"Extremely Sad", RawLabel::ExtremelySad},
        {"Somewhat Angry", RawLabel::SomewhatAngry},
        {"Extremely Angry", RawLabel::ExtremelyAngry},
        {"Neutral", RawLabel::Neutral},
    };
    auto it = table.find(text);
    if (it == table.end()) throw ValidationError("annotation: unknown raw label '" + text + "'");
    return it->second;
}

namespace {

// major-class column in [Angry, Happy, Neutral, Sad] plus extreme flag
std::pair<int, bool> major_class(RawLabel l) {
    switch (l) {
        case RawLabel::SomewhatAngry: return {0, false};
        case RawLabel::ExtremelyAngry: return {0, true};
        case RawLabel::SomewhatHappy: return {1, false};
        case RawLabel::ExtremelyHappy: return {1, true};
        case RawLabel::Neutral: return {2, false};
        case RawLabel::SomewhatSad: return {3, false};
        case RawLabel::ExtremelySad: return {3, true};
    }
    throw ValidationError("annotation: unknown raw label value");
}

} // namespace

std::map<std::string, std::vector<double>> annotation_scores(
    const std::vector<AnnotationRecord>& records, const LabelVocabulary& vocabulary) {
    if (vocabulary != LabelVocabulary::groupwalk())
        throw ValidationError("aggregate_annotations: requires the GroupWalk vocabulary");
    if (records.empty()) throw ValidationError("aggregate_annotations: empty record list");
    std::map<std::string, std::vector<double>> scores;
    for (const auto& r : records) {
        auto& row = scores.try_emplace(r.agent_id, std::vector<double>(4, 0.0)).first->second;
        const auto [cls, extreme] = major_class(r.raw_label);
        row[cls] += extreme ? 2.0 : 1.0;
    }
    return scores;
}

std::vector<int> aggregate_scores_to_labels(const std::vector<double>& scores, double threshold) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<int> labels(scores.size(), 0);
    for (std::size_t i = 0; i < scores.size(); ++i)
        labels[i] = scores[i] >= threshold * mx && scores[i] > 0.0 ? 1 : 0;
    return labels;
}

std::map<std::string, std::vector<int>> aggregate_annotations(
    const std::vector<AnnotationRecord>& records, const LabelVocabulary& vocabulary,
    double threshold) {
    std::map<std::string, std::vector<int>> out;
    for (const auto& [agent, scores] : annotation_scores(records, vocabulary))
        out.emplace(agent, aggregate_scores_to_labels(scores, threshold));
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, double test_fraction,
                                  uint64_t seed) {
    if (train_fraction <= 0.0 || test_fraction <= 0.0)
        throw ValidationError("split: fractions must be positive");
    if (std::abs(train_fraction + test_fraction - 1.0) > 1e-9)
        throw ValidationError("split: fractions must sum to 1");

    auto groups = ds.units();
    const std::size_t n = groups.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n)
        throw ValidationError("split: fraction rounding leaves a split empty");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);

    Dataset train{ds.vocabulary, ds.kind, {}};
    Dataset test{ds.vocabulary, ds.kind, {}};
    for (std::size_t i = 0; i < n; ++i) {
        auto& dst = i < n_train ? train : test;
        for (std::size_t idx : groups[order[i]]) dst.samples.push_back(ds.samples[idx]);
    }
    return {std::move(train), std::move(test)};
}

} // namespace emorec
