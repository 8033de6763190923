#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "emorec/tensor.hpp"

namespace emorec {

inline constexpr std::size_t kFaceDim = 144;
inline constexpr std::size_t kGaitJoints = 25;
inline constexpr std::size_t kImageSize = 224;
inline constexpr std::size_t kImageChannels = 3;

struct LabelVocabulary {
    std::vector<std::string> names;

    std::size_t size() const { return names.size(); }
    int index_of(const std::string& name) const;
    void validate() const; // unique, non-empty names

    static LabelVocabulary emotic();    // the 26 discrete classes
    static LabelVocabulary groupwalk(); // Angry, Happy, Neutral, Sad

    bool operator==(const LabelVocabulary&) const = default;
};

// One annotated agent (or one frame of one, in video datasets).
// Video sample ids use "<agent>#<frame>"; everything before the first '#'
// names the agent, so frames group and splits never cut across an agent.
struct Sample {
    std::string id;
    Tensor<float> face;         // [144]
    Tensor<float> gait;         // [T,25,2], T >= 1
    Tensor<float> masked_image; // [224,224,3], intensities in [0,1], agent zeroed
    Tensor<float> depth;        // [224,224], relative depth >= 0
    Tensor<float> agents;       // [n,2] ground positions, primary agent first
    std::vector<int> labels;    // C multi-hot

    std::string agent_id() const {
        const auto pos = id.find('#');
        return pos == std::string::npos ? id : id.substr(0, pos);
    }
};

enum class DatasetKind { Image, Video };

struct Dataset {
    LabelVocabulary vocabulary;
    DatasetKind kind = DatasetKind::Image;
    std::vector<Sample> samples;

    std::size_t classes() const { return vocabulary.size(); }
    void validate() const; // throws ValidationError naming the offending sample

    // Unit indices for iteration/splitting: one group per agent for video
    // datasets, one singleton per sample for image datasets. Order follows
    // first appearance in `samples`.
    std::vector<std::vector<std::size_t>> units() const;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

// --- GroupWalk-style annotation aggregation ---

enum class RawLabel {
    SomewhatHappy,
    ExtremelyHappy,
    SomewhatSad,
    ExtremelySad,
    SomewhatAngry,
    ExtremelyAngry,
    Neutral,
};

RawLabel parse_raw_label(const std::string& text);

struct AnnotationRecord {
    std::string agent_id;
    std::string annotator_id;
    RawLabel raw_label;
};

// Scores: +2 for an "Extremely" variant's major class, +1 otherwise.
// Binarized at `threshold` x the per-agent maximum score.
std::vector<int> aggregate_scores_to_labels(const std::vector<double>& scores,
                                            double threshold = 0.5);
std::map<std::string, std::vector<int>> aggregate_annotations(
    const std::vector<AnnotationRecord>& records, const LabelVocabulary& vocabulary,
    double threshold = 0.5);
std::map<std::string, std::vector<double>> annotation_scores(
    const std::vector<AnnotationRecord>& records, const LabelVocabulary& vocabulary);

// Seed-deterministic disjoint split; video datasets split by agent.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction,
                                  double test_fraction, uint64_t seed);

} // namespace emorec
