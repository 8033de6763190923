#pragma once

#include <cstdint>
#include <vector>

#include "emorec/dataset.hpp"

namespace emorec {

// Controls for the planted-signal generator. Strengths are in [0,1]; classes
// are assigned round-robin to the contexts with nonzero strength, and each
// context's raw input carries a class-dependent pattern whose amplitude is
// proportional to that context's strength. All randomness is drawn in a
// label-independent order, so zero strength means label-independent inputs.
struct SynthPlan {
    double s1 = 1.0; // face/gait templates
    double s2 = 1.0; // background blob patterns
    double s3 = 1.0; // crowd proximity patterns
    int context2_quadrant = -1; // -1: per-class quadrant; 0..3: pin all blobs
    std::size_t frames_per_agent = 1; // >1 produces a video dataset
    std::size_t gait_frames = 6;
    double second_label_prob = 0.35;
};

// Which context carries class c's signal under this plan (1..3, or 0 when all
// strengths are zero).
int assigned_context(std::size_t class_index, const SynthPlan& plan);

// Deterministic: same seed, same plan -> bit-identical dataset.
Dataset synthesize_dataset(uint64_t seed, std::size_t n_samples, const LabelVocabulary& vocab,
                           const SynthPlan& plan);

// The generator's own per-class summary statistics for one sample, used by
// oracle probes to confirm the planted signal is recoverable.
std::vector<double> planted_statistics(const Sample& sample, uint64_t seed,
                                       const LabelVocabulary& vocab, const SynthPlan& plan);

} // namespace emorec
