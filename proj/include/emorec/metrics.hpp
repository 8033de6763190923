#pragma once

#include <optional>
#include <string>
#include <vector>

#include "emorec/dataset.hpp"

namespace emorec {

// AP over a ranked list: stable descending sort (ties keep input order),
// AP = sum over positive ranks k of precision@k, divided by #positives.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

struct EvalReport {
    std::string variant;
    std::vector<std::optional<double>> per_class_ap; // nullopt: no positives, skipped
    double map = 0.0;

    std::string to_json(const LabelVocabulary& vocab) const;
    std::string to_csv(const LabelVocabulary& vocab) const;
};

// scores[i][c], labels[i][c] per evaluation unit; classes without positives
// are skipped from the mean with a warning on stderr.
EvalReport compute_eval_report(const std::vector<std::vector<double>>& scores,
                               const std::vector<std::vector<int>>& labels,
                               const LabelVocabulary& vocab, const std::string& variant);

} // namespace emorec
