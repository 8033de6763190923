#include "emorec/metrics.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace emorec {

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ValidationError("average_precision: scores/labels size mismatch");
    std::size_t positives = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ValidationError("average_precision: labels must be 0 or 1");
        positives += static_cast<std::size_t>(l);
    }
    if (positives == 0) throw ValidationError("average_precision: zero positives");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]]) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(k + 1);
        }
    }
    return ap / static_cast<double>(positives);
}

EvalReport compute_eval_report(const std::vector<std::vector<double>>& scores,
                               const std::vector<std::vector<int>>& labels,
                               const LabelVocabulary& vocab, const std::string& variant) {
    if (scores.size() != labels.size())
        throw ValidationError("eval: scores/labels count mismatch");
    const std::size_t C = vocab.size();
    EvalReport report;
    report.variant = variant;
    report.per_class_ap.assign(C, std::nullopt);

    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> s(scores.size());
        std::vector<int> y(scores.size());
        std::size_t positives = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i].size() != C || labels[i].size() != C)
                throw ValidationError("eval: row width mismatch");
            s[i] = scores[i][c];
            y[i] = labels[i][c];
            positives += static_cast<std::size_t>(y[i]);
        }
        if (positives == 0) {
            std::cerr << "warning: class '" << vocab.names[c]
                      << "' has no positives; skipped from mAP\n";
            continue;
        }
        const double ap = average_precision(s, y);
        report.per_class_ap[c] = ap;
        sum += ap;
        ++counted;
    }
    if (counted == 0) throw ValidationError("eval: no class has positives");
    report.map = sum / static_cast<double>(counted);
    return report;
}

std::string EvalReport::to_json(const LabelVocabulary& vocab) const {
    nlohmann::json doc;
    doc["variant"] = variant;
    doc["map"] = map;
    doc["per_class_ap"] = nlohmann::json::object();
    for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
        if (per_class_ap[c])
            doc["per_class_ap"][vocab.names[c]] = *per_class_ap[c];
        else
            doc["per_class_ap"][vocab.names[c]] = nullptr;
    }
    return doc.dump(2);
}

std::string EvalReport::to_csv(const LabelVocabulary& vocab) const {
    std::ostringstream os;
    os << "class,ap\n";
    for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
        os << vocab.names[c] << ",";
        if (per_class_ap[c]) os << *per_class_ap[c];
        os << "\n";
    }
    os << "mAP," << map << "\n";
    return os.str();
}

} // namespace emorec
