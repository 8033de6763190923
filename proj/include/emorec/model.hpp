#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "emorec/adam.hpp"
#include "emorec/config.hpp"
#include "emorec/context1.hpp"
#include "emorec/context2.hpp"
#include "emorec/context3.hpp"
#include "emorec/dataset.hpp"
#include "emorec/metrics.hpp"

namespace emorec {

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// multi-label soft margin over logits:
//   -(1/C) sum_c [ y_c log s(x_c) + (1-y_c) log(1-s(x_c)) ]
// averaged over the batch, computed through softplus for stability
template <typename T>
Tensor<T> classification_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
    if (logits.shape() != targets.shape() || logits.ndim() != 2)
        throw ValidationError("classification_loss: logits/targets must both be [B,C]");
    for (const T& v : targets.data())
        if (v != T(0) && v != T(1))
            throw ValidationError("classification_loss: targets must be 0 or 1");
    Tensor<T> ones_minus = targets.detach();
    for (auto& v : ones_minus.data()) v = T(1) - v;
    Tensor<T> term =
        add(mul(targets, softplus(scale(logits, T(-1)))), mul(ones_minus, softplus(logits)));
    return mean_all(term);
}

// same loss on probabilities in (0,1); used where frame predictions are
// averaged before the loss
template <typename T>
Tensor<T> classification_loss_from_probs(const Tensor<T>& probs, const Tensor<T>& targets) {
    if (probs.shape() != targets.shape() || probs.ndim() != 2)
        throw ValidationError("classification_loss: probs/targets must both be [B,C]");
    const T eps = static_cast<T>(1e-7);
    Tensor<T> ones_minus = targets.detach();
    for (auto& v : ones_minus.data()) v = T(1) - v;
    Tensor<T> p = clamp(probs, eps, T(1) - eps);
    Tensor<T> one_minus_p = sub(Tensor<T>::full(p.shape(), T(1)), p);
    Tensor<T> term = add(mul(targets, log(p)), mul(ones_minus, log(one_minus_p)));
    return scale(mean_all(term), T(-1));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_mult, const Tensor<T>& l_class, double lambda1,
                     double lambda2) {
    if (lambda1 < 0 || lambda2 < 0) throw ValidationError("total_loss: negative lambda");
    if (l_mult.numel() != 1 || l_class.numel() != 1)
        throw ValidationError("total_loss: losses must be scalar");
    return add(scale(l_mult, static_cast<T>(lambda1)), scale(l_class, static_cast<T>(lambda2)));
}

// arithmetic mean of per-frame score vectors
inline std::vector<double> predict_video(const std::vector<std::vector<double>>& frame_scores) {
    if (frame_scores.empty()) throw ValidationError("predict_video: empty frame list");
    std::vector<double> mean(frame_scores[0].size(), 0.0);
    for (const auto& f : frame_scores) {
        if (f.size() != mean.size()) throw ValidationError("predict_video: ragged frame scores");
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += f[c];
    }
    for (auto& v : mean) v /= static_cast<double>(frame_scores.size());
    return mean;
}

// ---------------------------------------------------------------------------
// batched inputs
// ---------------------------------------------------------------------------

template <typename T>
struct BatchInput {
    Tensor<T> face;                      // [B,144]
    Tensor<T> gait;                      // [B,T,25,2]
    Tensor<T> image;                     // [B,3,S,S] when context 2 is enabled
    Tensor<T> depth;                     // [B,1,S,S] when context 3 runs on depth
    std::vector<Tensor<T>> agent_graphs; // per-sample [n,2] when context 3 is a GCN
    Tensor<T> targets;                   // [B,C]
};

template <typename T>
struct ModelOutputs {
    Tensor<T> logits; // [B,C]
    Tensor<T> scores; // sigmoid(logits)
    std::vector<Tensor<T>> modality_probs;
    Tensor<T> attention;  // [B,1,s,s] when context 2 is enabled
    Tensor<T> aux_logits; // attention-branch logits
};

// ---------------------------------------------------------------------------
// the full three-context classifier
// ---------------------------------------------------------------------------

template <typename T>
class MultiContextModel {
public:
    explicit MultiContextModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(cfg.seed, 0x10DE1));
        face_.emplace(cfg.classes, cfg.widths.face_conv, cfg.widths.face_fc, rng);
        gait_.emplace(cfg.classes, cfg.widths.gait_channels, rng);
        fusion_.emplace(2, cfg.classes, cfg.fusion_mode, rng);
        if (cfg_.enabled_contexts.count(2))
            abn_.emplace(cfg.classes, cfg.widths.abn_channels, rng, cfg.image_size,
                         cfg.image_channels);
        if (cfg_.enabled_contexts.count(3)) {
            if (cfg.context3_mode == Context3Mode::Depth)
                depth_.emplace(cfg.classes, cfg.widths.depth_channels, rng, cfg.image_size);
            else
                gcn_.emplace(cfg.classes, cfg.widths.gcn_hidden, rng);
        }
        const std::size_t k = cfg_.enabled_contexts.size();
        head1_ = Linear<T>(k * cfg.classes, 2 * cfg.classes, rng);
        head2_ = Linear<T>(2 * cfg.classes, cfg.classes, rng);

        face_->register_params(params_, "face");
        gait_->register_params(params_, "gait");
        fusion_->register_params(params_, "fusion");
        if (abn_) abn_->register_params(params_, "abn");
        if (depth_) depth_->register_params(params_, "depth");
        if (gcn_) gcn_->register_params(params_, "gcn");
        head1_.register_params(params_, "head1");
        head2_.register_params(params_, "head2");
    }

    ModelOutputs<T> forward(const BatchInput<T>& in, Mode mode) const {
        ModelOutputs<T> out;
        auto f = face_->forward(in.face, mode);
        auto g = gait_->forward(in.gait, mode);
        out.modality_probs = {f.probs, g.probs};
        std::vector<Tensor<T>> parts = {fusion_->fuse({f.feature, g.feature})};

        if (abn_) {
            auto a = abn_->forward(in.image);
            parts.push_back(a.h2);
            out.attention = a.attention;
            out.aux_logits = a.aux_logits;
        }
        if (depth_) parts.push_back(depth_->forward(in.depth));
        if (gcn_) {
            if (in.agent_graphs.empty())
                throw ValidationError("model: missing agent graphs for the proximity stream");
            std::vector<Tensor<T>> rows;
            rows.reserve(in.agent_graphs.size());
            for (const auto& pos : in.agent_graphs)
                rows.push_back(gcn_->forward(pos, build_adjacency(pos, cfg_.mu)));
            parts.push_back(rows.size() == 1 ? rows[0] : concat(rows, 0));
        }

        Tensor<T> hc = parts.size() == 1 ? parts[0] : concat(parts, 1);
        out.logits = head2_.forward(relu(head1_.forward(hc)));
        out.scores = sigmoid(out.logits);
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry<T>& params() { return params_; }
    const ParamRegistry<T>& params() const { return params_; }

    Tensor<T> param(const std::string& name) {
        for (auto& [n, t] : params_.items)
            if (n == name) return t;
        throw ValidationError("model: no parameter named '" + name + "'");
    }

    void set_track_running(bool on) { face_->set_track_running(on); }

    FaceStream<T>& face() { return *face_; }
    GaitStream<T>& gait() { return *gait_; }
    ModalityFusion<T>& fusion() { return *fusion_; }
    bool has_abn() const { return abn_.has_value(); }
    AbnStream<T>& abn() { return *abn_; }
    bool has_depth() const { return depth_.has_value(); }
    bool has_gcn() const { return gcn_.has_value(); }

private:
    ModelConfig cfg_;
    std::optional<FaceStream<T>> face_;
    std::optional<GaitStream<T>> gait_;
    std::optional<ModalityFusion<T>> fusion_;
    std::optional<AbnStream<T>> abn_;
    std::optional<DepthCnn<T>> depth_;
    std::optional<GcnStream<T>> gcn_;
    Linear<T> head1_, head2_;
    ParamRegistry<T> params_;
};

// ---------------------------------------------------------------------------
// batch assembly from datasets
// ---------------------------------------------------------------------------

template <typename T>
BatchInput<T> assemble_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                             const ModelConfig& cfg) {
    if (indices.empty()) throw ValidationError("assemble_batch: empty batch");
    const std::size_t B = indices.size();
    const std::size_t C = ds.classes();
    const std::size_t S = cfg.image_size;
    const std::size_t Tn = ds.samples[indices[0]].gait.shape()[0];

    BatchInput<T> in;
    in.face = Tensor<T>({B, kFaceDim});
    in.gait = Tensor<T>({B, Tn, kGaitJoints, 2});
    in.targets = Tensor<T>({B, C});
    const bool want_image = cfg.enabled_contexts.count(2) > 0;
    const bool want_depth =
        cfg.enabled_contexts.count(3) > 0 && cfg.context3_mode == Context3Mode::Depth;
    const bool want_graph =
        cfg.enabled_contexts.count(3) > 0 && cfg.context3_mode == Context3Mode::Gcn;
    if (want_image) in.image = Tensor<T>({B, kImageChannels, S, S});
    if (want_depth) in.depth = Tensor<T>({B, 1, S, S});

    for (std::size_t b = 0; b < B; ++b) {
        const Sample& s = ds.samples[indices[b]];
        if (s.gait.shape()[0] != Tn)
            throw ValidationError("assemble_batch: sample '" + s.id +
                                  "' has a different gait length than its batch");
        for (std::size_t i = 0; i < kFaceDim; ++i)
            in.face.data()[b * kFaceDim + i] = static_cast<T>(s.face.data()[i]);
        for (std::size_t i = 0; i < Tn * kGaitJoints * 2; ++i)
            in.gait.data()[b * Tn * kGaitJoints * 2 + i] = static_cast<T>(s.gait.data()[i]);
        for (std::size_t c = 0; c < C; ++c)
            in.targets.data()[b * C + c] = static_cast<T>(s.labels[c]);
        if (want_image) {
            // stored [H,W,Ch] -> stream layout [Ch,H,W]
            for (std::size_t y = 0; y < S; ++y)
                for (std::size_t x = 0; x < S; ++x)
                    for (std::size_t ch = 0; ch < kImageChannels; ++ch)
                        in.image.data()[((b * kImageChannels + ch) * S + y) * S + x] =
                            static_cast<T>(s.masked_image.data()[(y * S + x) * kImageChannels + ch]);
        }
        if (want_depth) {
            for (std::size_t i = 0; i < S * S; ++i)
                in.depth.data()[b * S * S + i] = static_cast<T>(s.depth.data()[i]);
        }
        if (want_graph) {
            Tensor<T> pos(s.agents.shape());
            for (std::size_t i = 0; i < pos.numel(); ++i)
                pos.data()[i] = static_cast<T>(s.agents.data()[i]);
            in.agent_graphs.push_back(std::move(pos));
        }
    }
    return in;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct LossRow {
    std::size_t epoch = 0;
    double l_mult = 0, l_class = 0, l_total = 0;
};

struct TrainOptions {
    double stop_below = -1.0; // stop once the epoch total loss drops under this
    std::function<void(const LossRow&)> on_epoch;
};

namespace detail {

template <typename T>
struct BatchLosses {
    Tensor<T> mult, cls;
};

// forward + losses for a list of units (image: one sample each; video: one
// agent each, frames averaged before the loss)
template <typename T>
BatchLosses<T> batch_losses(MultiContextModel<T>& model, const Dataset& ds,
                            const std::vector<std::vector<std::size_t>>& units, Mode mode) {
    const ModelConfig& cfg = model.config();
    if (ds.kind == DatasetKind::Image) {
        std::vector<std::size_t> idx;
        idx.reserve(units.size());
        for (const auto& u : units) idx.push_back(u[0]);
        auto in = assemble_batch<T>(ds, idx, cfg);
        auto out = model.forward(in, mode);
        Tensor<T> lm = multiplicative_loss(out.modality_probs, in.targets, cfg.beta);
        Tensor<T> lc = classification_loss(out.logits, in.targets);
        if (cfg.abn_aux_loss && model.has_abn())
            lc = add(lc, classification_loss(out.aux_logits, in.targets));
        return {lm, lc};
    }

    // video: average each agent's frame predictions, loss on the average
    Tensor<T> lm_acc = Tensor<T>::scalar(T(0));
    Tensor<T> lc_acc = Tensor<T>::scalar(T(0));
    for (const auto& frames : units) {
        auto in = assemble_batch<T>(ds, frames, cfg);
        auto out = model.forward(in, mode);
        const std::size_t C = cfg.classes;
        Tensor<T> target_row = slice(in.targets, 0, 0, 1);
        Tensor<T> mean_scores = reshape(reduce_mean(out.scores, {0}), {1, C});
        Tensor<T> lc = classification_loss_from_probs(mean_scores, target_row);
        if (cfg.abn_aux_loss && model.has_abn()) {
            Tensor<T> mean_aux = reshape(reduce_mean(sigmoid(out.aux_logits), {0}), {1, C});
            lc = add(lc, classification_loss_from_probs(mean_aux, target_row));
        }
        std::vector<Tensor<T>> mean_probs;
        for (const auto& p : out.modality_probs)
            mean_probs.push_back(reshape(reduce_mean(p, {0}), {1, C}));
        lm_acc = add(lm_acc, multiplicative_loss(mean_probs, target_row, cfg.beta));
        lc_acc = add(lc_acc, lc);
    }
    const T inv = T(1) / static_cast<T>(units.size());
    return {scale(lm_acc, inv), scale(lc_acc, inv)};
}

} // namespace detail

template <typename T>
std::vector<LossRow> train_model(MultiContextModel<T>& model, const Dataset& ds,
                                 const TrainOptions& opts = {}) {
    const ModelConfig& cfg = model.config();
    ds.validate();
    if (ds.samples.empty()) throw ValidationError("train: empty dataset");
    if (ds.classes() != cfg.classes)
        throw ValidationError("train: dataset has " + std::to_string(ds.classes()) +
                              " classes, model expects " + std::to_string(cfg.classes));

    Adam<T> opt(model.params().tensors(), {.lr = static_cast<T>(cfg.lr)});
    auto units = ds.units();
    std::vector<LossRow> curve;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C0 + epoch));
        std::vector<std::size_t> order(units.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i-- > 1;)
            std::swap(order[i], order[shuffle_rng.below(i + 1)]);

        LossRow row{epoch + 1, 0, 0, 0};
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::vector<std::size_t>> batch_units;
            for (std::size_t i = start; i < end; ++i) batch_units.push_back(units[order[i]]);
            try {
                auto losses = detail::batch_losses(model, ds, batch_units, Mode::Train);
                Tensor<T> total =
                    total_loss(losses.mult, losses.cls, cfg.lambda1, cfg.lambda2);
                opt.zero_grad();
                total.backward(/*free_graph=*/true);
                opt.step();
                row.l_mult += static_cast<double>(losses.mult.item());
                row.l_class += static_cast<double>(losses.cls.item());
                row.l_total += static_cast<double>(total.item());
            } catch (const NumericError& e) {
                throw NumericError("train: diverged in batch " + std::to_string(batches) +
                                   " of epoch " + std::to_string(epoch + 1) + ": " + e.what());
            }
            ++batches;
        }
        row.l_mult /= static_cast<double>(batches);
        row.l_class /= static_cast<double>(batches);
        row.l_total /= static_cast<double>(batches);
        curve.push_back(row);
        if (opts.on_epoch) opts.on_epoch(row);
        if (opts.stop_below > 0 && row.l_total < opts.stop_below) break;
    }
    return curve;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// per-unit class scores (video units average their frame predictions)
template <typename T>
std::pair<std::vector<std::vector<double>>, std::vector<std::vector<int>>> unit_scores(
    MultiContextModel<T>& model, const Dataset& ds) {
    NoGradGuard no_grad;
    const ModelConfig& cfg = model.config();
    auto units = ds.units();
    std::vector<std::vector<double>> scores;
    std::vector<std::vector<int>> labels;
    scores.reserve(units.size());

    if (ds.kind == DatasetKind::Image) {
        for (std::size_t start = 0; start < units.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(units.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx;
            for (std::size_t i = start; i < end; ++i) idx.push_back(units[i][0]);
            auto out = model.forward(assemble_batch<T>(ds, idx, cfg), Mode::Eval);
            const std::size_t C = cfg.classes;
            for (std::size_t b = 0; b < idx.size(); ++b) {
                std::vector<double> row(C);
                for (std::size_t c = 0; c < C; ++c)
                    row[c] = static_cast<double>(out.scores.data()[b * C + c]);
                scores.push_back(std::move(row));
                labels.push_back(ds.samples[idx[b]].labels);
            }
        }
        return {scores, labels};
    }

    for (const auto& frames : units) {
        auto out = model.forward(assemble_batch<T>(ds, frames, cfg), Mode::Eval);
        const std::size_t C = cfg.classes;
        std::vector<std::vector<double>> frame_scores(frames.size(), std::vector<double>(C));
        for (std::size_t f = 0; f < frames.size(); ++f)
            for (std::size_t c = 0; c < C; ++c)
                frame_scores[f][c] = static_cast<double>(out.scores.data()[f * C + c]);
        scores.push_back(predict_video(frame_scores));
        labels.push_back(ds.samples[frames[0]].labels);
    }
    return {scores, labels};
}

template <typename T>
EvalReport evaluate_model(MultiContextModel<T>& model, const Dataset& ds,
                          const std::string& variant) {
    auto [scores, labels] = unit_scores(model, ds);
    return compute_eval_report(scores, labels, ds.vocabulary, variant);
}

inline std::string variant_name(const std::set<int>& contexts, Context3Mode mode) {
    std::string name;
    for (int c : contexts) {
        if (!name.empty()) name += "+";
        name += std::to_string(c);
    }
    if (contexts.count(3)) name += (mode == Context3Mode::Depth ? "-depth" : "-gcn");
    return name;
}

// one train+eval per context subset, all sharing the seed and the given split
template <typename T>
std::vector<EvalReport> ablation_run(const Dataset& train_ds, const Dataset& test_ds,
                                     const ModelConfig& base,
                                     const std::vector<std::set<int>>& variants,
                                     const TrainOptions& opts = {}) {
    std::vector<EvalReport> reports;
    for (const auto& variant : variants) {
        if (!variant.count(1))
            throw ValidationError("ablation: every variant must retain context 1");
        ModelConfig cfg = base;
        cfg.enabled_contexts = variant;
        MultiContextModel<T> model(cfg);
        train_model(model, train_ds, opts);
        reports.push_back(
            evaluate_model(model, test_ds, variant_name(variant, cfg.context3_mode)));
    }
    return reports;
}

} // namespace emorec
