#include "wsvad/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace wsvad {

std::vector<double> expand_to_frames(const ScoreSequence& scores, std::uint32_t clip_len,
                                     std::uint32_t num_frames) {
    if (num_frames < 1) throw ContractViolation("expand_to_frames: num_frames must be at least 1");
    if (clip_len < 1) throw ContractViolation("expand_to_frames: clip_len must be at least 1");
    if (scores.scores.empty()) throw ContractViolation("expand_to_frames: no clip scores for '" + scores.video_id + "'");
    const std::size_t m = scores.scores.size();
    std::vector<double> frames(num_frames);
    for (std::uint32_t j = 0; j < num_frames; ++j) {
        frames[j] = scores.scores[std::min<std::size_t>(j / clip_len, m - 1)];
    }
    return frames;
}

RocCurve roc_curve(std::span<const double> frame_scores, std::span<const std::uint8_t> frame_truth) {
    if (frame_scores.size() != frame_truth.size()) {
        throw ContractViolation("roc_curve: " + std::to_string(frame_scores.size()) + " scores vs " +
                                std::to_string(frame_truth.size()) + " truth bits");
    }
    RocCurve curve;
    for (std::size_t i = 0; i < frame_scores.size(); ++i) {
        if (std::isnan(frame_scores[i])) throw MetricError("roc_curve: NaN score at frame " + std::to_string(i));
        (frame_truth[i] ? curve.positives : curve.negatives) += 1;
    }
    if (curve.positives == 0 || curve.negatives == 0) {
        throw MetricError("roc_curve: truth has a single class (" + std::to_string(curve.positives) +
                          " positive, " + std::to_string(curve.negatives) + " negative frames); AUROC undefined");
    }

    std::vector<std::size_t> order(frame_scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frame_scores[a] > frame_scores[b]; });

    const double p = static_cast<double>(curve.positives);
    const double n = static_cast<double>(curve.negatives);
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t k = 0; k < order.size();) {
        const double threshold = frame_scores[order[k]];
        // Consume the whole group of tied scores before emitting a point.
        while (k < order.size() && frame_scores[order[k]] == threshold) {
            (frame_truth[order[k]] ? tp : fp) += 1;
            ++k;
        }
        curve.points.push_back({threshold, static_cast<double>(fp) / n, static_cast<double>(tp) / p});
    }
    return curve;
}

double auroc(const RocCurve& curve) {
    double area = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const auto& a = curve.points[k - 1];
        const auto& b = curve.points[k];
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    return area;
}

EerPoint eer_point(const RocCurve& curve) {
    if (curve.points.empty()) throw MetricError("eer: empty ROC curve");
    auto gap = [](const RocPoint& pt) { return pt.fpr - (1.0 - pt.tpr); };
    for (std::size_t k = 0; k < curve.points.size(); ++k) {
        const auto& a = curve.points[k];
        const double ga = gap(a);
        if (ga == 0.0) return {a.fpr, 1.0 - a.tpr, a.threshold};
        if (k + 1 == curve.points.size()) break;
        const auto& b = curve.points[k + 1];
        const double gb = gap(b);
        if (ga < 0.0 && gb > 0.0) {
            const double t = ga / (ga - gb);
            const double fpr = a.fpr + t * (b.fpr - a.fpr);
            const double fnr = (1.0 - a.tpr) + t * ((1.0 - b.tpr) - (1.0 - a.tpr));
            const double threshold = std::isinf(a.threshold) ? b.threshold : a.threshold + t * (b.threshold - a.threshold);
            return {fpr, fnr, threshold};
        }
    }
    // A curve from (0,0) to (1,1) always crosses; reaching here means the curve is malformed.
    throw MetricError("eer: ROC curve never crosses fpr = fnr");
}

double eer(const RocCurve& curve) { return eer_point(curve).fpr; }

double video_accuracy(const std::vector<std::vector<double>>& clip_scores, std::span<const int> labels,
                      double threshold) {
    if (clip_scores.empty()) throw ContractViolation("video_accuracy: no videos");
    if (clip_scores.size() != labels.size()) throw ContractViolation("video_accuracy: score/label count mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < clip_scores.size(); ++i) {
        const auto& s = clip_scores[i];
        const double top = s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
        const int predicted = top >= threshold ? 1 : 0;
        correct += (predicted == labels[i]) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(clip_scores.size());
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["auroc"] = auroc;
    j["eer"] = eer;
    j["video_accuracy"] = video_accuracy;
    j["n_frames"] = n_frames;
    j["n_videos"] = n_videos;
    return j.dump(2) + "\n";
}

std::vector<std::uint8_t> frame_truth_or_default(const VideoRecord& record) {
    if (record.frame_truth) return *record.frame_truth;
    if (record.label == 0) return std::vector<std::uint8_t>(record.num_frames, 0);
    return {};
}

Evaluation evaluate(const MlpParams& model, const Corpus& corpus, const EvalOptions& options) {
    const auto& manifest = corpus.manifest;
    if (corpus.sequences.size() != manifest.videos.size()) {
        throw ContractViolation("evaluate: corpus sequences do not match manifest records");
    }
    Evaluation out;
    std::vector<std::vector<double>> all_clip_scores;
    std::vector<int> labels;
    std::vector<double> pooled_scores;
    std::vector<std::uint8_t> pooled_truth;
    double macro_auroc = 0.0;
    double macro_eer = 0.0;
    std::size_t macro_count = 0;

    for (std::size_t v = 0; v < manifest.videos.size(); ++v) {
        const auto& rec = manifest.videos[v];
        const auto& seq = corpus.sequences[v];
        const Vector s = score(model, seq.features);
        ScoreSequence clip{rec.video_id, std::vector<double>(s.data(), s.data() + s.size())};
        auto frames = expand_to_frames(clip, manifest.clip_len, rec.num_frames);

        const auto truth = frame_truth_or_default(rec);
        if (!truth.empty()) {
            out.report.n_frames += frames.size();
            if (options.macro_average) {
                const bool has_pos = std::find(truth.begin(), truth.end(), 1) != truth.end();
                const bool has_neg = std::find(truth.begin(), truth.end(), 0) != truth.end();
                if (has_pos && has_neg) {
                    const auto curve = roc_curve(frames, truth);
                    macro_auroc += auroc(curve);
                    macro_eer += eer(curve);
                    ++macro_count;
                }
            } else {
                pooled_scores.insert(pooled_scores.end(), frames.begin(), frames.end());
                pooled_truth.insert(pooled_truth.end(), truth.begin(), truth.end());
            }
        }
        labels.push_back(rec.label);
        all_clip_scores.push_back(clip.scores);
        out.traces.push_back({rec.video_id, std::move(clip.scores), std::move(frames)});
    }

    if (out.report.n_frames == 0) throw MetricError("evaluate: no video carries frame-level truth");
    if (options.macro_average) {
        if (macro_count == 0) throw MetricError("evaluate: no video contains both positive and negative frames");
        out.report.auroc = macro_auroc / static_cast<double>(macro_count);
        out.report.eer = macro_eer / static_cast<double>(macro_count);
    } else {
        const auto curve = roc_curve(pooled_scores, pooled_truth);
        out.report.auroc = auroc(curve);
        out.report.eer = eer(curve);
    }
    out.report.video_accuracy = video_accuracy(all_clip_scores, labels, options.threshold);
    out.report.n_videos = manifest.videos.size();
    return out;
}

}  // namespace wsvad
