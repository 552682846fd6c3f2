#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wsvad/core.h"
#include "wsvad/feature_store.h"
#include "wsvad/generator.h"

namespace wsvad {

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

/// ROC samples ordered by decreasing threshold, so fpr and tpr are non-decreasing
/// along the vector. The first point is (0,0) at threshold +inf and the last is (1,1).
struct RocCurve {
    std::vector<RocPoint> points;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

/// Broadcasts clip scores to frames: frame j takes clip min(j / clip_len, M - 1).
std::vector<double> expand_to_frames(const ScoreSequence& scores, std::uint32_t clip_len,
                                     std::uint32_t num_frames);

/// A frame counts as predicted positive iff its score >= threshold. Throws
/// MetricError when the truth contains a single class.
RocCurve roc_curve(std::span<const double> frame_scores, std::span<const std::uint8_t> frame_truth);

/// Trapezoidal area under the curve.
double auroc(const RocCurve& curve);

struct EerPoint {
    double fpr = 0.0;
    double fnr = 0.0;
    double threshold = 0.0;
};

/// Location where fpr == fnr, linearly interpolated between adjacent samples.
EerPoint eer_point(const RocCurve& curve);
double eer(const RocCurve& curve);

/// Fraction of videos whose max clip score >= threshold agrees with the label.
double video_accuracy(const std::vector<std::vector<double>>& clip_scores, std::span<const int> labels,
                      double threshold = 0.5);

struct EvalOptions {
    bool macro_average = false;
    double threshold = 0.5;
};

struct MetricsReport {
    double auroc = 0.0;
    double eer = 0.0;
    double video_accuracy = 0.0;
    std::size_t n_frames = 0;
    std::size_t n_videos = 0;

    /// {"auroc", "eer", "video_accuracy", "n_frames", "n_videos"}
    std::string to_json() const;
};

struct Evaluation {
    MetricsReport report;
    std::vector<ScoreTrace> traces;  // one per video, manifest order
};

/// Scores every clip with `model` and computes frame-level metrics over the
/// videos that carry frame truth (normal videos without truth count as all
/// negative). Micro average pools frames across videos; macro average
/// averages per-video AUROC/EER over videos containing both classes.
Evaluation evaluate(const MlpParams& model, const Corpus& corpus, const EvalOptions& options = {});

/// Frame truth for a record: the stored bits, all zeros for an unlabelled normal
/// video, or empty when an abnormal video has no truth.
std::vector<std::uint8_t> frame_truth_or_default(const VideoRecord& record);

}  // namespace wsvad
