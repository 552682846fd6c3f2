#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsvad/feature_store.h"
#include "wsvad/generator.h"
#include "wsvad/metrics.h"

namespace wsvad {

/// Stage one: video-level multiple-instance ranking on bagged segments.
struct MilConfig {
    double epsilon = 1.0;  // ranking margin
    double lambda_sparsity = 8e-5;
    double lambda_smooth = 8e-5;
    std::size_t n_segments = 32;
    std::size_t pairs_per_batch = 30;
    std::size_t epochs = 10000;
    double lr = 0.001;
    double dropout_rate = 0.6;
    std::uint64_t seed = 0;

    /// Throws ConfigError on the first broken invariant.
    void validate() const;
};

enum class ScoreTransform { identity, minmax };
enum class Stage2Init { fresh, from_a };

const char* to_string(ScoreTransform t);
ScoreTransform parse_transform(const std::string& name);
const char* to_string(Stage2Init init);
Stage2Init parse_stage2_init(const std::string& name);

/// Stage two: clip-level cross-entropy against pseudo labels.
struct Stage2Config {
    ScoreTransform transform = ScoreTransform::identity;
    std::size_t epochs = 200;
    double lr = 0.001;
    bool include_normals = true;
    Stage2Init init = Stage2Init::fresh;
    double dropout_rate = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
};

struct MilLoss {
    double loss = 0.0;
    std::vector<double> grad_normal;
    std::vector<double> grad_abnormal;
};

/// Hinge on the gap between the top abnormal and top normal score, plus sparsity
/// and temporal smoothness penalties on the abnormal scores. Gradients are exact
/// subgradients; ties for the max go to the lowest index.
MilLoss mil_loss(std::span<const double> scores_normal, std::span<const double> scores_abnormal,
                 const MilConfig& cfg);

struct BceLoss {
    double loss = 0.0;
    std::vector<double> grad;
};

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy with soft targets. Scores are clamped to
/// [1e-7, 1 - 1e-7] before taking logs.
BceLoss bce_loss(std::span<const double> scores, std::span<const double> targets);

/// Per-video score transformation applied before scores become targets.
std::vector<double> transform_scores(std::span<const double> scores, ScoreTransform mode);

struct TrainResult {
    GeneratorModel model;
    std::vector<double> loss_history;  // one entry per epoch
};

/// Trains a fresh generator with the ranking loss.
TrainResult train_stage_one(const Corpus& corpus, const MilConfig& cfg);

/// Continues training `initial` (parameters and optimizer state) with the ranking loss.
TrainResult train_stage_one(const Corpus& corpus, const MilConfig& cfg, GeneratorModel initial);

/// Scores every clip of every abnormal video in inference mode and applies the
/// transform; normal videos get all-zero targets.
PseudoLabelSet generate_pseudo_labels(const MlpParams& model, const Corpus& corpus, ScoreTransform transform);

/// Trains generator B on clip-level targets. `warm_start` is required when
/// cfg.init is from_a and ignored otherwise.
TrainResult train_stage_two(const Corpus& corpus, const PseudoLabelSet& pseudo, const Stage2Config& cfg,
                            const MlpParams* warm_start = nullptr);

struct RoundRecord {
    std::size_t round = 1;
    GeneratorModel model;  // generator B of this round
    PseudoLabelSet pseudo;
    std::vector<double> stage2_loss;
    std::optional<MetricsReport> metrics;
};

struct RoundsResult {
    GeneratorModel model_a;
    std::vector<double> stage1_loss;
    std::optional<MetricsReport> stage1_metrics;
    std::vector<RoundRecord> rounds;

    const GeneratorModel& final_model() const { return rounds.empty() ? model_a : rounds.back().model; }
};

struct RoundsOptions {
    std::size_t rounds = 1;
    bool stage1_only = false;
    // Evaluated after stage one and after every round when set.
    const Corpus* eval_corpus = nullptr;
    EvalOptions eval;
};

/// Stage one once, then `rounds` passes of pseudo labelling and stage two. Each
/// later round labels with the previous round's generator B.
RoundsResult run_rounds(const Corpus& corpus, const MilConfig& mil_cfg, const Stage2Config& s2_cfg,
                        const RoundsOptions& options);

/// Bagged segments for every video of the corpus.
std::vector<SegmentBag> bag_corpus(const Corpus& corpus, std::size_t n_segments);

/// CSV with header "epoch,loss".
std::string loss_history_csv(const std::vector<double>& history);

}  // namespace wsvad
