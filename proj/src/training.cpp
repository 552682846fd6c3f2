#include "wsvad/training.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "wsvad/random.h"

namespace wsvad {

void MilConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("mil.epsilon must be > 0");
    if (!(lambda_sparsity >= 0.0)) throw ConfigError("mil.lambda_sparsity must be >= 0");
    if (!(lambda_smooth >= 0.0)) throw ConfigError("mil.lambda_smooth must be >= 0");
    if (n_segments < 1) throw ConfigError("mil.n_segments must be >= 1");
    if (pairs_per_batch < 1) throw ConfigError("mil.pairs_per_batch must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("mil.lr must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("mil.dropout_rate must lie in [0, 1)");
}

void Stage2Config::validate() const {
    if (epochs < 1) throw ConfigError("stage2.epochs must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("stage2.lr must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("stage2.dropout_rate must lie in [0, 1)");
}

const char* to_string(ScoreTransform t) { return t == ScoreTransform::identity ? "identity" : "minmax"; }

ScoreTransform parse_transform(const std::string& name) {
    if (name == "identity") return ScoreTransform::identity;
    if (name == "minmax") return ScoreTransform::minmax;
    throw ConfigError("unknown transform '" + name + "' (expected identity or minmax)");
}

const char* to_string(Stage2Init init) { return init == Stage2Init::fresh ? "fresh" : "from_a"; }

Stage2Init parse_stage2_init(const std::string& name) {
    if (name == "fresh") return Stage2Init::fresh;
    if (name == "from_a") return Stage2Init::from_a;
    throw ConfigError("unknown stage-two init '" + name + "' (expected fresh or from_a)");
}

namespace {

std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// Per-step activations are several MB. glibc would mmap and unmap them on every
// step, which costs more than the arithmetic, so keep them on the heap instead.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)done;
#endif
}

}  // namespace

MilLoss mil_loss(std::span<const double> scores_normal, std::span<const double> scores_abnormal,
                 const MilConfig& cfg) {
    if (scores_normal.size() != scores_abnormal.size()) {
        throw ContractViolation("mil_loss: bag sizes differ (" + std::to_string(scores_normal.size()) + " vs " +
                                std::to_string(scores_abnormal.size()) + ")");
    }
    if (scores_normal.empty()) throw ContractViolation("mil_loss: empty bags");
    const std::size_t n = scores_normal.size();

    MilLoss out;
    out.grad_normal.assign(n, 0.0);
    out.grad_abnormal.assign(n, 0.0);

    const std::size_t top_a = argmax_lowest(scores_abnormal);
    const std::size_t top_n = argmax_lowest(scores_normal);
    const double hinge = cfg.epsilon - (scores_abnormal[top_a] - scores_normal[top_n]);
    if (hinge > 0.0) {
        out.loss += hinge;
        out.grad_abnormal[top_a] -= 1.0;
        out.grad_normal[top_n] += 1.0;
    }

    for (std::size_t i = 0; i < n; ++i) {
        out.loss += cfg.lambda_sparsity * scores_abnormal[i];
        out.grad_abnormal[i] += cfg.lambda_sparsity;
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double diff = scores_abnormal[i + 1] - scores_abnormal[i];
        out.loss += cfg.lambda_smooth * diff * diff;
        out.grad_abnormal[i + 1] += 2.0 * cfg.lambda_smooth * diff;
        out.grad_abnormal[i] -= 2.0 * cfg.lambda_smooth * diff;
    }
    return out;
}

BceLoss bce_loss(std::span<const double> scores, std::span<const double> targets) {
    if (scores.size() != targets.size()) {
        throw ContractViolation("bce_loss: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(targets.size()) + " targets");
    }
    if (scores.empty()) throw ContractViolation("bce_loss: empty input");
    const double k = static_cast<double>(scores.size());
    BceLoss out;
    out.grad.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = std::clamp(scores[i], kBceClamp, 1.0 - kBceClamp);
        const double t = targets[i];
        out.loss -= t * std::log(s) + (1.0 - t) * std::log(1.0 - s);
        out.grad[i] = (s - t) / (s * (1.0 - s) * k);
    }
    out.loss /= k;
    return out;
}

std::vector<double> transform_scores(std::span<const double> scores, ScoreTransform mode) {
    std::vector<double> out(scores.begin(), scores.end());
    if (mode == ScoreTransform::identity || out.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(out.begin(), out.end());
    const double lo = *lo_it;
    const double range = *hi_it - lo;
    if (range < 1e-8) {
        std::fill(out.begin(), out.end(), 0.0);
        return out;
    }
    for (auto& s : out) s = std::clamp((s - lo) / range, 0.0, 1.0);
    return out;
}

std::vector<SegmentBag> bag_corpus(const Corpus& corpus, std::size_t n_segments) {
    std::vector<SegmentBag> bags;
    bags.reserve(corpus.sequences.size());
    for (const auto& seq : corpus.sequences) bags.push_back(bag_segments(seq, n_segments));
    return bags;
}

TrainResult train_stage_one(const Corpus& corpus, const MilConfig& cfg) {
    cfg.validate();
    GeneratorModel initial;
    initial.params = init_params(default_layer_dims(corpus.manifest.feature_dim), cfg.seed, cfg.dropout_rate);
    initial.optimizer = init_adam(initial.params, cfg.lr);
    return train_stage_one(corpus, cfg, std::move(initial));
}

TrainResult train_stage_one(const Corpus& corpus, const MilConfig& cfg, GeneratorModel initial) {
    cfg.validate();
    keep_large_blocks_on_heap();
    std::vector<std::size_t> normals;
    std::vector<std::size_t> abnormals;
    for (std::size_t i = 0; i < corpus.manifest.videos.size(); ++i) {
        (corpus.manifest.videos[i].label == 1 ? abnormals : normals).push_back(i);
    }
    if (normals.empty() || abnormals.empty()) {
        throw ConfigError("stage one needs at least one normal and one abnormal video (have " +
                          std::to_string(normals.size()) + " normal, " + std::to_string(abnormals.size()) +
                          " abnormal)");
    }
    if (corpus.sequences.size() != corpus.manifest.videos.size()) {
        throw ContractViolation("train_stage_one: corpus sequences do not match manifest records");
    }

    const auto bags = bag_corpus(corpus, cfg.n_segments);
    const auto n = static_cast<Eigen::Index>(cfg.n_segments);
    const auto pairs = cfg.pairs_per_batch;
    const auto d = static_cast<Eigen::Index>(corpus.manifest.feature_dim);

    TrainResult result{std::move(initial), {}};
    auto& model = result.model;
    model.optimizer.lr = cfg.lr;
    result.loss_history.reserve(cfg.epochs);

    Rng rng(cfg.seed, /*stream=*/1);
    // Each pair occupies 2n consecutive rows: the normal bag, then the abnormal bag.
    Matrix batch(static_cast<Eigen::Index>(pairs) * 2 * n, d);
    Vector score_grads(batch.rows());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t p = 0; p < pairs; ++p) {
            const auto& bn = bags[normals[rng.below(normals.size())]];
            const auto& ba = bags[abnormals[rng.below(abnormals.size())]];
            const auto base = static_cast<Eigen::Index>(p) * 2 * n;
            batch.middleRows(base, n) = bn.segments;
            batch.middleRows(base + n, n) = ba.segments;
        }
        const auto fwd = forward(model.params, batch, Mode::train, rng.next_u64());

        double batch_loss = 0.0;
        for (std::size_t p = 0; p < pairs; ++p) {
            const auto base = static_cast<Eigen::Index>(p) * 2 * n;
            const auto loss = mil_loss({fwd.scores.data() + base, cfg.n_segments},
                                       {fwd.scores.data() + base + n, cfg.n_segments}, cfg);
            batch_loss += loss.loss;
            for (Eigen::Index i = 0; i < n; ++i) {
                score_grads[base + i] = loss.grad_normal[static_cast<std::size_t>(i)];
                score_grads[base + n + i] = loss.grad_abnormal[static_cast<std::size_t>(i)];
            }
        }
        const auto grads = backward(model.params, *fwd.trace, batch, score_grads);
        adam_step(model.params, model.optimizer, grads);
        result.loss_history.push_back(batch_loss);
    }
    return result;
}

PseudoLabelSet generate_pseudo_labels(const MlpParams& model, const Corpus& corpus, ScoreTransform transform) {
    PseudoLabelSet out;
    for (std::size_t v = 0; v < corpus.manifest.videos.size(); ++v) {
        const auto& rec = corpus.manifest.videos[v];
        const auto& seq = corpus.sequences[v];
        out.video_ids.push_back(rec.video_id);
        if (rec.label == 0) {
            out.targets.emplace_back(seq.num_clips(), 0.0);
            continue;
        }
        const Vector s = score(model, seq.features);
        out.targets.push_back(transform_scores(as_span(s), transform));
    }
    return out;
}

TrainResult train_stage_two(const Corpus& corpus, const PseudoLabelSet& pseudo, const Stage2Config& cfg,
                            const MlpParams* warm_start) {
    cfg.validate();
    keep_large_blocks_on_heap();
    if (corpus.sequences.size() != corpus.manifest.videos.size()) {
        throw ContractViolation("train_stage_two: corpus sequences do not match manifest records");
    }

    // (sequence index, pseudo-label index) for every participating video.
    std::vector<std::pair<std::size_t, std::size_t>> items;
    for (std::size_t v = 0; v < corpus.manifest.videos.size(); ++v) {
        const auto& rec = corpus.manifest.videos[v];
        if (rec.label == 0 && !cfg.include_normals) continue;
        const auto k = pseudo.find(rec.video_id);
        if (k == pseudo.size()) throw ConfigError("no pseudo labels for training video '" + rec.video_id + "'");
        if (pseudo.targets[k].size() != corpus.sequences[v].num_clips()) {
            throw ConfigError("pseudo labels for '" + rec.video_id + "' have " +
                              std::to_string(pseudo.targets[k].size()) + " entries, video has " +
                              std::to_string(corpus.sequences[v].num_clips()) + " clips");
        }
        items.emplace_back(v, k);
    }
    if (items.empty()) throw ConfigError("stage two has no training videos");

    TrainResult result;
    auto& model = result.model;
    if (cfg.init == Stage2Init::from_a) {
        if (warm_start == nullptr) throw ConfigError("stage2.init = from_a requires a stage-one model");
        model.params = *warm_start;
        model.params.dropout_rate = cfg.dropout_rate;
    } else {
        model.params = init_params(default_layer_dims(corpus.manifest.feature_dim), cfg.seed, cfg.dropout_rate);
    }
    model.optimizer = init_adam(model.params, cfg.lr);
    result.loss_history.reserve(cfg.epochs);

    Rng rng(cfg.seed, /*stream=*/2);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(items);
        double epoch_loss = 0.0;
        for (const auto& [v, k] : items) {
            const auto& feats = corpus.sequences[v].features;
            const auto fwd = forward(model.params, feats, Mode::train, rng.next_u64());
            const auto loss = bce_loss(as_span(fwd.scores), pseudo.targets[k]);
            epoch_loss += loss.loss;
            const Vector grad = Eigen::Map<const Vector>(loss.grad.data(), static_cast<Eigen::Index>(loss.grad.size()));
            adam_step(model.params, model.optimizer, backward(model.params, *fwd.trace, feats, grad));
        }
        result.loss_history.push_back(epoch_loss / static_cast<double>(items.size()));
    }
    return result;
}

RoundsResult run_rounds(const Corpus& corpus, const MilConfig& mil_cfg, const Stage2Config& s2_cfg,
                        const RoundsOptions& options) {
    if (options.rounds < 1) throw ConfigError("rounds must be >= 1");
    mil_cfg.validate();
    s2_cfg.validate();

    RoundsResult out;
    auto stage1 = train_stage_one(corpus, mil_cfg);
    out.model_a = std::move(stage1.model);
    out.stage1_loss = std::move(stage1.loss_history);
    if (options.eval_corpus) out.stage1_metrics = evaluate(out.model_a.params, *options.eval_corpus, options.eval).report;
    if (options.stage1_only) return out;

    const MlpParams* labeller = &out.model_a.params;
    out.rounds.reserve(options.rounds);
    for (std::size_t r = 1; r <= options.rounds; ++r) {
        Stage2Config cfg = s2_cfg;
        cfg.seed = s2_cfg.seed + (r - 1);
        RoundRecord record;
        record.round = r;
        record.pseudo = generate_pseudo_labels(*labeller, corpus, cfg.transform);
        auto stage2 = train_stage_two(corpus, record.pseudo, cfg, labeller);
        record.model = std::move(stage2.model);
        record.stage2_loss = std::move(stage2.loss_history);
        if (options.eval_corpus) record.metrics = evaluate(record.model.params, *options.eval_corpus, options.eval).report;
        out.rounds.push_back(std::move(record));
        labeller = &out.rounds.back().model.params;
    }
    return out;
}

std::string loss_history_csv(const std::vector<double>& history) {
    std::ostringstream out;
    out << "epoch,loss\n" << std::setprecision(17);
    for (std::size_t i = 0; i < history.size(); ++i) out << (i + 1) << ',' << history[i] << '\n';
    return out.str();
}

}  // namespace wsvad
