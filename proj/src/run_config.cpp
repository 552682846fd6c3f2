#include "wsvad/run_config.h"

#include <set>

#include <json.hpp>

namespace wsvad {

using json = nlohmann::json;
namespace fs = std::filesystem;

fs::path RunPaths::train_manifest() const { return manifest ? *manifest : corpus_dir / "train" / "manifest.json"; }

fs::path RunPaths::eval_manifest() const {
    return test_manifest ? *test_manifest : corpus_dir / "test" / "manifest.json";
}

void RunConfig::validate() const {
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (auto problems = synth.violations(); !problems.empty()) throw ConfigError(problems.front());
    if ((holdout_normal == 0) != (holdout_abnormal == 0)) {
        throw ConfigError("synth.holdout_normal and synth.holdout_abnormal must both be zero or both positive");
    }
    mil.validate();
    stage2.validate();
    if (!(eval.threshold >= 0.0 && eval.threshold <= 1.0)) throw ConfigError("metrics.threshold must lie in [0, 1]");
}

void RunConfig::apply_seed(std::uint64_t new_seed) {
    seed = new_seed;
    synth.seed = new_seed;
    mil.seed = new_seed;
    stage2.seed = new_seed + 1;
}

namespace {

// Reads fields of one JSON object, rejecting keys that were never consumed.
class Section {
public:
    Section(const json& obj, std::string pointer) : obj_(obj), pointer_(std::move(pointer)) {
        if (!obj_.is_object()) throw ConfigError("config: expected object at " + where());
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        const auto& v = obj_.at(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0)) {
                    throw ConfigError("");
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw ConfigError("");
            } else {
                if (!v.is_string()) throw ConfigError("");
            }
            out = v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError("config: wrong type at " + pointer_ + "/" + key);
        }
    }

    template <typename T>
    void read_pair(const std::string& key, std::pair<T, T>& out) {
        seen_.insert(key);
        if (!obj_.contains(key)) return;
        const auto& v = obj_.at(key);
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
            throw ConfigError("config: expected [min, max] at " + pointer_ + "/" + key);
        }
        if constexpr (std::is_integral_v<T>) {
            if (!v[0].is_number_integer() || !v[1].is_number_integer() || v[0].get<std::int64_t>() < 0 ||
                v[1].get<std::int64_t>() < 0) {
                throw ConfigError("config: expected non-negative integers at " + pointer_ + "/" + key);
            }
        }
        out = {v[0].get<T>(), v[1].get<T>()};
    }

    void read_path(const std::string& key, fs::path& out, const fs::path& base) {
        if (is_null(key)) return;
        std::string s;
        read(key, s);
        if (has(key)) out = resolve(s, base);
    }

    void read_path(const std::string& key, std::optional<fs::path>& out, const fs::path& base) {
        if (is_null(key)) return;
        std::string s;
        read(key, s);
        if (has(key)) out = resolve(s, base);
    }

    Section child(const std::string& key) {
        seen_.insert(key);
        static const json empty = json::object();
        return Section(obj_.contains(key) ? obj_.at(key) : empty, pointer_ + "/" + key);
    }

    void finish() const {
        for (const auto& [key, _] : obj_.items()) {
            if (!seen_.count(key)) throw ConfigError("config: unknown key " + pointer_ + "/" + key);
        }
    }

private:
    // A null path means "use the default"; run_config_to_json emits those.
    bool is_null(const std::string& key) {
        seen_.insert(key);
        return obj_.contains(key) && obj_.at(key).is_null();
    }
    static fs::path resolve(const std::string& s, const fs::path& base) {
        fs::path p(s);
        return p.is_absolute() ? p : (base / p).lexically_normal();
    }
    std::string where() const { return pointer_.empty() ? "\"\"" : pointer_; }

    const json& obj_;
    std::string pointer_;
    std::set<std::string> seen_;
};

json path_or_null(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    const fs::path base = base_dir.empty() ? fs::current_path() : fs::absolute(base_dir);
    cfg.paths.corpus_dir = base / cfg.paths.corpus_dir;
    cfg.paths.model_dir = base / cfg.paths.model_dir;
    cfg.paths.report_dir = base / cfg.paths.report_dir;

    Section root(doc, "");
    std::uint64_t seed = cfg.seed;
    root.read("seed", seed);
    cfg.apply_seed(seed);
    root.read("rounds", cfg.rounds);
    root.read("stage1_only", cfg.stage1_only);

    {
        auto s = root.child("synth");
        s.read("n_normal", cfg.synth.n_normal);
        s.read("n_abnormal", cfg.synth.n_abnormal);
        s.read("d", cfg.synth.d);
        s.read("clip_len", cfg.synth.clip_len);
        s.read_pair("clips_range", cfg.synth.clips_range);
        s.read_pair("anomaly_frac_range", cfg.synth.anomaly_frac_range);
        s.read("separation", cfg.synth.separation);
        s.read("noise_sigma", cfg.synth.noise_sigma);
        s.read("temporal_corr", cfg.synth.temporal_corr);
        s.read("seed", cfg.synth.seed);
        s.read("holdout_normal", cfg.holdout_normal);
        s.read("holdout_abnormal", cfg.holdout_abnormal);
        s.finish();
    }
    {
        auto s = root.child("mil");
        s.read("epsilon", cfg.mil.epsilon);
        s.read("lambda_sparsity", cfg.mil.lambda_sparsity);
        s.read("lambda_smooth", cfg.mil.lambda_smooth);
        s.read("n_segments", cfg.mil.n_segments);
        s.read("pairs_per_batch", cfg.mil.pairs_per_batch);
        s.read("epochs", cfg.mil.epochs);
        s.read("lr", cfg.mil.lr);
        s.read("dropout_rate", cfg.mil.dropout_rate);
        s.read("seed", cfg.mil.seed);
        s.finish();
    }
    {
        auto s = root.child("stage2");
        std::string transform = to_string(cfg.stage2.transform);
        std::string init = to_string(cfg.stage2.init);
        s.read("transform", transform);
        s.read("init", init);
        cfg.stage2.transform = parse_transform(transform);
        cfg.stage2.init = parse_stage2_init(init);
        s.read("epochs", cfg.stage2.epochs);
        s.read("lr", cfg.stage2.lr);
        s.read("include_normals", cfg.stage2.include_normals);
        s.read("dropout_rate", cfg.stage2.dropout_rate);
        s.read("seed", cfg.stage2.seed);
        s.finish();
    }
    {
        auto s = root.child("metrics");
        s.read("macro_average", cfg.eval.macro_average);
        s.read("threshold", cfg.eval.threshold);
        s.finish();
    }
    {
        auto s = root.child("paths");
        s.read_path("corpus_dir", cfg.paths.corpus_dir, base);
        s.read_path("manifest", cfg.paths.manifest, base);
        s.read_path("test_manifest", cfg.paths.test_manifest, base);
        s.read_path("model_dir", cfg.paths.model_dir, base);
        s.read_path("report_dir", cfg.paths.report_dir, base);
        s.read_path("model", cfg.paths.model, base);
        s.read_path("labeller", cfg.paths.labeller, base);
        s.finish();
    }
    root.finish();
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    return parse_run_config(text, fs::absolute(path).parent_path());
}

std::string run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["rounds"] = cfg.rounds;
    j["stage1_only"] = cfg.stage1_only;
    j["synth"] = {{"n_normal", cfg.synth.n_normal},
                  {"n_abnormal", cfg.synth.n_abnormal},
                  {"d", cfg.synth.d},
                  {"clip_len", cfg.synth.clip_len},
                  {"clips_range", {cfg.synth.clips_range.first, cfg.synth.clips_range.second}},
                  {"anomaly_frac_range", {cfg.synth.anomaly_frac_range.first, cfg.synth.anomaly_frac_range.second}},
                  {"separation", cfg.synth.separation},
                  {"noise_sigma", cfg.synth.noise_sigma},
                  {"temporal_corr", cfg.synth.temporal_corr},
                  {"seed", cfg.synth.seed},
                  {"holdout_normal", cfg.holdout_normal},
                  {"holdout_abnormal", cfg.holdout_abnormal}};
    j["mil"] = {{"epsilon", cfg.mil.epsilon},
                {"lambda_sparsity", cfg.mil.lambda_sparsity},
                {"lambda_smooth", cfg.mil.lambda_smooth},
                {"n_segments", cfg.mil.n_segments},
                {"pairs_per_batch", cfg.mil.pairs_per_batch},
                {"epochs", cfg.mil.epochs},
                {"lr", cfg.mil.lr},
                {"dropout_rate", cfg.mil.dropout_rate},
                {"seed", cfg.mil.seed}};
    j["stage2"] = {{"transform", to_string(cfg.stage2.transform)},
                   {"init", to_string(cfg.stage2.init)},
                   {"epochs", cfg.stage2.epochs},
                   {"lr", cfg.stage2.lr},
                   {"include_normals", cfg.stage2.include_normals},
                   {"dropout_rate", cfg.stage2.dropout_rate},
                   {"seed", cfg.stage2.seed}};
    j["metrics"] = {{"macro_average", cfg.eval.macro_average}, {"threshold", cfg.eval.threshold}};
    j["paths"] = {{"corpus_dir", cfg.paths.corpus_dir.string()},
                  {"manifest", path_or_null(cfg.paths.manifest)},
                  {"test_manifest", path_or_null(cfg.paths.test_manifest)},
                  {"model_dir", cfg.paths.model_dir.string()},
                  {"report_dir", cfg.paths.report_dir.string()},
                  {"model", path_or_null(cfg.paths.model)},
                  {"labeller", path_or_null(cfg.paths.labeller)}};
    return j.dump(2) + "\n";
}

}  // namespace wsvad
