#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "wsvad/metrics.h"
#include "wsvad/synth.h"
#include "wsvad/training.h"

namespace wsvad {

struct RunPaths {
    std::filesystem::path corpus_dir = "run/corpus";
    // Default to <corpus_dir>/train/manifest.json and <corpus_dir>/test/manifest.json.
    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> test_manifest;
    std::filesystem::path model_dir = "run/model";
    std::filesystem::path report_dir = "run/report";
    // Model used by eval; defaults to model_B.mdl (model_A.mdl with stage1_only).
    std::optional<std::filesystem::path> model;
    // Model used by pseudo; defaults to model_A.mdl.
    std::optional<std::filesystem::path> labeller;

    std::filesystem::path train_manifest() const;
    std::filesystem::path eval_manifest() const;
};

/// Everything one command needs. Built from a JSON config file plus flag overrides.
struct RunConfig {
    std::uint64_t seed = 7;
    std::size_t rounds = 1;
    bool stage1_only = false;
    bool force = false;
    SynthSpec synth;
    std::size_t holdout_normal = 20;
    std::size_t holdout_abnormal = 20;
    MilConfig mil;
    Stage2Config stage2;
    EvalOptions eval;
    RunPaths paths;

    /// Throws ConfigError on the first invalid value.
    void validate() const;

    /// Sets the run seed and re-derives every component seed from it.
    void apply_seed(std::uint64_t new_seed);
};

/// Parses a config document. Unknown keys are rejected. Relative paths are
/// resolved against `base_dir`.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Effective configuration as JSON (absolute paths, all seeds explicit).
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace wsvad
