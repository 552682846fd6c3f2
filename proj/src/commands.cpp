#include "wsvad/commands.h"

#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

namespace wsvad {

namespace fs = std::filesystem;

namespace {

void ensure_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create directory " + dir.string());
    const auto probe = dir / ".wsvad_write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw ConfigError("directory " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

bool dir_has_entries(const fs::path& dir) {
    std::error_code ec;
    return fs::is_directory(dir, ec) && fs::directory_iterator(dir, ec) != fs::directory_iterator();
}

template <typename F>
int usage_phase(const char* cmd, std::ostream& err, F&& f) {
    try {
        f();
        return kExitOk;
    } catch (const std::exception& e) {
        err << "wsvad " << cmd << ": " << e.what() << "\n";
        return kExitUsage;
    }
}

template <typename F>
int runtime_phase(const char* cmd, std::ostream& err, F&& f) {
    try {
        f();
        return kExitOk;
    } catch (const std::exception& e) {
        err << "wsvad " << cmd << ": " << e.what() << "\n";
        return kExitRuntime;
    }
}

CorpusManifest load_checked(const fs::path& path, bool require_both_classes) {
    if (!fs::exists(path)) throw ConfigError("manifest not found: " + path.string());
    ValidationOptions opts;
    opts.require_both_classes = require_both_classes;
    return load_manifest(path, opts);
}

GeneratorModel load_checked_model(const fs::path& path, std::uint32_t feature_dim) {
    if (!fs::exists(path)) throw ConfigError("model file not found: " + path.string());
    auto model = load_model(path);
    if (model.params.input_dim() != feature_dim) {
        throw ConfigError("model " + path.string() + " expects " + std::to_string(model.params.input_dim()) +
                          "-dim features, manifest has " + std::to_string(feature_dim));
    }
    return model;
}

bool has_frame_truth(const CorpusManifest& manifest) {
    for (const auto& rec : manifest.videos) {
        if (rec.frame_truth) return true;
    }
    return false;
}

nlohmann::ordered_json report_json(const std::optional<MetricsReport>& r) {
    if (!r) return nullptr;
    return nlohmann::ordered_json::parse(r->to_json());
}

fs::path eval_model_path(const RunConfig& cfg) {
    if (cfg.paths.model) return *cfg.paths.model;
    return cfg.paths.model_dir / (cfg.stage1_only ? "model_A.mdl" : "model_B.mdl");
}

}  // namespace

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const fs::path& dir = cfg.paths.corpus_dir;
    const bool with_holdout = cfg.holdout_normal > 0 && cfg.holdout_abnormal > 0;
    SynthSpec holdout = cfg.synth;
    holdout.n_normal = cfg.holdout_normal;
    holdout.n_abnormal = cfg.holdout_abnormal;

    int rc = usage_phase("synth", err, [&] {
        cfg.validate();
        if (auto problems = cfg.synth.violations(); !problems.empty()) throw ValidationError(problems);
        if (dir_has_entries(dir) && !cfg.force) {
            throw ConfigError("corpus directory " + dir.string() + " is not empty (use --force to overwrite)");
        }
        ensure_writable_dir(dir);
    });
    if (rc != kExitOk) return rc;

    return runtime_phase("synth", err, [&] {
        std::error_code ec;
        fs::remove_all(dir / "train", ec);
        fs::remove_all(dir / "test", ec);
        const auto train = generate_corpus(cfg.synth, dir / "train", 0);
        out << (dir / "train" / "manifest.json").string() << "\n";
        if (with_holdout) {
            generate_corpus(holdout, dir / "test", 1);
            out << (dir / "test" / "manifest.json").string() << "\n";
        }
        out << corpus_summary(train);
    });
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Corpus train;
    std::optional<Corpus> eval_corpus;
    int rc = usage_phase("train", err, [&] {
        cfg.validate();
        train = load_corpus(load_checked(cfg.paths.train_manifest(), true));
        const auto eval_path = cfg.paths.eval_manifest();
        if (fs::exists(eval_path)) {
            auto m = load_checked(eval_path, false);
            if (has_frame_truth(m)) eval_corpus = load_corpus(m);
        } else if (cfg.paths.test_manifest) {
            throw ConfigError("test manifest not found: " + eval_path.string());
        }
        if (!eval_corpus && has_frame_truth(train.manifest)) {
            err << "wsvad train: no held-out manifest, per-round metrics use the training corpus\n";
            eval_corpus = train;
        }
        ensure_writable_dir(cfg.paths.model_dir);
    });
    if (rc != kExitOk) return rc;

    return runtime_phase("train", err, [&] {
        RoundsOptions options;
        options.rounds = cfg.rounds;
        options.stage1_only = cfg.stage1_only;
        options.eval_corpus = eval_corpus ? &*eval_corpus : nullptr;
        options.eval = cfg.eval;
        const auto result = run_rounds(train, cfg.mil, cfg.stage2, options);

        const auto& dir = cfg.paths.model_dir;
        std::error_code ec;
        for (const auto& entry : fs::directory_iterator(dir)) {
            // Drop stage-two leftovers of earlier runs so the directory reflects this run only.
            const auto name = entry.path().filename().string();
            if (name.rfind("model_B", 0) == 0 || name.rfind("stage2_", 0) == 0) fs::remove(entry.path(), ec);
        }
        save_model(result.model_a, dir / "model_A.mdl");
        write_text_file(dir / "stage1_loss.csv", loss_history_csv(result.stage1_loss));

        nlohmann::ordered_json metrics;
        metrics["stage1"] = report_json(result.stage1_metrics);
        metrics["rounds"] = nlohmann::ordered_json::array();
        for (const auto& round : result.rounds) {
            const std::string tag = round.round == 1 ? "" : "_round" + std::to_string(round.round);
            write_text_file(dir / ("stage2" + tag + "_loss.csv"), loss_history_csv(round.stage2_loss));
            if (round.round > 1) save_model(round.model, dir / ("model_B" + tag + ".mdl"));
            nlohmann::ordered_json row;
            row["round"] = round.round;
            row["metrics"] = report_json(round.metrics);
            metrics["rounds"].push_back(std::move(row));
        }
        if (!result.rounds.empty()) save_model(result.rounds.back().model, dir / "model_B.mdl");
        write_text_file(dir / "rounds_metrics.json", metrics.dump(2) + "\n");
        write_text_file(dir / "run_config.json", run_config_to_json(cfg));

        out << std::setprecision(6);
        out << "stage one: " << result.stage1_loss.size() << " epochs, final batch loss "
            << (result.stage1_loss.empty() ? 0.0 : result.stage1_loss.back()) << "\n";
        if (result.stage1_metrics) out << "  auroc " << result.stage1_metrics->auroc << "\n";
        for (const auto& round : result.rounds) {
            out << "round " << round.round << ": stage-two final loss "
                << (round.stage2_loss.empty() ? 0.0 : round.stage2_loss.back());
            if (round.metrics) out << ", auroc " << round.metrics->auroc << ", eer " << round.metrics->eer;
            out << "\n";
        }
        out << "models written to " << dir.string() << "\n";
    });
}

int cmd_pseudo(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Corpus corpus;
    GeneratorModel labeller;
    const fs::path model_path = cfg.paths.labeller ? *cfg.paths.labeller : cfg.paths.model_dir / "model_A.mdl";
    int rc = usage_phase("pseudo", err, [&] {
        cfg.validate();
        corpus = load_corpus(load_checked(cfg.paths.train_manifest(), false));
        labeller = load_checked_model(model_path, corpus.manifest.feature_dim);
        ensure_writable_dir(cfg.paths.report_dir);
    });
    if (rc != kExitOk) return rc;

    return runtime_phase("pseudo", err, [&] {
        const auto labels = generate_pseudo_labels(labeller.params, corpus, cfg.stage2.transform);
        const auto path = cfg.paths.report_dir / "pseudo_labels.jsonl";
        write_pseudo_labels(labels, path);
        out << "labelled " << corpus.manifest.count_label(1) << " abnormal video(s), "
            << corpus.manifest.count_label(0) << " normal video(s) set to zero (" << to_string(cfg.stage2.transform)
            << ")\n"
            << path.string() << "\n";
    });
}

int cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    Evaluation evaluation;
    int rc = usage_phase("eval", err, [&] {
        cfg.validate();
        const auto manifest = load_checked(cfg.paths.eval_manifest(), false);
        if (!has_frame_truth(manifest)) {
            throw ConfigError("no video in " + cfg.paths.eval_manifest().string() +
                              " has frame_truth; frame-level metrics are impossible");
        }
        const auto model = load_checked_model(eval_model_path(cfg), manifest.feature_dim);
        // Metrics are computed up front so that unusable truth fails before any write.
        evaluation = evaluate(model.params, load_corpus(manifest), cfg.eval);
        ensure_writable_dir(cfg.paths.report_dir);
    });
    if (rc != kExitOk) return rc;

    return runtime_phase("eval", err, [&] {
        const auto& dir = cfg.paths.report_dir;
        write_text_file(dir / "metrics.json", evaluation.report.to_json());
        write_score_traces(evaluation.traces, dir / "traces.jsonl");
        out << evaluation.report.to_json();
    });
}

int cmd_pipeline(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (int rc = cmd_synth(cfg, out, err); rc != kExitOk) return rc;
    if (int rc = cmd_train(cfg, out, err); rc != kExitOk) return rc;
    return cmd_eval(cfg, out, err);
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage weakly supervised clip scoring over precomputed video features", "wsvad"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> rounds;
    bool stage1_only = false;
    std::string transform;
    bool macro = false;
    bool force = false;

    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "Run seed; overrides every seed in the config");
    app.add_option("--rounds", rounds, "Number of stage-two rounds");
    app.add_flag("--stage1-only", stage1_only, "Train only the stage-one generator");
    app.add_option("--transform", transform, "Pseudo-label transform")->check(CLI::IsMember({"identity", "minmax"}));
    app.add_flag("--macro-average", macro, "Average AUROC/EER per video instead of pooling frames");
    app.add_flag("--force", force, "Overwrite an existing synthetic corpus");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "Generate a seeded synthetic feature corpus"},
        {"train", "Run stage one and the stage-two rounds"},
        {"pseudo", "Write pseudo labels from a stage-one model"},
        {"eval", "Score a manifest and write metrics and traces"},
        {"pipeline", "synth, train and eval in sequence"},
    };
    for (const auto& [name, help] : commands) app.add_subcommand(name, help)->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "wsvad: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    RunConfig cfg;
    try {
        cfg = config_path.empty() ? parse_run_config("{}", fs::current_path()) : load_run_config(config_path);
        if (seed) cfg.apply_seed(*seed);
        if (rounds) cfg.rounds = *rounds;
        if (stage1_only) cfg.stage1_only = true;
        if (!transform.empty()) cfg.stage2.transform = parse_transform(transform);
        if (macro) cfg.eval.macro_average = true;
        cfg.force = force;
        cfg.validate();
    } catch (const std::exception& e) {
        err << "wsvad: " << e.what() << "\n";
        return kExitUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "synth") return cmd_synth(cfg, out, err);
    if (name == "train") return cmd_train(cfg, out, err);
    if (name == "pseudo") return cmd_pseudo(cfg, out, err);
    if (name == "eval") return cmd_eval(cfg, out, err);
    return cmd_pipeline(cfg, out, err);
}

}  // namespace wsvad
