#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wsvad/core.h"

namespace wsvad {

// FSQ1 feature file: 20-byte header (magic, then m, d, clip_len, num_frames as
// u32 little-endian) followed by m*d float32 little-endian values, row-major.
inline constexpr std::array<char, 4> kFeatureMagic = {'F', 'S', 'Q', '1'};
inline constexpr std::size_t kFeatureHeaderBytes = 20;

struct FeatureFileHeader {
    std::uint32_t m = 0;
    std::uint32_t d = 0;
    std::uint32_t clip_len = 0;
    std::uint32_t num_frames = 0;

    std::uint64_t payload_bytes() const noexcept { return std::uint64_t{m} * d * 4; }
};

/// Serialized bytes of a feature sequence. Throws ValidationError for non-finite
/// values or broken invariants.
std::vector<std::uint8_t> encode_features(const FeatureSequence& seq);
FeatureSequence decode_features(const std::vector<std::uint8_t>& bytes, std::string video_id = {});

void write_features(const FeatureSequence& seq, const std::filesystem::path& path);

/// The file stem becomes the video id unless one is given.
FeatureSequence read_features(const std::filesystem::path& path, std::string video_id = {});

/// Reads and checks the header against the file size without loading the payload.
FeatureFileHeader read_feature_header(const std::filesystem::path& path);

// Manifest JSON:
// {"feature_dim": int, "clip_len": int,
//  "videos": [{"video_id": str, "label": 0|1, "feature_path": str,
//              "num_frames": int, "frame_truth": [0|1, ...] (optional)}]}

/// Parses the manifest without touching feature files. Throws FormatError with a
/// JSON pointer on schema violations.
CorpusManifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);

/// Parses and validates. Throws ValidationError listing every violation.
CorpusManifest load_manifest(const std::filesystem::path& path,
                             const ValidationOptions& options = {});

std::string manifest_to_json(const CorpusManifest& manifest);
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);

/// Feature sequences of a manifest, loaded in record order.
struct Corpus {
    CorpusManifest manifest;
    std::vector<FeatureSequence> sequences;
};

Corpus load_corpus(const CorpusManifest& manifest);

// Score trace: one JSON object per line,
// {"video_id": str, "clip_scores": [float], "frame_scores": [float]}.
struct ScoreTrace {
    std::string video_id;
    std::vector<double> clip_scores;
    std::vector<double> frame_scores;
};

void write_score_traces(const std::vector<ScoreTrace>& traces, const std::filesystem::path& path);
std::vector<ScoreTrace> read_score_traces(const std::filesystem::path& path);

// Pseudo-label file: one JSON object per line, {"video_id": str, "targets": [float]}.
struct PseudoLabelSet {
    std::vector<std::string> video_ids;
    std::vector<std::vector<double>> targets;

    std::size_t size() const noexcept { return video_ids.size(); }
    /// Index of the entry for `video_id`, or size() when absent.
    std::size_t find(const std::string& video_id) const;
};

void write_pseudo_labels(const PseudoLabelSet& labels, const std::filesystem::path& path);
PseudoLabelSet read_pseudo_labels(const std::filesystem::path& path);

/// Writes `text` to `path` in one shot, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace wsvad
