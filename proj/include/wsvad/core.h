#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace wsvad {

// Row-major so that a clip feature is a contiguous row, matching the on-disk layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Error hierarchy. Every library failure derives from wsvad::Error.
// ---------------------------------------------------------------------------
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, stale trace, ...).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Bytes on disk do not follow the expected format (bad magic, wrong version).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Header is well formed but the payload disagrees with it.
class CorruptionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class MetricError : public Error {
public:
    using Error::Error;
};

/// Data failed one or more invariants; the individual violations are kept.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Clip features of one video as produced by an external encoder: M rows of D values.
struct FeatureSequence {
    std::string video_id;
    Matrix features;
    std::uint32_t clip_len = 32;
    std::uint32_t num_frames = 0;

    std::size_t num_clips() const noexcept { return static_cast<std::size_t>(features.rows()); }
    std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
};

/// Number of clips an extractor emits for a video of `num_frames` frames.
std::size_t expected_clip_count(std::uint32_t num_frames, std::uint32_t clip_len);

/// Empty when the sequence satisfies every FeatureSequence invariant.
std::vector<std::string> check_sequence(const FeatureSequence& seq);

struct VideoRecord {
    std::string video_id;
    int label = 0;  // 1 = contains at least one fight event
    std::string feature_path;
    std::uint32_t num_frames = 0;
    std::optional<std::vector<std::uint8_t>> frame_truth;
};

struct CorpusManifest {
    std::vector<VideoRecord> videos;
    std::uint32_t feature_dim = 0;
    std::uint32_t clip_len = 32;
    // Directory that relative feature paths are resolved against.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const VideoRecord& record) const;
    std::size_t count_label(int label) const;
};

struct SegmentBag {
    std::string video_id;
    Matrix segments;

    std::size_t n_segments() const noexcept { return static_cast<std::size_t>(segments.rows()); }
};

struct ScoreSequence {
    std::string video_id;
    std::vector<double> scores;
};

struct ValidationOptions {
    // Training corpora need both classes; evaluation or pseudo-labelling inputs may not.
    bool require_both_classes = true;
    // Open each feature file and compare its header with the record.
    bool check_feature_files = true;
};

/// Lists every invariant violation in the manifest. Unreadable feature files are
/// reported as violations rather than thrown.
std::vector<std::string> validate_manifest(const CorpusManifest& manifest,
                                           const ValidationOptions& options = {});

/// Temporal average of `seq` into n segments. When M >= n, segment j is the mean
/// of the rows i with floor(i*n/M) == j. When M < n, segment j copies row
/// floor(j*M/n).
SegmentBag bag_segments(const FeatureSequence& seq, std::size_t n);

}  // namespace wsvad
