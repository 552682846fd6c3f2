#include "wsvad/core.h"

#include <cmath>
#include <set>
#include <sstream>

#include "wsvad/feature_store.h"

namespace wsvad {

namespace {

std::string join_violations(const std::vector<std::string>& violations) {
    std::ostringstream out;
    out << violations.size() << " violation(s)";
    for (const auto& v : violations) out << "\n  - " << v;
    return out.str();
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> violations)
    : Error(join_violations(violations)), violations_(std::move(violations)) {}

std::size_t expected_clip_count(std::uint32_t num_frames, std::uint32_t clip_len) {
    if (clip_len == 0) throw ContractViolation("clip_len must be positive");
    if (num_frames < clip_len) return 1;  // the extractor pads the only clip
    return num_frames / clip_len;
}

std::vector<std::string> check_sequence(const FeatureSequence& seq) {
    std::vector<std::string> out;
    const std::string who = "sequence '" + seq.video_id + "': ";
    if (seq.features.rows() < 1) out.push_back(who + "no clips (M = 0)");
    if (seq.features.cols() < 1) out.push_back(who + "feature dimension is 0");
    if (seq.clip_len == 0) out.push_back(who + "clip_len must be positive");
    if (seq.num_frames == 0) out.push_back(who + "num_frames must be positive");
    if (seq.clip_len > 0 && seq.num_frames > 0) {
        const auto expected = expected_clip_count(seq.num_frames, seq.clip_len);
        if (static_cast<std::size_t>(seq.features.rows()) != expected) {
            out.push_back(who + "has " + std::to_string(seq.features.rows()) + " clips, expected " +
                          std::to_string(expected) + " for " + std::to_string(seq.num_frames) +
                          " frames at clip_len " + std::to_string(seq.clip_len));
        }
    }
    if (!seq.features.allFinite()) out.push_back(who + "contains non-finite feature values");
    return out;
}

std::filesystem::path CorpusManifest::resolve(const VideoRecord& record) const {
    const std::filesystem::path p(record.feature_path);
    return p.is_absolute() ? p : base_dir / p;
}

std::size_t CorpusManifest::count_label(int label) const {
    std::size_t n = 0;
    for (const auto& v : videos) n += (v.label == label) ? 1 : 0;
    return n;
}

std::vector<std::string> validate_manifest(const CorpusManifest& manifest,
                                           const ValidationOptions& options) {
    std::vector<std::string> out;
    if (manifest.feature_dim == 0) out.push_back("feature_dim must be positive");
    if (manifest.clip_len == 0) out.push_back("clip_len must be positive");
    if (manifest.videos.empty()) out.push_back("manifest lists no videos");

    std::set<std::string> seen;
    for (const auto& rec : manifest.videos) {
        const std::string who = "video '" + rec.video_id + "': ";
        if (rec.video_id.empty()) out.push_back("video with empty video_id");
        if (!seen.insert(rec.video_id).second) out.push_back(who + "duplicate video_id");
        if (rec.label != 0 && rec.label != 1) {
            out.push_back(who + "label must be 0 or 1, got " + std::to_string(rec.label));
        }
        if (rec.num_frames == 0) out.push_back(who + "num_frames must be positive");
        if (rec.frame_truth) {
            const auto& truth = *rec.frame_truth;
            if (truth.size() != rec.num_frames) {
                out.push_back(who + "frame_truth has " + std::to_string(truth.size()) +
                              " entries but num_frames is " + std::to_string(rec.num_frames));
            }
            bool any_positive = false;
            for (auto bit : truth) {
                if (bit > 1) {
                    out.push_back(who + "frame_truth entries must be 0 or 1");
                    break;
                }
                any_positive = any_positive || bit == 1;
            }
            if (rec.label == 0 && any_positive) {
                out.push_back(who + "label 0 but frame_truth marks positive frames");
            }
        }

        if (!options.check_feature_files || manifest.clip_len == 0 || rec.num_frames == 0) continue;
        const auto path = manifest.resolve(rec);
        try {
            const auto header = read_feature_header(path);
            if (header.d != manifest.feature_dim) {
                out.push_back(who + "feature file " + path.string() + " has d = " +
                              std::to_string(header.d) + ", manifest feature_dim is " +
                              std::to_string(manifest.feature_dim));
            }
            if (header.clip_len != manifest.clip_len) {
                out.push_back(who + "feature file clip_len " + std::to_string(header.clip_len) +
                              " differs from manifest clip_len " + std::to_string(manifest.clip_len));
            }
            if (header.num_frames != rec.num_frames) {
                out.push_back(who + "feature file num_frames " + std::to_string(header.num_frames) +
                              " differs from record num_frames " + std::to_string(rec.num_frames));
            }
            if (header.m != expected_clip_count(rec.num_frames, manifest.clip_len)) {
                out.push_back(who + "feature file has " + std::to_string(header.m) +
                              " clips, expected " +
                              std::to_string(expected_clip_count(rec.num_frames, manifest.clip_len)));
            }
        } catch (const Error& e) {
            out.push_back(who + "unreadable feature file: " + e.what());
        }
    }

    if (options.require_both_classes) {
        if (manifest.count_label(0) == 0) out.push_back("corpus has no label-0 (normal) video");
        if (manifest.count_label(1) == 0) out.push_back("corpus has no label-1 (abnormal) video");
    }
    return out;
}

SegmentBag bag_segments(const FeatureSequence& seq, std::size_t n) {
    if (n == 0) throw ContractViolation("bag_segments: n must be at least 1");
    const auto m = static_cast<std::uint64_t>(seq.features.rows());
    if (m == 0) throw ContractViolation("bag_segments: sequence '" + seq.video_id + "' is empty");

    SegmentBag bag;
    bag.video_id = seq.video_id;
    bag.segments = Matrix::Zero(static_cast<Eigen::Index>(n), seq.features.cols());
    if (m < n) {
        // Too few rows to average: each segment copies its nearest lower row.
        for (std::uint64_t j = 0; j < n; ++j) {
            bag.segments.row(static_cast<Eigen::Index>(j)) =
                seq.features.row(static_cast<Eigen::Index>(j * m / n));
        }
        return bag;
    }
    std::vector<std::size_t> counts(n, 0);
    for (std::uint64_t i = 0; i < m; ++i) {
        const auto j = static_cast<Eigen::Index>(i * n / m);
        bag.segments.row(j) += seq.features.row(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(j)];
    }
    // With m >= n every segment receives at least one row.
    for (std::size_t j = 0; j < n; ++j) {
        bag.segments.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(counts[j]);
    }
    return bag;
}

}  // namespace wsvad
