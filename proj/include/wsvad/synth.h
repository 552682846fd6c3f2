#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wsvad/core.h"

namespace wsvad {

/// Parameters of a synthetic feature corpus: AR(1) Gaussian clip features with
/// one planted window per abnormal video, shifted along a fixed unit direction.
struct SynthSpec {
    std::size_t n_normal = 40;
    std::size_t n_abnormal = 40;
    std::uint32_t d = 64;
    std::uint32_t clip_len = 32;
    std::pair<std::uint32_t, std::uint32_t> clips_range{12, 120};
    std::pair<double, double> anomaly_frac_range{0.05, 0.3};
    double separation = 2.0;
    double noise_sigma = 1.0;
    double temporal_corr = 0.5;
    std::uint64_t seed = 7;

    /// Empty when every invariant holds.
    std::vector<std::string> violations() const;
};

/// Unit direction along which anomalies are shifted; depends only on (seed, d).
Vector planted_direction(std::uint64_t seed, std::uint32_t d);

/// Writes `<out_dir>/manifest.json` and `<out_dir>/features/<video_id>.fsq`.
/// Distinct `split` values draw independent videos that share the planted
/// direction, so split 0 and split 1 form a train/held-out pair.
CorpusManifest generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir,
                               std::uint32_t split = 0);

/// Counts per label, a clip-count histogram and anomaly-fraction statistics.
/// Throws ValidationError when the corpus lacks a class.
std::string corpus_summary(const CorpusManifest& manifest);

}  // namespace wsvad
