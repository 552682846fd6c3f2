#include "wsvad/synth.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "wsvad/feature_store.h"
#include "wsvad/random.h"

namespace wsvad {

namespace fs = std::filesystem;

std::vector<std::string> SynthSpec::violations() const {
    std::vector<std::string> out;
    if (n_normal < 1) out.push_back("synth.n_normal must be >= 1");
    if (n_abnormal < 1) out.push_back("synth.n_abnormal must be >= 1");
    if (d < 1) out.push_back("synth.d must be >= 1");
    if (clip_len < 1) out.push_back("synth.clip_len must be >= 1");
    if (clips_range.first < 1 || clips_range.first > clips_range.second) {
        out.push_back("synth.clips_range must satisfy 1 <= min <= max");
    }
    if (!(anomaly_frac_range.first > 0.0 && anomaly_frac_range.first <= anomaly_frac_range.second &&
          anomaly_frac_range.second <= 1.0)) {
        out.push_back("synth.anomaly_frac_range must satisfy 0 < min <= max <= 1");
    }
    if (!(separation > 0.0)) out.push_back("synth.separation must be > 0");
    if (!(noise_sigma > 0.0)) out.push_back("synth.noise_sigma must be > 0");
    if (!(temporal_corr >= 0.0 && temporal_corr < 1.0)) out.push_back("synth.temporal_corr must lie in [0, 1)");
    return out;
}

Vector planted_direction(std::uint64_t seed, std::uint32_t d) {
    Rng rng(seed, /*stream=*/0xA11);
    Vector u(d);
    do {
        for (std::uint32_t i = 0; i < d; ++i) u[i] = rng.normal();
    } while (u.norm() == 0.0);
    return u / u.norm();
}

namespace {

std::string video_name(std::uint32_t split, bool abnormal, std::size_t index) {
    std::ostringstream name;
    name << (split == 0 ? "train" : split == 1 ? "test" : "split" + std::to_string(split)) << '_' << (abnormal ? "abn" : "nrm") << '_'
         << std::setw(4) << std::setfill('0') << index;
    return name.str();
}

}  // namespace

CorpusManifest generate_corpus(const SynthSpec& spec, const fs::path& out_dir, std::uint32_t split) {
    if (auto problems = spec.violations(); !problems.empty()) throw ValidationError(std::move(problems));

    const Vector direction = planted_direction(spec.seed, spec.d);
    Rng rng(spec.seed, /*stream=*/100 + split);

    CorpusManifest manifest;
    manifest.feature_dim = spec.d;
    manifest.clip_len = spec.clip_len;
    manifest.base_dir = out_dir;

    const double rho = spec.temporal_corr;
    const double innovation = spec.noise_sigma * std::sqrt(1.0 - rho * rho);
    const std::size_t total = spec.n_normal + spec.n_abnormal;
    for (std::size_t k = 0; k < total; ++k) {
        const bool abnormal = k >= spec.n_normal;
        const std::size_t index = abnormal ? k - spec.n_normal : k;
        FeatureSequence seq;
        seq.video_id = video_name(split, abnormal, index);
        seq.clip_len = spec.clip_len;
        const auto m = static_cast<std::uint32_t>(rng.between(spec.clips_range.first, spec.clips_range.second));
        // Up to clip_len - 1 trailing frames that do not fill a whole clip.
        seq.num_frames = m * spec.clip_len + static_cast<std::uint32_t>(rng.below(spec.clip_len));

        // Stationary AR(1): x_0 ~ N(0, s^2), x_t = rho x_{t-1} + s sqrt(1 - rho^2) e_t.
        seq.features.resize(m, spec.d);
        for (std::uint32_t j = 0; j < spec.d; ++j) seq.features(0, j) = spec.noise_sigma * rng.normal();
        for (std::uint32_t i = 1; i < m; ++i) {
            for (std::uint32_t j = 0; j < spec.d; ++j) {
                seq.features(i, j) = rho * seq.features(i - 1, j) + innovation * rng.normal();
            }
        }

        std::vector<std::uint8_t> truth(seq.num_frames, 0);
        if (abnormal) {
            const double frac = rng.uniform(spec.anomaly_frac_range.first, spec.anomaly_frac_range.second);
            const auto len = std::clamp<std::uint32_t>(static_cast<std::uint32_t>(std::lround(frac * m)), 1, m);
            const auto start = static_cast<std::uint32_t>(rng.below(m - len + 1));
            for (std::uint32_t i = start; i < start + len; ++i) {
                seq.features.row(i) += spec.separation * direction.transpose();
            }
            // The last clip also owns the trailing frames.
            const std::uint32_t first_frame = start * spec.clip_len;
            const std::uint32_t end_frame = (start + len == m) ? seq.num_frames : (start + len) * spec.clip_len;
            std::fill(truth.begin() + first_frame, truth.begin() + end_frame, 1);
        }
        // Storage is float32; round here so the in-memory corpus matches the files.
        seq.features = seq.features.cast<float>().cast<double>();

        const std::string rel = "features/" + seq.video_id + ".fsq";
        write_features(seq, out_dir / rel);
        manifest.videos.push_back({seq.video_id, abnormal ? 1 : 0, rel, seq.num_frames, std::move(truth)});
    }
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

std::string corpus_summary(const CorpusManifest& manifest) {
    ValidationOptions opts;
    opts.check_feature_files = false;
    if (auto problems = validate_manifest(manifest, opts); !problems.empty()) throw ValidationError(std::move(problems));

    std::vector<std::size_t> clips;
    std::vector<double> fracs;
    for (const auto& rec : manifest.videos) {
        clips.push_back(expected_clip_count(rec.num_frames, manifest.clip_len));
        if (rec.label == 1 && rec.frame_truth) {
            const auto& t = *rec.frame_truth;
            fracs.push_back(static_cast<double>(std::count(t.begin(), t.end(), 1)) / static_cast<double>(t.size()));
        }
    }

    std::ostringstream out;
    out << "videos: " << manifest.videos.size() << "\n";
    out << "normal: " << manifest.count_label(0) << "\n";
    out << "abnormal: " << manifest.count_label(1) << "\n";
    out << "feature_dim: " << manifest.feature_dim << "\n";
    out << "clip_len: " << manifest.clip_len << "\n";

    const auto [lo_it, hi_it] = std::minmax_element(clips.begin(), clips.end());
    const std::size_t lo = *lo_it;
    const std::size_t hi = *hi_it;
    out << "clips per video: min " << lo << ", max " << hi << "\n";
    constexpr std::size_t kBins = 8;
    const std::size_t width = std::max<std::size_t>(1, (hi - lo + kBins) / kBins);
    std::vector<std::size_t> hist((hi - lo) / width + 1, 0);
    for (auto c : clips) ++hist[(c - lo) / width];
    out << "clip-count histogram:\n";
    for (std::size_t b = 0; b < hist.size(); ++b) {
        const std::size_t b_lo = lo + b * width;
        const std::size_t b_hi = std::min(hi, b_lo + width - 1);
        out << "  [" << b_lo << ", " << b_hi << "]: " << hist[b] << "\n";
    }

    out << std::fixed << std::setprecision(4);
    if (fracs.empty()) {
        out << "anomaly fraction: no frame truth on abnormal videos\n";
    } else {
        double mean = 0.0;
        for (double f : fracs) mean += f;
        mean /= static_cast<double>(fracs.size());
        const auto [flo, fhi] = std::minmax_element(fracs.begin(), fracs.end());
        out << "anomaly fraction (frames): min " << *flo << ", mean " << mean << ", max " << *fhi << "\n";
    }
    return out.str();
}

}  // namespace wsvad
