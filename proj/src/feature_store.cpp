#include "wsvad/feature_store.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace wsvad {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

FeatureFileHeader parse_header(const std::uint8_t* p, const std::string& where) {
    if (std::memcmp(p, kFeatureMagic.data(), kFeatureMagic.size()) != 0) {
        throw FormatError(where + ": bad magic, expected \"FSQ1\"");
    }
    FeatureFileHeader h;
    h.m = get_u32(p + 4);
    h.d = get_u32(p + 8);
    h.clip_len = get_u32(p + 12);
    h.num_frames = get_u32(p + 16);
    return h;
}

void check_payload(const FeatureFileHeader& h, std::uint64_t actual, const std::string& where) {
    if (actual != h.payload_bytes()) {
        throw CorruptionError(where + ": payload is " + std::to_string(actual) + " bytes, header declares " +
                              std::to_string(h.m) + "x" + std::to_string(h.d) + " floats = " +
                              std::to_string(h.payload_bytes()) + " bytes");
    }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(size);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw IoError("failed reading " + path.string());
    }
    return bytes;
}

void write_bytes(const fs::path& path, const void* data, std::size_t size) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
T require(const json& obj, const std::string& key, const std::string& pointer) {
    const std::string at = pointer + "/" + key;
    if (!obj.contains(key)) throw FormatError("manifest schema: missing field at " + at);
    const json& v = obj.at(key);
    if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw FormatError("manifest schema: expected string at " + at);
        return v.get<std::string>();
    } else {
        if (!v.is_number_integer()) throw FormatError("manifest schema: expected integer at " + at);
        return v.get<T>();
    }
}

std::vector<json> parse_json_lines(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    std::vector<json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace

std::vector<std::uint8_t> encode_features(const FeatureSequence& seq) {
    if (auto problems = check_sequence(seq); !problems.empty()) throw ValidationError(std::move(problems));

    std::vector<std::uint8_t> out;
    const auto m = static_cast<std::uint32_t>(seq.features.rows());
    const auto d = static_cast<std::uint32_t>(seq.features.cols());
    out.reserve(kFeatureHeaderBytes + std::size_t{m} * d * 4);
    out.insert(out.end(), kFeatureMagic.begin(), kFeatureMagic.end());
    put_u32(out, m);
    put_u32(out, d);
    put_u32(out, seq.clip_len);
    put_u32(out, seq.num_frames);
    for (Eigen::Index i = 0; i < seq.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < seq.features.cols(); ++j) {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(seq.features(i, j))));
        }
    }
    return out;
}

FeatureSequence decode_features(const std::vector<std::uint8_t>& bytes, std::string video_id) {
    const std::string where = video_id.empty() ? std::string("feature buffer") : video_id;
    if (bytes.size() < kFeatureHeaderBytes) {
        throw FormatError(where + ": " + std::to_string(bytes.size()) + " bytes is shorter than the header");
    }
    const auto h = parse_header(bytes.data(), where);
    check_payload(h, bytes.size() - kFeatureHeaderBytes, where);

    FeatureSequence seq;
    seq.video_id = std::move(video_id);
    seq.clip_len = h.clip_len;
    seq.num_frames = h.num_frames;
    seq.features.resize(h.m, h.d);
    const std::uint8_t* p = bytes.data() + kFeatureHeaderBytes;
    for (std::uint32_t i = 0; i < h.m; ++i) {
        for (std::uint32_t j = 0; j < h.d; ++j, p += 4) {
            seq.features(i, j) = static_cast<double>(std::bit_cast<float>(get_u32(p)));
        }
    }
    return seq;
}

void write_features(const FeatureSequence& seq, const fs::path& path) {
    const auto bytes = encode_features(seq);
    write_bytes(path, bytes.data(), bytes.size());
}

FeatureSequence read_features(const fs::path& path, std::string video_id) {
    // The header is checked against the file size before the payload is allocated.
    read_feature_header(path);
    if (video_id.empty()) video_id = path.stem().string();
    try {
        return decode_features(read_bytes(path), std::move(video_id));
    } catch (const CorruptionError& e) {
        throw CorruptionError(path.string() + ": " + e.what());
    }
}

FeatureFileHeader read_feature_header(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file " + path.string());
    std::uint8_t raw[kFeatureHeaderBytes];
    if (!in.read(reinterpret_cast<char*>(raw), kFeatureHeaderBytes)) {
        throw FormatError(path.string() + ": file shorter than the 20-byte header");
    }
    const auto h = parse_header(raw, path.string());
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw IoError("cannot stat " + path.string() + ": " + ec.message());
    check_payload(h, size - kFeatureHeaderBytes, path.string());
    return h;
}

CorpusManifest parse_manifest(const std::string& json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw FormatError("manifest schema: expected object at \"\"");

    CorpusManifest manifest;
    manifest.base_dir = base_dir;
    const auto feature_dim = require<std::int64_t>(doc, "feature_dim", "");
    const auto clip_len = require<std::int64_t>(doc, "clip_len", "");
    if (feature_dim < 1) throw FormatError("manifest schema: /feature_dim must be >= 1");
    if (clip_len < 1) throw FormatError("manifest schema: /clip_len must be >= 1");
    manifest.feature_dim = static_cast<std::uint32_t>(feature_dim);
    manifest.clip_len = static_cast<std::uint32_t>(clip_len);

    if (!doc.contains("videos") || !doc["videos"].is_array()) {
        throw FormatError("manifest schema: expected array at /videos");
    }
    const auto& videos = doc["videos"];
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const std::string ptr = "/videos/" + std::to_string(i);
        const auto& v = videos[i];
        if (!v.is_object()) throw FormatError("manifest schema: expected object at " + ptr);
        VideoRecord rec;
        rec.video_id = require<std::string>(v, "video_id", ptr);
        const auto label = require<std::int64_t>(v, "label", ptr);
        if (label != 0 && label != 1) {
            throw FormatError("manifest schema: " + ptr + "/label must be 0 or 1, got " + std::to_string(label));
        }
        rec.label = static_cast<int>(label);
        rec.feature_path = require<std::string>(v, "feature_path", ptr);
        const auto frames = require<std::int64_t>(v, "num_frames", ptr);
        if (frames < 1 || frames > std::int64_t{UINT32_MAX}) {
            throw FormatError("manifest schema: " + ptr + "/num_frames must be a positive 32-bit integer");
        }
        rec.num_frames = static_cast<std::uint32_t>(frames);
        if (v.contains("frame_truth") && !v["frame_truth"].is_null()) {
            const auto& truth = v["frame_truth"];
            if (!truth.is_array()) throw FormatError("manifest schema: expected array at " + ptr + "/frame_truth");
            std::vector<std::uint8_t> bits;
            bits.reserve(truth.size());
            for (std::size_t k = 0; k < truth.size(); ++k) {
                const auto& b = truth[k];
                if (!b.is_number_integer() || (b.get<std::int64_t>() != 0 && b.get<std::int64_t>() != 1)) {
                    throw FormatError("manifest schema: expected 0 or 1 at " + ptr + "/frame_truth/" +
                                      std::to_string(k));
                }
                bits.push_back(static_cast<std::uint8_t>(b.get<int>()));
            }
            rec.frame_truth = std::move(bits);
        }
        manifest.videos.push_back(std::move(rec));
    }
    return manifest;
}

CorpusManifest load_manifest(const fs::path& path, const ValidationOptions& options) {
    auto manifest = parse_manifest(read_text_file(path), path.parent_path());
    if (auto problems = validate_manifest(manifest, options); !problems.empty()) {
        throw ValidationError(std::move(problems));
    }
    return manifest;
}

std::string manifest_to_json(const CorpusManifest& manifest) {
    json doc;
    doc["feature_dim"] = manifest.feature_dim;
    doc["clip_len"] = manifest.clip_len;
    doc["videos"] = json::array();
    for (const auto& rec : manifest.videos) {
        json v;
        v["video_id"] = rec.video_id;
        v["label"] = rec.label;
        v["feature_path"] = rec.feature_path;
        v["num_frames"] = rec.num_frames;
        if (rec.frame_truth) v["frame_truth"] = *rec.frame_truth;
        doc["videos"].push_back(std::move(v));
    }
    return doc.dump(1) + "\n";
}

void save_manifest(const CorpusManifest& manifest, const fs::path& path) {
    write_text_file(path, manifest_to_json(manifest));
}

Corpus load_corpus(const CorpusManifest& manifest) {
    Corpus corpus;
    corpus.manifest = manifest;
    corpus.sequences.reserve(manifest.videos.size());
    for (const auto& rec : manifest.videos) {
        auto seq = read_features(manifest.resolve(rec), rec.video_id);
        if (seq.feature_dim() != manifest.feature_dim) {
            throw ValidationError({"video '" + rec.video_id + "': feature dim " +
                                   std::to_string(seq.feature_dim()) + " differs from manifest " +
                                   std::to_string(manifest.feature_dim)});
        }
        if (auto problems = check_sequence(seq); !problems.empty()) throw ValidationError(std::move(problems));
        corpus.sequences.push_back(std::move(seq));
    }
    return corpus;
}

void write_score_traces(const std::vector<ScoreTrace>& traces, const fs::path& path) {
    std::string text;
    for (const auto& t : traces) {
        json row;
        row["video_id"] = t.video_id;
        row["clip_scores"] = t.clip_scores;
        row["frame_scores"] = t.frame_scores;
        text += row.dump() + "\n";
    }
    write_text_file(path, text);
}

std::vector<ScoreTrace> read_score_traces(const fs::path& path) {
    std::vector<ScoreTrace> traces;
    for (const auto& row : parse_json_lines(path)) {
        try {
            traces.push_back({row.at("video_id").get<std::string>(),
                              row.at("clip_scores").get<std::vector<double>>(),
                              row.at("frame_scores").get<std::vector<double>>()});
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ": malformed score trace: " + e.what());
        }
    }
    return traces;
}

std::size_t PseudoLabelSet::find(const std::string& video_id) const {
    for (std::size_t i = 0; i < video_ids.size(); ++i) {
        if (video_ids[i] == video_id) return i;
    }
    return video_ids.size();
}

void write_pseudo_labels(const PseudoLabelSet& labels, const fs::path& path) {
    std::string text;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        json row;
        row["video_id"] = labels.video_ids[i];
        row["targets"] = labels.targets[i];
        text += row.dump() + "\n";
    }
    write_text_file(path, text);
}

PseudoLabelSet read_pseudo_labels(const fs::path& path) {
    PseudoLabelSet labels;
    for (const auto& row : parse_json_lines(path)) {
        try {
            labels.video_ids.push_back(row.at("video_id").get<std::string>());
            auto targets = row.at("targets").get<std::vector<double>>();
            for (double t : targets) {
                if (!(t >= 0.0 && t <= 1.0)) {
                    throw FormatError(path.string() + ": target outside [0,1] for '" + labels.video_ids.back() + "'");
                }
            }
            labels.targets.push_back(std::move(targets));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ": malformed pseudo-label row: " + e.what());
        }
    }
    return labels;
}

void write_text_file(const fs::path& path, const std::string& text) {
    write_bytes(path, text.data(), text.size());
}

std::string read_text_file(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace wsvad
