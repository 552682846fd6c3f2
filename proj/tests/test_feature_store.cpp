#include <gtest/gtest.h>

#include <cmath>

#include "test_helpers.h"
#include "wsvad/feature_store.h"

using namespace wsvad;
using wsvad::testing::TempDir;
using wsvad::testing::file_bytes;

TEST(FeatureFile, SingleValueLayoutIsBitExact) {
    TempDir dir("fs_layout");
    FeatureSequence seq;
    seq.video_id = "one";
    seq.clip_len = 32;
    seq.num_frames = 7;
    seq.features = Matrix::Constant(1, 1, 0.5);
    write_features(seq, dir / "one.fsq");

    const auto bytes = file_bytes(dir / "one.fsq");
    // 0.5f is 0x3F000000, stored little-endian.
    const std::vector<std::uint8_t> expected = {'F', 'S', 'Q', '1', 1, 0, 0, 0, 1, 0, 0, 0, 32, 0, 0, 0,
                                                7,   0,   0,   0,   0, 0, 0, 0x3F};
    EXPECT_EQ(bytes, expected);
}

TEST(FeatureFile, RoundTripPreservesMatrixAndHeader) {
    TempDir dir("fs_rt");
    Rng rng(8);
    const auto seq = wsvad::testing::random_sequence(rng, 9, 13, "clipper");
    write_features(seq, dir / "clipper.fsq");
    const auto back = read_features(dir / "clipper.fsq");
    EXPECT_EQ(back.video_id, "clipper");
    EXPECT_EQ(back.clip_len, seq.clip_len);
    EXPECT_EQ(back.num_frames, seq.num_frames);
    EXPECT_EQ(back.features, seq.features);
}

TEST(FeatureFile, ByteLevelRoundTripProperty) {
    TempDir dir("fs_prop");
    Rng rng(9);
    for (int trial = 0; trial < 25; ++trial) {
        const auto m = static_cast<std::uint32_t>(rng.between(1, 40));
        const auto d = static_cast<std::uint32_t>(rng.between(1, 40));
        const auto seq = wsvad::testing::random_sequence(rng, m, d);
        const auto path = dir / "p.fsq";
        write_features(seq, path);
        const auto first = file_bytes(path);
        write_features(read_features(path), path);
        EXPECT_EQ(file_bytes(path), first);
    }
}

TEST(FeatureFile, NonFiniteValueIsRefused) {
    TempDir dir("fs_nan");
    Rng rng(1);
    auto seq = wsvad::testing::random_sequence(rng, 2, 2);
    seq.features(0, 1) = std::nan("");
    EXPECT_THROW(write_features(seq, dir / "bad.fsq"), ValidationError);
    EXPECT_FALSE(std::filesystem::exists(dir / "bad.fsq"));
}

TEST(FeatureFile, BadMagicIsAFormatError) {
    TempDir dir("fs_magic");
    Rng rng(2);
    write_features(wsvad::testing::random_sequence(rng, 2, 2), dir / "x.fsq");
    auto bytes = file_bytes(dir / "x.fsq");
    std::fill(bytes.begin(), bytes.begin() + 4, 'X');
    write_text_file(dir / "x.fsq", std::string(bytes.begin(), bytes.end()));
    EXPECT_THROW(read_features(dir / "x.fsq"), FormatError);
}

TEST(FeatureFile, ShortPayloadNamesExpectedAndActualBytes) {
    TempDir dir("fs_short");
    Rng rng(3);
    write_features(wsvad::testing::random_sequence(rng, 2, 3), dir / "s.fsq");
    auto bytes = file_bytes(dir / "s.fsq");
    bytes.resize(bytes.size() - 4);
    write_text_file(dir / "s.fsq", std::string(bytes.begin(), bytes.end()));
    try {
        read_features(dir / "s.fsq");
        FAIL() << "expected CorruptionError";
    } catch (const CorruptionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("20 bytes"), std::string::npos) << msg;
        EXPECT_NE(msg.find("24 bytes"), std::string::npos) << msg;
    }
}

TEST(FeatureFile, HugeDeclaredShapeDoesNotAllocate) {
    TempDir dir("fs_huge");
    std::vector<std::uint8_t> bytes = {'F', 'S', 'Q', '1', 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF,
                                       32,  0,   0,   0,   1,    0,    0,    0,    0,    0,    0,    0};
    write_text_file(dir / "h.fsq", std::string(bytes.begin(), bytes.end()));
    EXPECT_THROW(read_features(dir / "h.fsq"), CorruptionError);
}

TEST(Manifest, MinimalTwoVideoManifestLoads) {
    TempDir dir("man_ok");
    Rng rng(4);
    for (const char* id : {"a", "b"}) {
        auto seq = wsvad::testing::random_sequence(rng, 1, 3, id);
        seq.num_frames = 40;
        write_features(seq, dir / (std::string(id) + ".fsq"));
    }
    write_text_file(dir / "manifest.json", R"({"feature_dim": 3, "clip_len": 32, "videos": [
        {"video_id": "a", "label": 0, "feature_path": "a.fsq", "num_frames": 40},
        {"video_id": "b", "label": 1, "feature_path": "b.fsq", "num_frames": 40, "frame_truth": [)" +
                                                 [] {
                                                     std::string s;
                                                     for (int i = 0; i < 40; ++i) s += (i ? ",1" : "0");
                                                     return s;
                                                 }() +
                                                 "]}]}");
    const auto m = load_manifest(dir / "manifest.json");
    ASSERT_EQ(m.videos.size(), 2u);
    EXPECT_EQ(m.videos[1].frame_truth->size(), 40u);
    EXPECT_FALSE(m.videos[0].frame_truth.has_value());

    // Serialising and reparsing gives the same manifest.
    const auto again = parse_manifest(manifest_to_json(m), dir.path());
    EXPECT_EQ(manifest_to_json(again), manifest_to_json(m));
}

TEST(Manifest, LabelTwoIsASchemaErrorWithPointer) {
    try {
        parse_manifest(R"({"feature_dim": 3, "clip_len": 32, "videos": [
            {"video_id": "a", "label": 2, "feature_path": "a.fsq", "num_frames": 40}]})",
                       ".");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("/videos/0/label"), std::string::npos) << e.what();
    }
}

TEST(Manifest, MissingFieldReportsPointer) {
    try {
        parse_manifest(R"({"feature_dim": 3, "clip_len": 32, "videos": [{"video_id": "a", "label": 0}]})", ".");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("/videos/0/feature_path"), std::string::npos) << e.what();
    }
}

TEST(Manifest, MissingFeatureFileIsAValidationError) {
    TempDir dir("man_missing");
    write_text_file(dir / "manifest.json", R"({"feature_dim": 3, "clip_len": 32, "videos": [
        {"video_id": "a", "label": 0, "feature_path": "a.fsq", "num_frames": 40},
        {"video_id": "b", "label": 1, "feature_path": "b.fsq", "num_frames": 40}]})");
    try {
        load_manifest(dir / "manifest.json");
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.violations().size(), 2u);
    }
}

TEST(ScoreTraces, JsonLinesRoundTrip) {
    TempDir dir("traces");
    std::vector<ScoreTrace> traces = {{"a", {0.1, 0.25}, {0.1, 0.1, 0.25}}, {"b", {0.9}, {0.9, 0.9}}};
    write_score_traces(traces, dir / "t.jsonl");
    const auto back = read_score_traces(dir / "t.jsonl");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].video_id, "a");
    EXPECT_EQ(back[0].clip_scores, traces[0].clip_scores);
    EXPECT_EQ(back[1].frame_scores, traces[1].frame_scores);
    const auto text = read_text_file(dir / "t.jsonl");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(PseudoLabels, JsonLinesRoundTripAndRangeCheck) {
    TempDir dir("pseudo");
    PseudoLabelSet labels;
    labels.video_ids = {"n", "a"};
    labels.targets = {{0.0, 0.0}, {0.2, 1.0, 0.0}};
    write_pseudo_labels(labels, dir / "p.jsonl");
    const auto back = read_pseudo_labels(dir / "p.jsonl");
    EXPECT_EQ(back.video_ids, labels.video_ids);
    EXPECT_EQ(back.targets, labels.targets);
    EXPECT_EQ(back.find("a"), 1u);
    EXPECT_EQ(back.find("zzz"), 2u);

    write_text_file(dir / "bad.jsonl", R"({"video_id": "x", "targets": [1.5]})" "\n");
    EXPECT_THROW(read_pseudo_labels(dir / "bad.jsonl"), FormatError);
}
