#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sattag/data.hpp"
#include "sattag/errors.hpp"
#include "sattag/wav.hpp"
#include "support/temp_dir.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace sattag;
using sattag::testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double rms(const std::vector<double>& x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return std::sqrt(acc / static_cast<double>(x.size()));
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("annotations parse and drop untagged rows") {
    TempDir dir("ann");
    write_text(dir / "a.csv",
               "clip_id,path,rock,jazz,calm\n"
               "a,a.wav,1,0,1\n"
               "b,b.wav,0,0,0\n"
               "c,sub/c.wav,0,1,1\n"
               "\n"
               "d,/abs/d.wav,1,1,0\r\n");
    write_text(dir / "a.wav", "x");
    const ClipTable t = load_annotations(dir / "a.csv", dir.path());
    CHECK(t.tag_names == std::vector<std::string>{"rock", "jazz", "calm"});
    REQUIRE(t.clips.size() == 3);
    CHECK(t.dropped_untagged == 1);
    CHECK(t.tag_counts == std::vector<std::size_t>{2, 2, 2});
    CHECK(t.clips[0].audio_path == dir / "a.wav");
    CHECK(t.clips[1].audio_path == dir / "sub/c.wav");
    CHECK(t.clips[2].audio_path == std::filesystem::path("/abs/d.wav"));
    CHECK(t.clips[2].tags == std::vector<double>{1, 1, 0});
    CHECK(t.missing_audio == std::vector<std::string>{"c", "d"});
}

TEST_CASE("tag frequencies match a hand count") {
    TempDir dir("freq");
    // columns: x y z w
    const char* rows[10] = {"1,0,0,1", "0,1,0,0", "1,1,0,0", "0,0,1,0", "1,0,1,1",
                            "0,0,0,1", "1,1,1,1", "0,1,0,0", "1,0,0,0", "0,0,0,1"};
    std::string csv = "clip_id,path,x,y,z,w\n";
    for (int i = 0; i < 10; ++i) csv += "r" + std::to_string(i) + ",f.wav," + rows[i] + "\n";
    write_text(dir / "f.csv", csv);
    const ClipTable t = load_annotations(dir / "f.csv", dir.path());
    CHECK(t.clips.size() == 10);
    CHECK(t.tag_counts == std::vector<std::size_t>{5, 4, 3, 5});
}

TEST_CASE("annotation errors name the line") {
    TempDir dir("annerr");
    write_text(dir / "bad.csv", "clip_id,path,a,b\nx,x.wav,1,0\ny,y.wav,1,2\n");
    CHECK(error_of([&] { load_annotations(dir / "bad.csv", dir.path()); }).find("bad.csv:3:") != std::string::npos);

    write_text(dir / "short.csv", "clip_id,path,a,b\nx,x.wav,1\n");
    CHECK(error_of([&] { load_annotations(dir / "short.csv", dir.path()); }).find(":2:") != std::string::npos);

    write_text(dir / "dup.csv", "clip_id,path,a\nx,x.wav,1\ny,y.wav,1\nx,z.wav,1\n");
    const std::string dup = error_of([&] { load_annotations(dir / "dup.csv", dir.path()); });
    CHECK(dup.find(":4:") != std::string::npos);
    CHECK(dup.find("duplicate") != std::string::npos);

    write_text(dir / "hdr.csv", "id,file,a\n");
    CHECK_THROWS_AS(load_annotations(dir / "hdr.csv", dir.path()), DataError);
    CHECK_THROWS_AS(load_annotations(dir / "none.csv", dir.path()), IoError);
}

TEST_CASE("split assignment") {
    ClipTable t;
    t.tag_names = {"a"};
    for (int i = 0; i < 1000; ++i) t.clips.push_back({"track_" + std::to_string(i), "", {1.0}, Split::Train});

    SUBCASE("hash rule is stable and roughly 80/10/10") {
        assign_splits(t);
        std::size_t counts[3] = {0, 0, 0};
        for (const Clip& c : t.clips) {
            ++counts[static_cast<int>(c.split)];
            CHECK(hash_split(c.id) == c.split);
        }
        CHECK(std::abs(static_cast<double>(counts[0]) / 10.0 - 80.0) <= 3.0);
        CHECK(std::abs(static_cast<double>(counts[1]) / 10.0 - 10.0) <= 3.0);
        CHECK(std::abs(static_cast<double>(counts[2]) / 10.0 - 10.0) <= 3.0);
        // FNV-1a 64 reference value for "a": 0xaf63dc4c8601ec8c
        CHECK(0xaf63dc4c8601ec8cULL % 10 == 6);
        CHECK(hash_split("a") == Split::Train);
    }
    SUBCASE("explicit lists are honored exactly") {
        SplitLists lists;
        lists.train = {"track_1", "track_2"};
        lists.valid = {"track_3"};
        lists.test = {"track_4", "track_999"};
        assign_splits(t, lists);
        REQUIRE(t.clips.size() == 5);
        CHECK(t.in_split(Split::Train).size() == 2);
        CHECK(t.in_split(Split::Valid).front().id == "track_3");
        CHECK(t.in_split(Split::Test).back().id == "track_999");
    }
    SUBCASE("an id in two lists is rejected") {
        SplitLists lists;
        lists.train = {"track_1"};
        lists.test = {"track_1"};
        CHECK_THROWS_AS(assign_splits(t, lists), DataError);
    }
    SUBCASE("list files") {
        TempDir dir("lists");
        write_text(dir / "train.txt", "track_1\n\n  track_2  \n");
        CHECK(read_id_list(dir / "train.txt") == std::vector<std::string>{"track_1", "track_2"});
        CHECK_THROWS_AS(read_id_list(dir / "nope.txt"), IoError);
    }
    CHECK(parse_split("valid") == Split::Valid);
    CHECK_THROWS_AS(parse_split("dev"), ConfigError);
}

TEST_CASE("synthetic corpus") {
    TempDir a("synA"), b("synB");
    SynthSpec spec;
    spec.seed = 42;
    spec.n_clips = 16;
    const SynthSummary sa = synth_corpus(spec, a.path());
    synth_corpus(spec, b.path());

    SUBCASE("regeneration is byte-identical") {
        CHECK(read_bytes(a / "annotations.csv") == read_bytes(b / "annotations.csv"));
        for (std::size_t i = 0; i < spec.n_clips; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "audio/clip_%04zu.wav", i);
            CHECK(read_bytes(a / name) == read_bytes(b / name));
        }
        TempDir c("synC");
        SynthSpec other = spec;
        other.seed = 43;
        synth_corpus(other, c.path());
        CHECK(read_bytes(a / "audio/clip_0000.wav") != read_bytes(c / "audio/clip_0000.wav"));
    }
    SUBCASE("annotations agree with the summary and every tag recurs") {
        const ClipTable t = load_annotations(sa.csv_path, a.path());
        CHECK(t.tag_names == synth_tag_names());
        CHECK(t.clips.size() == 16);
        CHECK(t.missing_audio.empty());
        CHECK(t.tag_counts == sa.tag_counts);
        for (std::size_t c : t.tag_counts) CHECK(c >= 2);
    }
    SUBCASE("sources are crossed with levels") {
        // tone, noise, flute, piano against quiet, loud and neither
        std::set<std::pair<std::size_t, int>> seen;
        for (std::size_t i = 0; i < 16; ++i) {
            const auto tags = synth_clip_tags(i);
            const int level = tags[3] > 0.5 ? 0 : tags[4] > 0.5 ? 1 : 2;
            for (std::size_t src : {0, 1, 5, 6}) {
                if (tags[src] > 0.5) seen.insert({src, level});
            }
        }
        CHECK(seen.size() == 12);
    }
    SUBCASE("level tags follow measured RMS") {
        const ClipTable t = load_annotations(sa.csv_path, a.path());
        for (const Clip& c : t.clips) {
            const AudioBuffer audio = load_wav(c.audio_path);
            CHECK(audio.sample_rate == kSampleRate);
            CHECK(audio.samples.size() == 67200);
            const double r = rms(audio.samples);
            if (c.tags[3] > 0.5) CHECK(r < 0.05);
            if (c.tags[4] > 0.5) CHECK(r > 0.3);
            if (c.tags[3] < 0.5 && c.tags[4] < 0.5) CHECK((r > 0.05 && r < 0.3));
        }
    }
    CHECK_THROWS_AS(synth_corpus(spec, "/proc/definitely/not/writable"), IoError);
}

TEST_CASE("features and batches") {
    TempDir dir("feat");
    SynthSpec spec;
    spec.seed = 7;
    spec.n_clips = 6;
    synth_corpus(spec, dir.path());
    ClipTable t = load_annotations(dir / "annotations.csv", dir.path());

    // one clip too short for a chunk
    std::vector<double> blip(3000, 0.1);
    write_wav16(dir / "short.wav", blip, kSampleRate);
    t.clips.push_back({"short", dir / "short.wav", synth_clip_tags(0), Split::Train});

    const FeatureSet spec_set = build_features(t.clips, InputKind::Spec, kSpecChunkFrames);
    CHECK(spec_set.size() == 6);
    CHECK(spec_set.skipped_short == 1);
    CHECK(spec_set.lengths.front() == stft_frame_count(67200));

    SUBCASE("training epoch visits every clip once, reproducibly") {
        BatchStream s1(spec_set, 4, BatchMode::Train, 99);
        BatchStream s2(spec_set, 4, BatchMode::Train, 99);
        CHECK(s1.batch_count() == 2);
        std::multiset<std::size_t> seen;
        Batch b1, b2;
        while (s1.next(b1)) {
            REQUIRE(s2.next(b2));
            CHECK(b1.clip_index == b2.clip_index);
            CHECK(std::equal(b1.input.data().begin(), b1.input.data().end(), b2.input.data().begin()));
            CHECK(b1.input.shape() == Shape{b1.clip_index.size(), 1, 96, 256});
            CHECK(b1.labels.shape() == Shape{b1.clip_index.size(), 7});
            for (std::size_t i = 0; i < b1.clip_index.size(); ++i) {
                seen.insert(b1.clip_index[i]);
                for (std::size_t k = 0; k < 7; ++k) CHECK(b1.labels.data()[i * 7 + k] == spec_set.labels[b1.clip_index[i]][k]);
            }
        }
        CHECK(seen == std::multiset<std::size_t>{0, 1, 2, 3, 4, 5});
    }
    SUBCASE("training chunk equals direct indexing of the source") {
        BatchStream s(spec_set, 1, BatchMode::Train, 5);
        Batch b;
        REQUIRE(s.next(b));
        const std::size_t c = b.clip_index[0];
        const auto& f = spec_set.features[c];
        const std::size_t frames = spec_set.lengths[c];
        std::size_t match = 0;
        for (std::size_t off = 0; off + 256 <= frames; ++off) {
            bool same = true;
            for (std::size_t m = 0; m < 96 && same; ++m) {
                for (std::size_t k = 0; k < 256 && same; ++k) same = b.input.data()[m * 256 + k] == f[m * frames + off + k];
            }
            match += same ? 1 : 0;
        }
        CHECK(match >= 1);
    }
    SUBCASE("evaluation takes every non-overlapping chunk") {
        FeatureSet long_set;
        long_set.kind = InputKind::Spec;
        long_set.chunk_length = 256;
        long_set.ids = {"long"};
        long_set.lengths = {1024};
        long_set.features = {std::vector<double>(96 * 1024)};
        for (std::size_t i = 0; i < long_set.features[0].size(); ++i) long_set.features[0][i] = static_cast<double>(i);
        long_set.labels = {{1.0, 0.0}};
        BatchStream s(long_set, 3, BatchMode::Eval, 0);
        CHECK(s.chunk_count() == 4);
        Batch b;
        std::size_t chunks = 0;
        while (s.next(b)) {
            for (std::size_t i = 0; i < b.clip_index.size(); ++i, ++chunks) {
                CHECK(b.input.data()[i * 96 * 256] == static_cast<double>(chunks * 256));
                CHECK(b.labels.data()[i * 2] == 1.0);
            }
        }
        CHECK(chunks == 4);
    }
    SUBCASE("raw features") {
        const FeatureSet raw = build_features(t.clips, InputKind::Raw, kRawChunkSamples);
        CHECK(raw.size() == 6);
        CHECK(raw.lengths.front() == 67200);
        BatchStream s(raw, 2, BatchMode::Eval, 0);
        Batch b;
        REQUIRE(s.next(b));
        CHECK(b.input.shape() == Shape{2, 1, kRawChunkSamples});
        CHECK(chunk_tensor(raw, 1, 10).data()[0] == raw.features[1][10]);
    }
    SUBCASE("spectrogram cache") {
        TempDir cache("cache");
        const FeatureSet first = build_features(t.clips, InputKind::Spec, kSpecChunkFrames, cache.path());
        CHECK(std::filesystem::exists(cache / "clip_0000.smel"));
        const FeatureSet second = build_features(t.clips, InputKind::Spec, kSpecChunkFrames, cache.path());
        CHECK(second.features == first.features);
        CHECK(first.features == spec_set.features);
    }
}
