#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hossnet/core.hpp"
#include "hossnet/io.hpp"
#include "hossnet/util.hpp"

using namespace hossnet;
namespace fs = std::filesystem;

namespace {

SampleSequence make_ramp_sequence(const std::string& id, int h, int w, int t_count,
                                  ChannelKind kind = ChannelKind::fracture_damage) {
    SampleSequence seq;
    seq.sample_id = id;
    for (int t = 0; t < t_count; ++t) {
        FieldFrame f(h, w, kind, t);
        for (int c = 0; c < f.channels(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    f.values.at3(c, y, x) = 0.25 * c + 0.01 * t + 0.001 * (y * w + x);
        seq.frames.push_back(std::move(f));
    }
    seq.metadata["seed"] = 7.0;
    return seq;
}

std::string read_file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("hossnet_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("NdArray shape and indexing") {
    NdArray a({2, 3, 4});
    CHECK(a.size() == 24);
    a.at3(1, 2, 3) = 9.0;
    CHECK(a[23] == 9.0);
    CHECK(a.shape_string() == "(2,3,4)");
    CHECK_THROWS_AS(NdArray({2, 0}), std::invalid_argument);
}

TEST_CASE("Rng determinism and distribution contracts") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        double x = a.uniform01();
        CHECK(x == b.uniform01());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    Rng c(7);
    double mean = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double z = c.normal();
        mean += z;
        sq += z * z;
    }
    mean /= n;
    sq /= n;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(sq - 1.0) < 0.05);
    Rng d(3);
    for (int i = 0; i < 100; ++i) {
        auto v = d.uniform_int(0, 4);
        CHECK(v >= 0);
        CHECK(v <= 4);
    }
}

TEST_CASE("FieldFrame and SampleSequence validation") {
    FieldFrame f(4, 5, ChannelKind::cauchy_stress, 0);
    CHECK(f.channels() == 3);
    f.validate();

    SampleSequence seq = make_ramp_sequence("s0", 4, 4, 3);
    seq.validate();
    seq.frames[1].time_index = 5;
    CHECK_THROWS_AS(seq.validate(), std::invalid_argument);
}

TEST_CASE("min-max normalization maps onto [0,1] and inverts") {
    std::vector<SampleSequence> data{make_ramp_sequence("a", 6, 6, 4),
                                     make_ramp_sequence("b", 6, 6, 4)};
    data[1].frames[3].values.at3(0, 5, 5) = 3.0;  // global max
    data[0].frames[0].values.at3(0, 0, 0) = -1.0; // global min

    auto [normed, stats] = normalize_dataset(data);
    CHECK(stats.ch_min[0] == -1.0);
    CHECK(stats.ch_max[0] == 3.0);
    double lo = 1e9, hi = -1e9;
    for (const auto& seq : normed)
        for (const auto& f : seq.frames) {
            lo = std::min(lo, f.values.min_value());
            hi = std::max(hi, f.values.max_value());
        }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);

    SampleSequence back = denormalize(normed[0], stats);
    for (std::size_t t = 0; t < back.frames.size(); ++t)
        for (std::size_t i = 0; i < back.frames[t].values.size(); ++i)
            CHECK(back.frames[t].values[i] ==
                  doctest::Approx(data[0].frames[t].values[i]).epsilon(1e-12));
}

TEST_CASE("constant channel normalizes to zeros with a warning") {
    SampleSequence seq = make_ramp_sequence("c", 4, 4, 3);
    for (auto& f : seq.frames) f.values.fill(2.5);
    auto [normed, stats] = normalize_dataset({seq});
    REQUIRE(stats.warnings.size() == 1);
    for (const auto& f : normed[0].frames)
        for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(f.values[i] == 0.0);
    SampleSequence back = denormalize(normed[0], stats);
    CHECK(back.frames[0].values[0] == 2.5);
}

TEST_CASE("dataset container: save/load round-trip is bit-exact") {
    TempDir tmp("io");
    SampleSequence seq = make_ramp_sequence("sample_000", 5, 7, 3, ChannelKind::cauchy_stress);
    save_sample(tmp.path, seq);

    SampleSequence loaded = load_sample(tmp.path / "sample_000.json");
    CHECK(loaded.sample_id == "sample_000");
    CHECK(loaded.length() == 3);
    CHECK(loaded.channels() == 3);
    CHECK(loaded.metadata.at("seed") == 7.0);
    // values pass through float32
    CHECK(loaded.frames[2].values.at3(1, 4, 6) ==
          doctest::Approx(seq.frames[2].values.at3(1, 4, 6)).epsilon(1e-6));

    const std::string bin1 = read_file_bytes(tmp.path / "sample_000.bin");
    const std::string json1 = read_file_bytes(tmp.path / "sample_000.json");
    save_sample(tmp.path, loaded);
    CHECK(read_file_bytes(tmp.path / "sample_000.bin") == bin1);
    CHECK(read_file_bytes(tmp.path / "sample_000.json") == json1);
}

TEST_CASE("dataset container: binary layout is (h,w,c,t) with t fastest") {
    TempDir tmp("layout");
    SampleSequence seq;
    seq.sample_id = "tiny";
    for (int t = 0; t < 2; ++t) {
        FieldFrame f(2, 2, ChannelKind::fracture_damage, t);
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) f.values.at3(0, y, x) = 100.0 * t + 10.0 * y + x;
        seq.frames.push_back(std::move(f));
    }
    save_sample(tmp.path, seq);
    std::ifstream is(tmp.path / "tiny.bin", std::ios::binary);
    float raw[8];
    is.read(reinterpret_cast<char*>(raw), sizeof raw);
    REQUIRE(bool(is));
    // offset((h,w,c,t)) = ((h*W+w)*C+c)*T + t
    const float want[8] = {0, 100, 1, 101, 10, 110, 11, 111};
    for (int i = 0; i < 8; ++i) CHECK(raw[i] == want[i]);
}

TEST_CASE("load_dataset sorts by filename and hash is stable") {
    TempDir tmp("scan");
    save_sample(tmp.path, make_ramp_sequence("b_sample", 4, 4, 2));
    save_sample(tmp.path, make_ramp_sequence("a_sample", 4, 4, 2));
    auto all = load_dataset(tmp.path);
    REQUIRE(all.size() == 2);
    CHECK(all[0].sample_id == "a_sample");
    CHECK(all[1].sample_id == "b_sample");

    const std::string h1 = dataset_hash(tmp.path);
    CHECK(h1 == dataset_hash(tmp.path));
    save_sample(tmp.path, make_ramp_sequence("c_sample", 4, 4, 2));
    CHECK(dataset_hash(tmp.path) != h1);
}

TEST_CASE("load_sample rejects truncated binaries") {
    TempDir tmp("trunc");
    SampleSequence seq = make_ramp_sequence("t0", 4, 4, 2);
    save_sample(tmp.path, seq);
    fs::resize_file(tmp.path / "t0.bin", 8);
    CHECK_THROWS_AS(load_sample(tmp.path / "t0.json"), std::runtime_error);
}

TEST_CASE("norm stats ride along in the sidecar") {
    TempDir tmp("stats");
    SampleSequence seq = make_ramp_sequence("n0", 4, 4, 2);
    NormStats stats;
    stats.ch_min = {-1.0};
    stats.ch_max = {2.0};
    save_sample(tmp.path, seq, stats);
    std::optional<NormStats> got;
    load_sample(tmp.path / "n0.json", &got);
    REQUIRE(got.has_value());
    CHECK(got->ch_min[0] == -1.0);
    CHECK(got->ch_max[0] == 2.0);
}

TEST_CASE("fnv1a64 matches reference vectors") {
    // reference: FNV-1a 64-bit of "a" and "foobar"
    CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ull);
    CHECK(to_hex(0xaf63dc4c8601ec8cull) == "af63dc4c8601ec8c");
}
