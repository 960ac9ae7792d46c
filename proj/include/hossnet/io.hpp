#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hossnet/core.hpp"
#include "hossnet/util.hpp"

namespace hossnet {

static_assert(std::endian::native == std::endian::little,
              "dataset container assumes a little-endian host");

namespace fs = std::filesystem;

/// On-disk sample layout: <id>.bin holds row-major (H, W, C, T) float32, so
/// offset(h,w,c,t) = ((h*W + w)*C + c)*T + t. <id>.json carries the shape and
/// metadata. Values are truncated to float32 on save; a load/save cycle of an
/// existing pair reproduces it byte for byte.

struct SidecarInfo {
    std::string sample_id;
    int H = 0, W = 0, C = 0, T = 0;
    ChannelKind channel_kind = ChannelKind::fracture_damage;
    std::map<std::string, double> metadata;
    std::optional<NormStats> norm_stats;
};

namespace detail {

constexpr std::size_t kIoChunkFloats = std::size_t(1) << 20;

inline void flush_floats(std::ofstream& os, std::vector<float>& buf) {
    if (buf.empty()) return;
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    buf.clear();
}

}  // namespace detail

inline void save_sample(const fs::path& dir, const SampleSequence& seq,
                        const std::optional<NormStats>& stats = std::nullopt) {
    seq.validate();
    if (seq.sample_id.empty()) throw std::invalid_argument("save_sample: empty sample_id");
    fs::create_directories(dir);

    const int H = seq.height(), W = seq.width(), C = seq.channels(), T = seq.length();
    const fs::path bin_path = dir / (seq.sample_id + ".bin");
    std::ofstream os(bin_path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_sample: cannot open " + bin_path.string());

    std::vector<float> buf;
    buf.reserve(detail::kIoChunkFloats);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t) {
                    buf.push_back(static_cast<float>(seq.frames[static_cast<std::size_t>(t)]
                                                         .values.at3(c, h, w)));
                    if (buf.size() >= detail::kIoChunkFloats) detail::flush_floats(os, buf);
                }
    detail::flush_floats(os, buf);
    os.close();
    if (!os) throw std::runtime_error("save_sample: write failed for " + bin_path.string());

    nlohmann::json j;
    j["sample_id"] = seq.sample_id;
    j["H"] = H;
    j["W"] = W;
    j["C"] = C;
    j["T"] = T;
    j["channel_kind"] = to_string(seq.kind());
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [k, v] : seq.metadata) meta[k] = v;
    j["metadata"] = meta;
    if (stats) {
        j["norm_stats"] = {{"ch_min", stats->ch_min},
                           {"ch_max", stats->ch_max},
                           {"warnings", stats->warnings}};
    } else {
        j["norm_stats"] = nullptr;
    }
    const fs::path json_path = dir / (seq.sample_id + ".json");
    std::ofstream js(json_path, std::ios::trunc);
    if (!js) throw std::runtime_error("save_sample: cannot open " + json_path.string());
    js << j.dump(2) << "\n";
}

inline SidecarInfo read_sidecar(const fs::path& json_path) {
    std::ifstream is(json_path);
    if (!is) throw std::runtime_error("read_sidecar: cannot open " + json_path.string());
    nlohmann::json j;
    is >> j;
    SidecarInfo info;
    info.sample_id = j.at("sample_id").get<std::string>();
    info.H = j.at("H").get<int>();
    info.W = j.at("W").get<int>();
    info.C = j.at("C").get<int>();
    info.T = j.at("T").get<int>();
    info.channel_kind = channel_kind_from_string(j.at("channel_kind").get<std::string>());
    if (info.H <= 0 || info.W <= 0 || info.C <= 0 || info.T <= 0)
        throw std::runtime_error("read_sidecar: non-positive shape in " + json_path.string());
    if (info.C != channels_for(info.channel_kind))
        throw std::runtime_error("read_sidecar: C disagrees with channel_kind in " +
                                 json_path.string());
    if (j.contains("metadata"))
        for (const auto& [k, v] : j.at("metadata").items())
            info.metadata[k] = v.get<double>();
    if (j.contains("norm_stats") && !j.at("norm_stats").is_null()) {
        NormStats s;
        s.ch_min = j.at("norm_stats").at("ch_min").get<std::vector<double>>();
        s.ch_max = j.at("norm_stats").at("ch_max").get<std::vector<double>>();
        if (j.at("norm_stats").contains("warnings"))
            s.warnings = j.at("norm_stats").at("warnings").get<std::vector<std::string>>();
        if (s.ch_min.size() != s.ch_max.size() ||
            s.ch_min.size() != static_cast<std::size_t>(info.C))
            throw std::runtime_error("read_sidecar: norm_stats shape mismatch in " +
                                     json_path.string());
        info.norm_stats = std::move(s);
    }
    return info;
}

inline SampleSequence load_sample(const fs::path& json_path,
                                  std::optional<NormStats>* stats_out = nullptr) {
    const SidecarInfo info = read_sidecar(json_path);
    if (stats_out) *stats_out = info.norm_stats;

    const fs::path bin_path = json_path.parent_path() / (info.sample_id + ".bin");
    std::ifstream is(bin_path, std::ios::binary);
    if (!is) throw std::runtime_error("load_sample: cannot open " + bin_path.string());
    const std::size_t n_total =
        std::size_t(info.H) * std::size_t(info.W) * std::size_t(info.C) * std::size_t(info.T);
    is.seekg(0, std::ios::end);
    const auto file_bytes = static_cast<std::size_t>(is.tellg());
    if (file_bytes != n_total * sizeof(float))
        throw std::runtime_error("load_sample: " + bin_path.string() + " has " +
                                 std::to_string(file_bytes) + " bytes, expected " +
                                 std::to_string(n_total * sizeof(float)));
    is.seekg(0, std::ios::beg);

    SampleSequence seq;
    seq.sample_id = info.sample_id;
    seq.metadata = info.metadata;
    seq.frames.reserve(static_cast<std::size_t>(info.T));
    for (int t = 0; t < info.T; ++t)
        seq.frames.emplace_back(info.H, info.W, info.channel_kind, t);

    std::vector<float> buf;
    std::size_t done = 0;
    int h = 0, w = 0, c = 0, t = 0;
    while (done < n_total) {
        const std::size_t n = std::min(detail::kIoChunkFloats, n_total - done);
        buf.resize(n);
        is.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(n * sizeof(float)));
        if (!is) throw std::runtime_error("load_sample: short read on " + bin_path.string());
        for (std::size_t i = 0; i < n; ++i) {
            seq.frames[static_cast<std::size_t>(t)].values.at3(c, h, w) =
                static_cast<double>(buf[i]);
            if (++t == info.T) {
                t = 0;
                if (++c == info.C) {
                    c = 0;
                    if (++w == info.W) {
                        w = 0;
                        ++h;
                    }
                }
            }
        }
        done += n;
    }
    seq.validate();
    return seq;
}

/// Loads every *.json sidecar in the directory, sorted by filename so the
/// sample order is stable across platforms.
inline std::vector<SampleSequence> load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("load_dataset: not a directory: " + dir.string());
    std::vector<fs::path> sidecars;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".json")
            sidecars.push_back(e.path());
    std::sort(sidecars.begin(), sidecars.end());
    if (sidecars.empty())
        throw std::runtime_error("load_dataset: no samples in " + dir.string());
    std::vector<SampleSequence> out;
    out.reserve(sidecars.size());
    for (const auto& p : sidecars) out.push_back(load_sample(p));
    return out;
}

inline void save_dataset(const fs::path& dir, const std::vector<SampleSequence>& sequences,
                         const std::optional<NormStats>& stats = std::nullopt) {
    for (const auto& seq : sequences) save_sample(dir, seq, stats);
}

/// Content hash of the dataset directory: FNV-1a over filename and bytes of
/// each sidecar/binary file, visited in sorted filename order.
inline std::string dataset_hash(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() &&
            (e.path().extension() == ".json" || e.path().extension() == ".bin"))
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = 14695981039346656037ull;
    std::vector<char> buf(1 << 20);
    for (const auto& p : files) {
        const std::string name = p.filename().string();
        h = fnv1a64(name.data(), name.size(), h);
        std::ifstream is(p, std::ios::binary);
        while (is) {
            is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            h = fnv1a64(buf.data(), static_cast<std::size_t>(is.gcount()), h);
        }
    }
    return to_hex(h);
}

}  // namespace hossnet
