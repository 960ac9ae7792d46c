#pragma once

#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hossnet/tensor.hpp"

namespace hossnet {

enum class ChannelKind { fracture_damage, cauchy_stress };

inline int channels_for(ChannelKind k) { return k == ChannelKind::fracture_damage ? 1 : 3; }

inline std::string to_string(ChannelKind k) {
    return k == ChannelKind::fracture_damage ? "fracture_damage" : "cauchy_stress";
}

inline ChannelKind channel_kind_from_string(const std::string& s) {
    if (s == "fracture_damage") return ChannelKind::fracture_damage;
    if (s == "cauchy_stress") return ChannelKind::cauchy_stress;
    throw std::invalid_argument("unknown channel_kind: " + s);
}

/// One field snapshot on a fixed grid. Values are stored channel-planar
/// (C, H, W) row-major; grid origin is top-left, x runs along columns
/// (rightward), y along rows (downward).
struct FieldFrame {
    NdArray values;  // (C, H, W)
    ChannelKind channel_kind = ChannelKind::fracture_damage;
    int time_index = 0;

    FieldFrame() = default;
    FieldFrame(int h, int w, ChannelKind kind, int t = 0)
        : values(NdArray({channels_for(kind), h, w})), channel_kind(kind), time_index(t) {}

    int channels() const { return values.dim(0); }
    int height() const { return values.dim(1); }
    int width() const { return values.dim(2); }

    void validate() const {
        if (values.ndim() != 3) throw std::invalid_argument("FieldFrame: values must be (C,H,W)");
        if (channels() != channels_for(channel_kind))
            throw std::invalid_argument("FieldFrame: channel count does not match channel_kind");
        if (time_index < 0) throw std::invalid_argument("FieldFrame: negative time_index");
    }
};

/// Ordered time series of frames for one crack sample.
struct SampleSequence {
    std::string sample_id;
    std::vector<FieldFrame> frames;
    std::map<std::string, double> metadata;

    int length() const { return static_cast<int>(frames.size()); }
    int height() const { return frames.at(0).height(); }
    int width() const { return frames.at(0).width(); }
    int channels() const { return frames.at(0).channels(); }
    ChannelKind kind() const { return frames.at(0).channel_kind; }

    void validate() const {
        if (frames.empty()) throw std::invalid_argument("SampleSequence: empty");
        const auto& f0 = frames.front();
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const auto& f = frames[i];
            f.validate();
            if (f.time_index != static_cast<int>(i))
                throw std::invalid_argument("SampleSequence: time indices must be 0..T-1 with no gaps");
            if (f.height() != f0.height() || f.width() != f0.width() || f.channel_kind != f0.channel_kind)
                throw std::invalid_argument("SampleSequence: frames disagree on grid or channel kind");
        }
    }
};

/// Per-pixel motion vectors between two consecutive frames.
struct FlowField {
    NdArray u;  // (H, W), x component in pixels per step
    NdArray v;  // (H, W), y component

    FlowField() = default;
    FlowField(int h, int w) : u(NdArray({h, w})), v(NdArray({h, w})) {}

    int height() const { return u.dim(0); }
    int width() const { return u.dim(1); }
};

enum class MaskKind { dynamic, fixed, sub_region };

struct RegionMask {
    NdArray mask;  // (H, W), 0 or 1
    MaskKind kind = MaskKind::sub_region;

    RegionMask() = default;
    RegionMask(int h, int w, MaskKind k, double fill = 0.0) : mask(NdArray({h, w}, fill)), kind(k) {}

    int height() const { return mask.dim(0); }
    int width() const { return mask.dim(1); }

    std::size_t count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) n += mask[i] != 0.0;
        return n;
    }

    RegionMask complement(MaskKind k) const {
        RegionMask out(height(), width(), k);
        for (std::size_t i = 0; i < mask.size(); ++i) out.mask[i] = mask[i] != 0.0 ? 0.0 : 1.0;
        return out;
    }

    static RegionMask full(int h, int w, MaskKind k = MaskKind::sub_region) {
        return RegionMask(h, w, k, 1.0);
    }
};

/// Per-channel min/max of the training split. Kept so the affine transform is
/// invertible and can be reapplied byte-identically to held-out data.
struct NormStats {
    std::vector<double> ch_min;
    std::vector<double> ch_max;
    std::vector<std::string> warnings;

    int channels() const { return static_cast<int>(ch_min.size()); }
};

namespace detail {

inline void apply_norm_frame(FieldFrame& f, const NormStats& stats) {
    const int c_count = f.channels();
    const std::size_t plane = static_cast<std::size_t>(f.height()) * f.width();
    double* d = f.values.data();
    for (int c = 0; c < c_count; ++c) {
        const double lo = stats.ch_min[static_cast<std::size_t>(c)];
        const double hi = stats.ch_max[static_cast<std::size_t>(c)];
        double* p = d + static_cast<std::size_t>(c) * plane;
        if (hi == lo) {
            for (std::size_t i = 0; i < plane; ++i) p[i] = 0.0;
        } else {
            const double scale = 1.0 / (hi - lo);
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - lo) * scale;
        }
    }
}

}  // namespace detail

/// Computes per-channel min/max over the given (training) sequences.
inline NormStats compute_norm_stats(const std::vector<SampleSequence>& sequences) {
    if (sequences.empty()) throw std::invalid_argument("compute_norm_stats: no sequences");
    const int c_count = sequences.front().channels();
    NormStats stats;
    stats.ch_min.assign(static_cast<std::size_t>(c_count), std::numeric_limits<double>::infinity());
    stats.ch_max.assign(static_cast<std::size_t>(c_count), -std::numeric_limits<double>::infinity());
    for (const auto& seq : sequences) {
        if (seq.channels() != c_count)
            throw std::invalid_argument("compute_norm_stats: mixed channel counts");
        for (const auto& f : seq.frames) {
            if (!f.values.all_finite())
                throw std::invalid_argument("compute_norm_stats: non-finite values in " + seq.sample_id);
            const std::size_t plane = static_cast<std::size_t>(f.height()) * f.width();
            const double* d = f.values.data();
            for (int c = 0; c < c_count; ++c) {
                const double* p = d + static_cast<std::size_t>(c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    auto& lo = stats.ch_min[static_cast<std::size_t>(c)];
                    auto& hi = stats.ch_max[static_cast<std::size_t>(c)];
                    if (p[i] < lo) lo = p[i];
                    if (p[i] > hi) hi = p[i];
                }
            }
        }
    }
    for (int c = 0; c < c_count; ++c) {
        if (stats.ch_max[static_cast<std::size_t>(c)] == stats.ch_min[static_cast<std::size_t>(c)]) {
            stats.warnings.push_back("channel " + std::to_string(c) +
                                     " is constant; mapped to all-zeros");
        }
    }
    return stats;
}

/// Applies previously computed stats to a sequence (any split).
inline SampleSequence apply_norm(const SampleSequence& seq, const NormStats& stats) {
    if (seq.channels() != stats.channels())
        throw std::invalid_argument("apply_norm: channel count mismatch");
    SampleSequence out = seq;
    for (auto& f : out.frames) detail::apply_norm_frame(f, stats);
    return out;
}

/// Min-max normalization to [0,1], stats from the given sequences themselves.
inline std::pair<std::vector<SampleSequence>, NormStats> normalize_dataset(
    const std::vector<SampleSequence>& sequences) {
    NormStats stats = compute_norm_stats(sequences);
    std::vector<SampleSequence> out;
    out.reserve(sequences.size());
    for (const auto& seq : sequences) out.push_back(apply_norm(seq, stats));
    return {std::move(out), std::move(stats)};
}

/// Inverse of the min-max transform. Degenerate (constant) channels map back
/// to their recorded constant.
inline SampleSequence denormalize(const SampleSequence& seq, const NormStats& stats) {
    if (seq.channels() != stats.channels())
        throw std::invalid_argument("denormalize: channel count mismatch");
    SampleSequence out = seq;
    for (auto& f : out.frames) {
        const std::size_t plane = static_cast<std::size_t>(f.height()) * f.width();
        double* d = f.values.data();
        for (int c = 0; c < f.channels(); ++c) {
            const double lo = stats.ch_min[static_cast<std::size_t>(c)];
            const double hi = stats.ch_max[static_cast<std::size_t>(c)];
            double* p = d + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * (hi - lo) + lo;
        }
    }
    return out;
}

}  // namespace hossnet
