#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "hossnet/core.hpp"
#include "hossnet/util.hpp"

namespace hossnet {

/// Procedural crack-sequence generator. Stands in for the fracture simulator
/// output: damage fields that only ever grow, plus correlated pseudo-stress
/// channels derived from them.
struct CrackSpec {
    int n_initial_cracks = 20;
    std::uint64_t seed = 0;
    double growth_rate = 1.0;  // pixels per step
    double branching_prob = 0.02;
    int grid_h = 32;
    int grid_w = 32;
    int n_steps = 60;

    void validate() const {
        if (n_initial_cracks < 1)
            throw std::invalid_argument("CrackSpec: n_initial_cracks must be >= 1");
        if (n_steps < 2) throw std::invalid_argument("CrackSpec: n_steps must be >= 2");
        if (!(growth_rate >= 0.0) || !std::isfinite(growth_rate))
            throw std::invalid_argument("CrackSpec: growth_rate must be finite and >= 0");
        if (!(branching_prob >= 0.0 && branching_prob <= 1.0))
            throw std::invalid_argument("CrackSpec: branching_prob must be in [0,1]");
        if (grid_h < 6 || grid_w < 6)
            throw std::invalid_argument("CrackSpec: grid must be at least 6x6");
        // crack centers need a 2-pixel border margin
        const long long slots =
            static_cast<long long>(grid_h - 4) * static_cast<long long>(grid_w - 4);
        if (slots < n_initial_cracks)
            throw std::invalid_argument("CrackSpec: grid too small to place " +
                                        std::to_string(n_initial_cracks) + " cracks");
    }
};

namespace detail {

constexpr double kTipJitterStd = 0.35;   // radians of direction noise per step
constexpr double kDepositSigma = 1.0;    // Gaussian footprint of a crack point
constexpr int kMaxActiveTips = 64;

struct CrackTip {
    double y, x, dir;
    bool active = true;
};

/// Max-composes a unit-height Gaussian bump at (cy, cx) into the field.
inline void deposit(NdArray& field, double cy, double cx) {
    const int h = field.dim(0), w = field.dim(1);
    const int r = 3;  // 3 sigma support
    const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - r);
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy)) + r);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - r);
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx)) + r);
    const double inv2s2 = 1.0 / (2.0 * kDepositSigma * kDepositSigma);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            const double v = std::exp(-d2 * inv2s2);
            if (v > field.at2(y, x)) field.at2(y, x) = v;
        }
}

/// Deposits along the segment from (y0,x0) to (y1,x1) at <= 0.5 px spacing.
inline void deposit_path(NdArray& field, double y0, double x0, double y1, double x1) {
    const double dist = std::hypot(y1 - y0, x1 - x0);
    const int n = std::max(1, static_cast<int>(std::ceil(dist / 0.5)));
    for (int k = 0; k <= n; ++k) {
        const double s = static_cast<double>(k) / n;
        deposit(field, y0 + s * (y1 - y0), x0 + s * (x1 - x0));
    }
}

inline bool in_walk_bounds(double y, double x, int h, int w) {
    return y >= 1.0 && y <= h - 2.0 && x >= 1.0 && x <= w - 2.0;
}

}  // namespace detail

inline SampleSequence generate_sample(const CrackSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int h = spec.grid_h, w = spec.grid_w;

    NdArray damage({h, w}, 0.0);
    std::vector<detail::CrackTip> tips;
    const double pi = 3.14159265358979323846;

    for (int i = 0; i < spec.n_initial_cracks; ++i) {
        const double cy = rng.uniform(2.0, h - 3.0);
        const double cx = rng.uniform(2.0, w - 3.0);
        const double phi = rng.uniform(0.0, pi);
        const double half_len = rng.uniform(1.0, 2.5);
        const double ay = cy - half_len * std::sin(phi), ax = cx - half_len * std::cos(phi);
        const double by = cy + half_len * std::sin(phi), bx = cx + half_len * std::cos(phi);
        detail::deposit_path(damage, ay, ax, by, bx);
        tips.push_back({ay, ax, phi + pi, detail::in_walk_bounds(ay, ax, h, w)});
        tips.push_back({by, bx, phi, detail::in_walk_bounds(by, bx, h, w)});
    }

    SampleSequence seq;
    seq.sample_id = "crack_seed" + std::to_string(spec.seed);
    seq.metadata["seed"] = static_cast<double>(spec.seed);
    seq.metadata["n_initial_cracks"] = spec.n_initial_cracks;
    seq.metadata["growth_rate"] = spec.growth_rate;
    seq.metadata["branching_prob"] = spec.branching_prob;

    auto snapshot = [&](int t) {
        FieldFrame f(h, w, ChannelKind::fracture_damage, t);
        for (std::size_t i = 0; i < damage.size(); ++i) f.values[i] = damage[i];
        seq.frames.push_back(std::move(f));
    };
    snapshot(0);

    for (int t = 1; t < spec.n_steps; ++t) {
        std::vector<detail::CrackTip> spawned;
        for (auto& tip : tips) {
            if (!tip.active) continue;
            tip.dir += detail::kTipJitterStd * rng.normal();
            const double ny = tip.y + spec.growth_rate * std::sin(tip.dir);
            const double nx = tip.x + spec.growth_rate * std::cos(tip.dir);
            const double cy = std::clamp(ny, 1.0, h - 2.0);
            const double cx = std::clamp(nx, 1.0, w - 2.0);
            detail::deposit_path(damage, tip.y, tip.x, cy, cx);
            tip.y = cy;
            tip.x = cx;
            if (!detail::in_walk_bounds(ny, nx, h, w)) tip.active = false;

            if (tip.active && rng.uniform01() < spec.branching_prob &&
                tips.size() + spawned.size() < detail::kMaxActiveTips) {
                const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
                const double split = sign * rng.uniform(pi / 6.0, pi / 3.0);
                spawned.push_back({tip.y, tip.x, tip.dir + split, true});
            }
        }
        tips.insert(tips.end(), spawned.begin(), spawned.end());
        snapshot(t);
    }

    seq.validate();
    return seq;
}

/// Pseudo-stress inputs: Gaussian-smoothed damage, then central-difference
/// gradients Sx, Sy and their product, each rescaled to [0,1] over the whole
/// sequence (constant channels map to 0). Channel order (Cx, Cy, Cxy).
inline SampleSequence derive_stress_channels(const SampleSequence& damage_seq) {
    damage_seq.validate();
    if (damage_seq.kind() != ChannelKind::fracture_damage)
        throw std::invalid_argument("derive_stress_channels: input must be fracture_damage");
    const int h = damage_seq.height(), w = damage_seq.width(), t_count = damage_seq.length();

    // 7-tap sigma=1 Gaussian, normalized
    double taps[7];
    double tap_sum = 0.0;
    for (int k = -3; k <= 3; ++k) {
        taps[k + 3] = std::exp(-0.5 * k * k);
        tap_sum += taps[k + 3];
    }
    for (double& tp : taps) tp /= tap_sum;

    SampleSequence out;
    out.sample_id = damage_seq.sample_id + "_stress";
    out.metadata = damage_seq.metadata;

    for (int t = 0; t < t_count; ++t) {
        const NdArray& d = damage_seq.frames[static_cast<std::size_t>(t)].values;
        NdArray tmp({h, w}), smooth({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = -3; k <= 3; ++k)
                    s += taps[k + 3] * d.at3(0, y, std::clamp(x + k, 0, w - 1));
                tmp.at2(y, x) = s;
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = -3; k <= 3; ++k)
                    s += taps[k + 3] * tmp.at2(std::clamp(y + k, 0, h - 1), x);
                smooth.at2(y, x) = s;
            }

        FieldFrame f(h, w, ChannelKind::cauchy_stress, t);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double sx = 0.5 * (smooth.at2(y, std::min(x + 1, w - 1)) -
                                         smooth.at2(y, std::max(x - 1, 0)));
                const double sy = 0.5 * (smooth.at2(std::min(y + 1, h - 1), x) -
                                         smooth.at2(std::max(y - 1, 0), x));
                f.values.at3(0, y, x) = sx;
                f.values.at3(1, y, x) = sy;
                f.values.at3(2, y, x) = sx * sy;
            }
        out.frames.push_back(std::move(f));
    }

    NormStats stats = compute_norm_stats({out});
    for (auto& f : out.frames) detail::apply_norm_frame(f, stats);
    return out;
}

/// Desk-scale default mirroring the benchmark layout: 6 samples x 60 steps
/// on a 32x32 grid, a handful of slow-growing cracks per sample.
inline CrackSpec desk_benchmark_spec() {
    CrackSpec spec;
    spec.n_initial_cracks = 6;
    spec.seed = 1000;
    spec.growth_rate = 0.35;
    spec.branching_prob = 0.03;
    spec.grid_h = 32;
    spec.grid_w = 32;
    spec.n_steps = 60;
    return spec;
}

inline std::vector<SampleSequence> build_benchmark_set(int n_samples, const CrackSpec& base_spec) {
    if (n_samples < 1) throw std::invalid_argument("build_benchmark_set: n_samples must be >= 1");
    std::vector<SampleSequence> out;
    out.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        CrackSpec spec = base_spec;
        spec.seed = base_spec.seed + static_cast<std::uint64_t>(i);
        SampleSequence seq = generate_sample(spec);
        char buf[32];
        std::snprintf(buf, sizeof buf, "sample_%03d", i);
        seq.sample_id = buf;
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace hossnet
