#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hossnet/ad.hpp"
#include "hossnet/core.hpp"
#include "hossnet/flow.hpp"
#include "hossnet/util.hpp"

namespace hossnet {

struct LossWeights {
    double alpha_perc = 0.1;
    double alpha_op = 0.01;

    void validate() const {
        if (!std::isfinite(alpha_perc) || alpha_perc < 0.0)
            throw std::invalid_argument("LossWeights: alpha_perc must be finite and >= 0");
        if (!std::isfinite(alpha_op) || alpha_op < 0.0)
            throw std::invalid_argument("LossWeights: alpha_op must be finite and >= 0");
    }
};

struct LossReport {
    double mse = 0.0;
    double perceptual = 0.0;
    double optical = 0.0;
    double total = 0.0;
};

// ---- pixel MSE ----

inline double mse_loss(const NdArray& pred, const NdArray& truth) {
    require_same_shape(pred, truth, "mse_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

inline double mse_loss(const SampleSequence& pred, const SampleSequence& truth) {
    if (pred.length() != truth.length()) throw std::invalid_argument("mse_loss: length mismatch");
    double s = 0.0;
    std::size_t n = 0;
    for (int t = 0; t < pred.length(); ++t) {
        const auto& a = pred.frames[static_cast<std::size_t>(t)].values;
        const auto& b = truth.frames[static_cast<std::size_t>(t)].values;
        require_same_shape(a, b, "mse_loss");
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        n += a.size();
    }
    return s / static_cast<double>(n);
}

// ---- masking ----

/// Wraps a per-pixel loss map into a mean over the masked pixels only.
/// The wrapped callable must produce an (H,W) map matching the mask.
template <typename MapFn>
auto masked(MapFn map_fn, const RegionMask& mask) {
    if (mask.count() == 0) throw std::invalid_argument("masked: mask selects no pixels");
    return [map_fn, mask](const NdArray& pred, const NdArray& truth) -> double {
        NdArray map = map_fn(pred, truth);
        require_same_shape(map, mask.mask, "masked");
        double s = 0.0;
        for (std::size_t i = 0; i < map.size(); ++i)
            if (mask.mask[i] != 0.0) s += map[i];
        return s / static_cast<double>(mask.count());
    };
}

/// Per-pixel squared difference map for (H,W) frames.
inline NdArray squared_error_map(const NdArray& pred, const NdArray& truth) {
    require_same_shape(pred, truth, "squared_error_map");
    NdArray out = pred;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double d = pred[i] - truth[i];
        out[i] = d * d;
    }
    return out;
}

/// Default training mask: bounding box, dilated by `dilation` pixels, of the
/// pixels whose ground truth changes anywhere inside the window. Falls back
/// to the full image when nothing changes.
inline RegionMask default_subregion_mask(const NdArray& truth_window, int dilation = 4) {
    if (truth_window.ndim() != 4)
        throw std::invalid_argument("default_subregion_mask: expected (L,C,H,W)");
    const int l_count = truth_window.dim(0), c_count = truth_window.dim(1);
    const int h = truth_window.dim(2), w = truth_window.dim(3);
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int t = 1; t < l_count; ++t)
        for (int c = 0; c < c_count; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (truth_window.at4(t, c, y, x) != truth_window.at4(0, c, y, x)) {
                        y0 = std::min(y0, y);
                        y1 = std::max(y1, y);
                        x0 = std::min(x0, x);
                        x1 = std::max(x1, x);
                    }
    RegionMask m(h, w, MaskKind::sub_region);
    if (y1 < 0) {
        m.mask.fill(1.0);
        return m;
    }
    y0 = std::max(0, y0 - dilation);
    x0 = std::max(0, x0 - dilation);
    y1 = std::min(h - 1, y1 + dilation);
    x1 = std::min(w - 1, x1 + dilation);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.mask.at2(y, x) = 1.0;
    return m;
}

/// Tight bounding box of a mask's selected pixels: (y0, x0, height, width).
inline std::array<int, 4> mask_bounding_box(const RegionMask& mask) {
    const int h = mask.height(), w = mask.width();
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.mask.at2(y, x) != 0.0) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw std::invalid_argument("mask_bounding_box: mask selects no pixels");
    return {y0, x0, y1 - y0 + 1, x1 - x0 + 1};
}

// ---- perceptual features ----

/// Frozen convolutional feature extractor; inputs are (1,3,h,w) frames.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual Var features(Tape& t, Var frame) const = 0;
};

/// Fixed random convolution stack (conv3x3 + tanh, repeated). Serves as the
/// offline stand-in for a pretrained backbone: weights are seeded constants
/// and never trained.
class RandomConvFeatureExtractor final : public FeatureExtractor {
public:
    explicit RandomConvFeatureExtractor(std::uint64_t seed = 0, int depth = 2, int width = 8) {
        if (depth < 1 || width < 1)
            throw std::invalid_argument("RandomConvFeatureExtractor: bad depth/width");
        Rng rng(seed);
        int c_in = 3;
        for (int d = 0; d < depth; ++d) {
            NdArray w({width, c_in, 3, 3});
            const double std_dev = std::sqrt(2.0 / (c_in * 9.0));
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
            weights_.push_back(std::move(w));
            biases_.push_back(NdArray({width}, 0.0));
            c_in = width;
        }
    }

    std::string name() const override { return "random_conv"; }

    Var features(Tape& t, Var frame) const override {
        const NdArray& v = t.value(frame);
        if (v.ndim() != 4 || v.dim(1) != 3)
            throw std::invalid_argument("feature extractor expects (N,3,h,w) input");
        Var h = frame;
        for (std::size_t d = 0; d < weights_.size(); ++d)
            h = t.tanh_op(t.conv2d(h, t.put(weights_[d]), t.put(biases_[d])));
        return h;
    }

private:
    std::vector<NdArray> weights_;
    std::vector<NdArray> biases_;
};

/// Factory keyed by config value. The pretrained backbone is not bundled;
/// asking for it raises a configuration error with the available outs.
inline std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& kind,
                                                                std::uint64_t seed = 0,
                                                                int depth = 2, int width = 8) {
    if (kind == "random_conv")
        return std::make_unique<RandomConvFeatureExtractor>(seed, depth, width);
    if (kind == "pretrained")
        throw std::runtime_error(
            "feature extractor 'pretrained' is unavailable in this build: no bundled backbone "
            "weights; set alpha_perc = 0 or use extractor = random_conv");
    throw std::invalid_argument("unknown feature extractor: " + kind);
}

namespace detail {

/// (L,1,h,w) frame n -> (1,3,h,w) by channel replication.
inline Var frame_replicated3(Tape& t, Var window, int n, int h, int w) {
    Var rows = t.frame_to_rows(window, n);
    Var frame = t.rows_to_frame(rows, h, w);
    return t.concat_channels(frame, t.concat_channels(frame, frame));
}

}  // namespace detail

/// Mean squared feature difference between the two windows, averaged over
/// frames. The truth branch is evaluated off-tape and enters as a constant.
inline Var perceptual_loss_taped(Tape& t, Var pred_window, const NdArray& truth_window,
                                 const FeatureExtractor& extractor) {
    const NdArray& vp = t.value(pred_window);
    if (vp.ndim() != 4 || vp.dim(1) != 1)
        throw std::invalid_argument("perceptual_loss: expected (L,1,H,W) windows");
    require_same_shape(vp, truth_window, "perceptual_loss");
    const int l_count = vp.dim(0), h = vp.dim(2), w = vp.dim(3);

    Var total = t.scalar(0.0);
    for (int n = 0; n < l_count; ++n) {
        NdArray truth_feat;
        {
            Tape local;
            Var tw = local.put(truth_window);
            Var f = extractor.features(local, detail::frame_replicated3(local, tw, n, h, w));
            truth_feat = local.value(f);
        }
        Var pf = extractor.features(t, detail::frame_replicated3(t, pred_window, n, h, w));
        Var diff = t.sub(pf, t.put(truth_feat));
        total = t.add(total, t.mean_all(t.mul(diff, diff)));
    }
    return t.scale(total, 1.0 / static_cast<double>(l_count));
}

inline double perceptual_loss(const SampleSequence& pred, const SampleSequence& truth,
                              const FeatureExtractor& extractor) {
    if (pred.length() != truth.length())
        throw std::invalid_argument("perceptual_loss: length mismatch");
    const int l_count = pred.length(), h = pred.height(), w = pred.width();
    NdArray pw({l_count, 1, h, w}), tw({l_count, 1, h, w});
    for (int n = 0; n < l_count; ++n) {
        const auto& pf = pred.frames[static_cast<std::size_t>(n)];
        const auto& tf = truth.frames[static_cast<std::size_t>(n)];
        if (pf.channels() != 1 || tf.channels() != 1)
            throw std::invalid_argument("perceptual_loss: frames must be single-channel");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                pw.at4(n, 0, y, x) = pf.values.at3(0, y, x);
                tw.at4(n, 0, y, x) = tf.values.at3(0, y, x);
            }
    }
    Tape t;
    return t.scalar_value(perceptual_loss_taped(t, t.put(pw), tw, extractor));
}

// ---- combined objective ----

struct TotalLossParams {
    LossWeights weights;
    FlowSolverParams flow;
    double magnitude_floor = 1e-6;
    const FeatureExtractor* extractor = nullptr;
};

/// Combined objective on the masked sub-region:
///   total = MSE + alpha_perc * Perceptual + alpha_op * Optical.
/// The MSE averages exactly the masked pixels; the perceptual and flow terms
/// act on the mask's bounding-box crop (their windowed/neighbourhood structure
/// needs a rectangle). For the default dilated-bbox mask the two regions
/// coincide.
inline Var total_loss_taped(Tape& t, Var pred_window, const NdArray& truth_window,
                            const RegionMask& mask, const TotalLossParams& params,
                            LossReport* report = nullptr) {
    params.weights.validate();
    const NdArray& vp = t.value(pred_window);
    if (vp.ndim() != 4 || vp.dim(1) != 1)
        throw std::invalid_argument("total_loss: expected (L,1,H,W) prediction window");
    require_same_shape(vp, truth_window, "total_loss");
    const int l_count = vp.dim(0), h = vp.dim(2), w = vp.dim(3);
    if (mask.height() != h || mask.width() != w)
        throw std::invalid_argument("total_loss: mask shape mismatch");
    if (mask.count() == 0) throw std::invalid_argument("total_loss: mask selects no pixels");
    if (params.weights.alpha_op > 0.0 && l_count < 2)
        throw std::invalid_argument("total_loss: optical term needs at least 2 frames");
    if (params.weights.alpha_perc > 0.0 && params.extractor == nullptr)
        throw std::runtime_error(
            "total_loss: no feature extractor configured; set alpha_perc = 0 or configure one");

    // masked MSE over all frames
    NdArray mask_window({l_count, 1, h, w});
    for (int n = 0; n < l_count; ++n)
        for (std::size_t i = 0; i < mask.mask.size(); ++i)
            mask_window[static_cast<std::size_t>(n) * mask.mask.size() + i] = mask.mask[i];
    Var diff = t.sub(pred_window, t.put(truth_window));
    Var sq = t.mul(diff, diff);
    Var mse = t.scale(t.sum_all(t.mul(sq, t.put(mask_window))),
                      1.0 / (static_cast<double>(l_count) * static_cast<double>(mask.count())));

    Var total = mse;
    Var perc, optical;
    const auto box = mask_bounding_box(mask);
    if (params.weights.alpha_perc > 0.0) {
        Var pred_crop = t.crop_hw(pred_window, box[0], box[1], box[2], box[3]);
        NdArray truth_crop({l_count, 1, box[2], box[3]});
        for (int n = 0; n < l_count; ++n)
            for (int y = 0; y < box[2]; ++y)
                for (int x = 0; x < box[3]; ++x)
                    truth_crop.at4(n, 0, y, x) = truth_window.at4(n, 0, box[0] + y, box[1] + x);
        perc = perceptual_loss_taped(t, pred_crop, truth_crop, *params.extractor);
        total = t.add(total, t.scale(perc, params.weights.alpha_perc));
    }
    if (params.weights.alpha_op > 0.0) {
        Var pred_crop = t.crop_hw(pred_window, box[0], box[1], box[2], box[3]);
        std::vector<Var> pred_frames;
        std::vector<NdArray> truth_frames;
        for (int n = 0; n < l_count; ++n) {
            pred_frames.push_back(t.extract_hw(pred_crop, n, 0));
            NdArray tf({box[2], box[3]});
            for (int y = 0; y < box[2]; ++y)
                for (int x = 0; x < box[3]; ++x)
                    tf.at2(y, x) = truth_window.at4(n, 0, box[0] + y, box[1] + x);
            truth_frames.push_back(std::move(tf));
        }
        optical = optical_flow_regularizer_taped(t, pred_frames, truth_frames, params.flow,
                                                 params.magnitude_floor);
        total = t.add(total, t.scale(optical, params.weights.alpha_op));
    }

    if (report) {
        report->mse = t.scalar_value(mse);
        report->perceptual = perc.valid() ? t.scalar_value(perc) : 0.0;
        report->optical = optical.valid() ? t.scalar_value(optical) : 0.0;
        report->total = t.scalar_value(total);
    }
    return total;
}

inline LossReport total_loss(const SampleSequence& pred, const SampleSequence& truth,
                             const LossWeights& weights, const RegionMask& mask,
                             const FlowSolverParams& flow_params,
                             const FeatureExtractor* extractor = nullptr,
                             double magnitude_floor = 1e-6) {
    if (pred.length() != truth.length()) throw std::invalid_argument("total_loss: length mismatch");
    const int l_count = pred.length(), h = pred.height(), w = pred.width();
    NdArray pw({l_count, 1, h, w}), tw({l_count, 1, h, w});
    for (int n = 0; n < l_count; ++n) {
        const auto& pf = pred.frames[static_cast<std::size_t>(n)];
        const auto& tf = truth.frames[static_cast<std::size_t>(n)];
        if (pf.channels() != 1 || tf.channels() != 1)
            throw std::invalid_argument("total_loss: frames must be single-channel");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                pw.at4(n, 0, y, x) = pf.values.at3(0, y, x);
                tw.at4(n, 0, y, x) = tf.values.at3(0, y, x);
            }
    }
    TotalLossParams params;
    params.weights = weights;
    params.flow = flow_params;
    params.magnitude_floor = magnitude_floor;
    params.extractor = extractor;
    Tape t;
    LossReport report;
    (void)total_loss_taped(t, t.put(pw), tw, mask, params, &report);
    return report;
}

}  // namespace hossnet
