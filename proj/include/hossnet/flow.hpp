#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hossnet/ad.hpp"
#include "hossnet/core.hpp"

namespace hossnet {

enum class DerivativeScheme { central, forward };

struct FlowSolverParams {
    double lambda = 1.0;
    int n_iterations = 100;
    DerivativeScheme derivative_scheme = DerivativeScheme::central;

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda))
            throw std::invalid_argument("FlowSolverParams: lambda must be finite and positive");
        if (n_iterations < 1)
            throw std::invalid_argument("FlowSolverParams: n_iterations must be >= 1");
    }
};

/// Neighbour weights of the 3×3 averaging kernel: 1/6 for the four axial
/// neighbours, 1/12 for the diagonals (weights sum to 1 on interior pixels).
inline constexpr std::array<double, 9> kFlowAvgKernel{1.0 / 12, 1.0 / 6, 1.0 / 12,
                                                      1.0 / 6,  0.0,     1.0 / 6,
                                                      1.0 / 12, 1.0 / 6, 1.0 / 12};

namespace detail {

/// Per-pixel sum of in-bounds kernel weights; < 1 along the image border.
inline NdArray flow_weight_sums(int h, int w) {
    NdArray c({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    s += kFlowAvgKernel[static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))];
                }
            c.at2(y, x) = s;
        }
    return c;
}

}  // namespace detail

/// Differentiable Horn-Schunck solve on the tape. a and b are (H,W) vars;
/// returns the (u, v) vars after the fixed number of Jacobi sweeps.
///
/// Each sweep solves the per-pixel 2×2 stationarity system of the discretized
/// objective (see flow_objective) with neighbour averages held fixed, which
/// reduces to the classical update
///   u = ū − Yx (Yx ū + Yy v̄ + Yt) / (β + Yx² + Yy²),  β = 2 λ² c
/// where c is the in-bounds kernel weight sum and ū = (kernel ⊛ u) / c.
inline std::pair<Var, Var> estimate_flow_taped(Tape& t, Var a, Var b,
                                               const FlowSolverParams& params) {
    params.validate();
    const NdArray& va = t.value(a);
    const NdArray& vb = t.value(b);
    if (va.ndim() != 2 || vb.ndim() != 2)
        throw std::invalid_argument("estimate_flow: frames must be (H,W)");
    require_same_shape(va, vb, "estimate_flow");
    const int h = va.dim(0), w = va.dim(1);
    if (h < 2 || w < 2) throw std::invalid_argument("estimate_flow: grid must be at least 2x2");

    Var f = t.scale(t.add(a, b), 0.5);
    const bool central = params.derivative_scheme == DerivativeScheme::central;
    Var yx = central ? t.dx_central(f) : t.dx_forward(f);
    Var yy = central ? t.dy_central(f) : t.dy_forward(f);
    Var yt = t.sub(b, a);

    const NdArray c = detail::flow_weight_sums(h, w);
    NdArray beta({h, w}), recip_c({h, w});
    for (std::size_t i = 0; i < c.size(); ++i) {
        beta[i] = 2.0 * params.lambda * params.lambda * c[i];
        recip_c[i] = 1.0 / c[i];
    }
    Var beta_v = t.put(beta);
    Var recip_c_v = t.put(recip_c);
    Var denom = t.add(beta_v, t.add(t.mul(yx, yx), t.mul(yy, yy)));

    Var u = t.put(NdArray({h, w}, 0.0));
    Var v = t.put(NdArray({h, w}, 0.0));
    for (int it = 0; it < params.n_iterations; ++it) {
        Var ubar = t.mul(t.conv3x3_fixed(u, kFlowAvgKernel), recip_c_v);
        Var vbar = t.mul(t.conv3x3_fixed(v, kFlowAvgKernel), recip_c_v);
        Var p = t.add(t.add(t.mul(yx, ubar), t.mul(yy, vbar)), yt);
        Var q = t.div(p, denom);
        u = t.sub(ubar, t.mul(yx, q));
        v = t.sub(vbar, t.mul(yy, q));
    }
    return {u, v};
}

inline FlowField estimate_flow(const NdArray& a, const NdArray& b,
                               const FlowSolverParams& params) {
    Tape t;
    auto [u, v] = estimate_flow_taped(t, t.put(a), t.put(b), params);
    FlowField out;
    out.u = t.value(u);
    out.v = t.value(v);
    return out;
}

inline NdArray single_channel_view(const FieldFrame& f, const char* where) {
    if (f.channels() != 1)
        throw std::invalid_argument(std::string(where) + ": frame must be single-channel");
    NdArray img({f.height(), f.width()});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = f.values[i];
    return img;
}

inline FlowField estimate_flow(const FieldFrame& a, const FieldFrame& b,
                               const FlowSolverParams& params) {
    return estimate_flow(single_channel_view(a, "estimate_flow"),
                         single_channel_view(b, "estimate_flow"), params);
}

/// The objective the solver minimizes: data term summed over pixels plus
/// λ²-weighted pairwise smoothness over all ordered in-bounds neighbour pairs
/// (kernel weights 1/6 axial, 1/12 diagonal, so each unordered pair counts
/// twice).
inline double flow_objective(const NdArray& a, const NdArray& b, const NdArray& u,
                             const NdArray& v, const FlowSolverParams& params) {
    params.validate();
    require_same_shape(a, b, "flow_objective");
    require_same_shape(a, u, "flow_objective");
    require_same_shape(a, v, "flow_objective");
    if (a.ndim() != 2) throw std::invalid_argument("flow_objective: frames must be (H,W)");
    const int h = a.dim(0), w = a.dim(1);
    const bool central = params.derivative_scheme == DerivativeScheme::central;

    double data = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto favg = [&](int yy, int xx) { return 0.5 * (a.at2(yy, xx) + b.at2(yy, xx)); };
            double yx_val, yy_val;
            if (central) {
                yx_val = 0.5 * (favg(y, std::min(x + 1, w - 1)) - favg(y, std::max(x - 1, 0)));
                yy_val = 0.5 * (favg(std::min(y + 1, h - 1), x) - favg(std::max(y - 1, 0), x));
            } else {
                yx_val = favg(y, std::min(x + 1, w - 1)) - favg(y, x);
                yy_val = favg(std::min(y + 1, h - 1), x) - favg(y, x);
            }
            const double yt_val = b.at2(y, x) - a.at2(y, x);
            const double r = yx_val * u.at2(y, x) + yy_val * v.at2(y, x) + yt_val;
            data += r * r;
        }

    double smooth = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy2 = y + dy, xx2 = x + dx;
                    if ((dy == 0 && dx == 0) || yy2 < 0 || yy2 >= h || xx2 < 0 || xx2 >= w)
                        continue;
                    const double wgt =
                        kFlowAvgKernel[static_cast<std::size_t>((dy + 1) * 3 + (dx + 1))];
                    const double du = u.at2(yy2, xx2) - u.at2(y, x);
                    const double dv = v.at2(yy2, xx2) - v.at2(y, x);
                    smooth += wgt * (du * du + dv * dv);
                }
    return data + params.lambda * params.lambda * smooth;
}

/// Sum of squared angles between corresponding vectors, over pixels where
/// both magnitudes reach the floor.
inline double flow_angle_loss(const FlowField& pred, const FlowField& obs,
                              double magnitude_floor) {
    if (!(magnitude_floor > 0.0))
        throw std::invalid_argument("flow_angle_loss: magnitude_floor must be positive");
    Tape t;
    Var loss = t.angle_loss(t.put(pred.u), t.put(pred.v), t.put(obs.u), t.put(obs.v),
                            magnitude_floor);
    return t.scalar_value(loss);
}

/// Taped flow-direction regularizer. pred_frames are (H,W) vars on the tape;
/// obs_frames are plain images whose flow is a constant (no gradient flows
/// into the observed branch). Mean of per-pair angle losses over T-1 pairs.
inline Var optical_flow_regularizer_taped(Tape& t, const std::vector<Var>& pred_frames,
                                          const std::vector<NdArray>& obs_frames,
                                          const FlowSolverParams& params,
                                          double magnitude_floor) {
    if (pred_frames.size() != obs_frames.size())
        throw std::invalid_argument("optical_flow_regularizer: pred/obs length mismatch");
    if (pred_frames.size() < 2)
        throw std::invalid_argument("optical_flow_regularizer: needs at least 2 frames");
    if (!(magnitude_floor > 0.0))
        throw std::invalid_argument("optical_flow_regularizer: magnitude_floor must be positive");
    Var total = t.scalar(0.0);
    const std::size_t n_pairs = pred_frames.size() - 1;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const FlowField obs_flow = estimate_flow(obs_frames[i], obs_frames[i + 1], params);
        auto [pu, pv] = estimate_flow_taped(t, pred_frames[i], pred_frames[i + 1], params);
        Var pair = t.angle_loss(pu, pv, t.put(obs_flow.u), t.put(obs_flow.v), magnitude_floor);
        total = t.add(total, pair);
    }
    return t.scale(total, 1.0 / static_cast<double>(n_pairs));
}

inline double optical_flow_regularizer(const SampleSequence& pred, const SampleSequence& obs,
                                       const FlowSolverParams& params, double magnitude_floor) {
    if (pred.length() != obs.length())
        throw std::invalid_argument("optical_flow_regularizer: sequence length mismatch");
    if (pred.length() < 2) throw std::invalid_argument("optical_flow_regularizer: T must be >= 2");
    Tape t;
    std::vector<Var> pred_vars;
    std::vector<NdArray> obs_imgs;
    for (int i = 0; i < pred.length(); ++i) {
        pred_vars.push_back(t.put(single_channel_view(pred.frames[static_cast<std::size_t>(i)],
                                                      "optical_flow_regularizer")));
        obs_imgs.push_back(single_channel_view(obs.frames[static_cast<std::size_t>(i)],
                                               "optical_flow_regularizer"));
    }
    return t.scalar_value(
        optical_flow_regularizer_taped(t, pred_vars, obs_imgs, params, magnitude_floor));
}

}  // namespace hossnet
