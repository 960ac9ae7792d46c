#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hossnet/core.hpp"
#include "hossnet/util.hpp"

namespace hossnet {

// ---- RMSE ----

inline double rmse(const NdArray& pred, const NdArray& truth) {
    require_same_shape(pred, truth, "rmse");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

/// RMSE over the masked pixels only; 0 on an empty mask (degenerate regions
/// must not blow up the weighted error).
inline double rmse_masked(const NdArray& pred, const NdArray& truth, const RegionMask& mask) {
    require_same_shape(pred, truth, "rmse_masked");
    require_same_shape(pred, mask.mask, "rmse_masked");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask.mask[i] != 0.0) {
            const double d = pred[i] - truth[i];
            s += d * d;
            ++n;
        }
    return n == 0 ? 0.0 : std::sqrt(s / static_cast<double>(n));
}

// ---- SSIM ----

struct SsimParams {
    int window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;

    void validate() const {
        if (window < 1 || window % 2 == 0)
            throw std::invalid_argument("ssim: window must be odd and >= 1");
        if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data_range must be positive");
        if (!(k1 > 0.0) || !(k2 > 0.0)) throw std::invalid_argument("ssim: k1, k2 must be positive");
    }
};

namespace detail {

/// Summed-area table: s(y,x) = sum of a over rows < y, cols < x.
inline NdArray integral_image(const NdArray& a) {
    const int h = a.dim(0), w = a.dim(1);
    NdArray s({h + 1, w + 1}, 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        for (int x = 0; x < w; ++x) {
            row += a.at2(y, x);
            s.at2(y + 1, x + 1) = s.at2(y, x + 1) + row;
        }
    }
    return s;
}

inline double box_sum(const NdArray& s, int y0, int x0, int k) {
    return s.at2(y0 + k, x0 + k) - s.at2(y0, x0 + k) - s.at2(y0 + k, x0) + s.at2(y0, x0);
}

}  // namespace detail

/// Mean structural similarity over all fully-inside uniform windows, with the
/// standard stabilizers C1=(k1*range)^2, C2=(k2*range)^2 and biased moments.
inline double ssim(const NdArray& pred, const NdArray& truth, const SsimParams& params = {}) {
    require_same_shape(pred, truth, "ssim");
    if (pred.ndim() != 2) throw std::invalid_argument("ssim: expected (H,W) frames");
    params.validate();
    const int h = pred.dim(0), w = pred.dim(1), k = params.window;
    if (k > h || k > w)
        throw std::invalid_argument("ssim: window larger than the image");

    NdArray xx = NdArray::zeros_like(pred), yy = NdArray::zeros_like(pred),
            xy = NdArray::zeros_like(pred);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        xx[i] = pred[i] * pred[i];
        yy[i] = truth[i] * truth[i];
        xy[i] = pred[i] * truth[i];
    }
    const NdArray sx = detail::integral_image(pred), sy = detail::integral_image(truth);
    const NdArray sxx = detail::integral_image(xx), syy = detail::integral_image(yy);
    const NdArray sxy = detail::integral_image(xy);

    const double c1 = params.k1 * params.data_range * params.k1 * params.data_range;
    const double c2 = params.k2 * params.data_range * params.k2 * params.data_range;
    const double n = static_cast<double>(k) * k;

    double total = 0.0;
    int count = 0;
    for (int y0 = 0; y0 + k <= h; ++y0)
        for (int x0 = 0; x0 + k <= w; ++x0) {
            const double mx = detail::box_sum(sx, y0, x0, k) / n;
            const double my = detail::box_sum(sy, y0, x0, k) / n;
            const double vx = detail::box_sum(sxx, y0, x0, k) / n - mx * mx;
            const double vy = detail::box_sum(syy, y0, x0, k) / n - my * my;
            const double cxy = detail::box_sum(sxy, y0, x0, k) / n - mx * my;
            const double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            ++count;
        }
    return total / static_cast<double>(count);
}

inline double ssim(const FieldFrame& pred, const FieldFrame& truth, const SsimParams& params = {}) {
    if (pred.channels() != 1 || truth.channels() != 1)
        throw std::invalid_argument("ssim: expected single-channel frames");
    NdArray a({pred.height(), pred.width()}), b({truth.height(), truth.width()});
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = pred.values[i];
        b[i] = truth.values[i];
    }
    return ssim(a, b, params);
}

// ---- weighted fracture error ----

/// Dynamic region: pixels whose truth changes by more than `threshold`
/// anywhere inside [t0, t1], grown by `dilation` pixels (Chebyshev metric).
inline RegionMask detect_dynamic_region(const SampleSequence& truth, int t0, int t1,
                                        double threshold = 1e-4, int dilation = 2) {
    truth.validate();
    if (truth.channels() != 1)
        throw std::invalid_argument("detect_dynamic_region: expected single-channel frames");
    if (t0 < 0 || t1 >= truth.length() || t0 >= t1)
        throw std::invalid_argument("detect_dynamic_region: need 0 <= t0 < t1 < T");
    const int h = truth.height(), w = truth.width();
    NdArray changed({h, w}, 0.0);
    const auto& base = truth.frames[static_cast<std::size_t>(t0)].values;
    for (int t = t0 + 1; t <= t1; ++t) {
        const auto& cur = truth.frames[static_cast<std::size_t>(t)].values;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (std::abs(cur.at3(0, y, x) - base.at3(0, y, x)) > threshold)
                    changed.at2(y, x) = 1.0;
    }
    RegionMask dynamic(h, w, MaskKind::dynamic);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (changed.at2(y, x) == 0.0) continue;
            for (int dy = -dilation; dy <= dilation; ++dy)
                for (int dx = -dilation; dx <= dilation; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy >= 0 && yy < h && xx >= 0 && xx < w) dynamic.mask.at2(yy, xx) = 1.0;
                }
        }
    return dynamic;
}

/// Weighted fracture error: dynamic-region RMSE weighted 10x plus fixed-region
/// RMSE. Empty regions contribute zero.
inline double wfe(const NdArray& pred, const NdArray& truth, const RegionMask& dynamic) {
    const RegionMask fixed = dynamic.complement(MaskKind::fixed);
    return 10.0 * rmse_masked(pred, truth, dynamic) + rmse_masked(pred, truth, fixed);
}

// ---- evaluation records ----

struct EvalRecord {
    std::string sample_id;
    int lead_time = 0;  // steps past the last frame the model was given
    double rmse = 0.0;
    double ssim = 0.0;
    double wfe = 0.0;

    void validate() const {
        if (lead_time < 0) throw std::invalid_argument("EvalRecord: negative lead_time");
        if (rmse < 0.0 || wfe < 0.0) throw std::invalid_argument("EvalRecord: negative error");
        if (ssim < -1.0 - 1e-12 || ssim > 1.0 + 1e-12)
            throw std::invalid_argument("EvalRecord: ssim outside [-1, 1]");
    }
};

enum class MetricKind { rmse, ssim, wfe };

inline std::string to_string(MetricKind m) {
    switch (m) {
        case MetricKind::rmse: return "rmse";
        case MetricKind::ssim: return "ssim";
        case MetricKind::wfe: return "wfe";
    }
    throw std::logic_error("unknown MetricKind");
}

inline double metric_of(const EvalRecord& r, MetricKind m) {
    switch (m) {
        case MetricKind::rmse: return r.rmse;
        case MetricKind::ssim: return r.ssim;
        case MetricKind::wfe: return r.wfe;
    }
    throw std::logic_error("unknown MetricKind");
}

struct CurvePoint {
    int lead_time = 0;
    double mean = 0.0;
    int count = 0;
};

/// Mean metric per lead time, thinned to every `interval`-th lead starting at
/// the smallest one present, capped at `max_lead`.
inline std::vector<CurvePoint> temporal_curve(const std::vector<EvalRecord>& records,
                                              MetricKind metric, int interval = 2,
                                              int max_lead = 60) {
    if (records.empty()) throw std::invalid_argument("temporal_curve: no records");
    if (interval < 1) throw std::invalid_argument("temporal_curve: interval must be >= 1");
    std::map<int, CurvePoint> by_lead;
    for (const auto& r : records) {
        auto& p = by_lead[r.lead_time];
        p.lead_time = r.lead_time;
        p.mean += metric_of(r, metric);
        p.count += 1;
    }
    const int lead_min = by_lead.begin()->first;
    std::vector<CurvePoint> out;
    for (auto& [lead, p] : by_lead) {
        if (lead > max_lead || (lead - lead_min) % interval != 0) continue;
        p.mean /= static_cast<double>(p.count);
        out.push_back(p);
    }
    return out;
}

inline void write_eval_csv(const std::filesystem::path& path,
                           const std::vector<EvalRecord>& records,
                           const std::string& manifest_id) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_eval_csv: cannot open " + path.string());
    out << "# manifest: " << manifest_id << "\n";
    out << "sample_id,lead_time,rmse,ssim,wfe\n";
    for (const auto& r : records) {
        r.validate();
        out << r.sample_id << "," << r.lead_time << "," << format_double(r.rmse) << ","
            << format_double(r.ssim) << "," << format_double(r.wfe) << "\n";
    }
    if (!out) throw std::runtime_error("write_eval_csv: write failed for " + path.string());
}

inline std::vector<EvalRecord> read_eval_csv(const std::filesystem::path& path,
                                             std::string* manifest_id = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_eval_csv: cannot open " + path.string());
    std::string line;
    std::vector<EvalRecord> records;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("# manifest: ", 0) == 0) {
            if (manifest_id) *manifest_id = line.substr(12);
            continue;
        }
        if (!header_seen) {
            if (line != "sample_id,lead_time,rmse,ssim,wfe")
                throw std::runtime_error("read_eval_csv: unexpected header: " + line);
            header_seen = true;
            continue;
        }
        std::stringstream ss(line);
        std::string field;
        EvalRecord r;
        std::getline(ss, field, ',');
        r.sample_id = field;
        std::getline(ss, field, ',');
        r.lead_time = std::stoi(field);
        std::getline(ss, field, ',');
        r.rmse = std::stod(field);
        std::getline(ss, field, ',');
        r.ssim = std::stod(field);
        if (!std::getline(ss, field, ','))
            throw std::runtime_error("read_eval_csv: malformed row: " + line);
        r.wfe = std::stod(field);
        records.push_back(std::move(r));
    }
    if (!header_seen) throw std::runtime_error("read_eval_csv: missing header in " + path.string());
    return records;
}

}  // namespace hossnet
