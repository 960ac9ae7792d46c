#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hossnet/png.hpp"
#include "hossnet/tensor.hpp"

namespace hossnet {

namespace detail {

// 3x5 glyphs, 15 bits each, rows top to bottom, 3 bits per row, MSB left.
inline std::uint16_t glyph_bits(char c) {
    switch (c) {
        case '0': return 0b111'101'101'101'111;
        case '1': return 0b010'110'010'010'111;
        case '2': return 0b111'001'111'100'111;
        case '3': return 0b111'001'111'001'111;
        case '4': return 0b101'101'111'001'001;
        case '5': return 0b111'100'111'001'111;
        case '6': return 0b111'100'111'101'111;
        case '7': return 0b111'001'001'010'010;
        case '8': return 0b111'101'111'101'111;
        case '9': return 0b111'101'111'001'111;
        case 'A': return 0b010'101'111'101'101;
        case 'B': return 0b110'101'110'101'110;
        case 'C': return 0b011'100'100'100'011;
        case 'D': return 0b110'101'101'101'110;
        case 'E': return 0b111'100'111'100'111;
        case 'F': return 0b111'100'111'100'100;
        case 'G': return 0b011'100'101'101'011;
        case 'H': return 0b101'101'111'101'101;
        case 'I': return 0b111'010'010'010'111;
        case 'J': return 0b001'001'001'101'010;
        case 'K': return 0b101'110'100'110'101;
        case 'L': return 0b100'100'100'100'111;
        case 'M': return 0b101'111'111'101'101;
        case 'N': return 0b110'101'101'101'101;
        case 'O': return 0b111'101'101'101'111;
        case 'P': return 0b111'101'111'100'100;
        case 'Q': return 0b111'101'101'111'001;
        case 'R': return 0b111'101'110'101'101;
        case 'S': return 0b011'100'010'001'110;
        case 'T': return 0b111'010'010'010'010;
        case 'U': return 0b101'101'101'101'111;
        case 'V': return 0b101'101'101'101'010;
        case 'W': return 0b101'101'111'111'101;
        case 'X': return 0b101'101'010'101'101;
        case 'Y': return 0b101'101'010'010'010;
        case 'Z': return 0b111'001'010'100'111;
        case '-': return 0b000'000'111'000'000;
        case '+': return 0b000'010'111'010'000;
        case '.': return 0b000'000'000'000'010;
        case ':': return 0b000'010'000'010'000;
        case '/': return 0b001'001'010'100'100;
        case '_': return 0b000'000'000'000'111;
        case '=': return 0b000'111'000'111'000;
        default: return 0;  // space and anything unknown
    }
}

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

inline void draw_text(PngImage& img, int y, int x, const std::string& text, Rgb color,
                      int scale = 1) {
    int cx = x;
    for (char raw : text) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        const std::uint16_t bits = glyph_bits(c);
        for (int row = 0; row < 5; ++row)
            for (int col = 0; col < 3; ++col)
                if (bits >> ((4 - row) * 3 + (2 - col)) & 1)
                    for (int dy = 0; dy < scale; ++dy)
                        for (int dx = 0; dx < scale; ++dx)
                            img.set_rgb(y + row * scale + dy, cx + col * scale + dx, color.r,
                                        color.g, color.b);
        cx += 4 * scale;
    }
}

inline void draw_line(PngImage& img, int y0, int x0, int y1, int x1, Rgb color) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    int x = x0, y = y0;
    while (true) {
        img.set_rgb(y, x, color.r, color.g, color.b);
        if (x == x1 && y == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y += sy;
        }
    }
}

inline Rgb series_color(std::size_t index) {
    static const Rgb palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                  {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};
    return palette[index % (sizeof(palette) / sizeof(palette[0]))];
}

inline std::string short_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

}  // namespace detail

/// Grayscale rendering of a (H,W) field; values clipped to [lo, hi], each
/// source pixel drawn as a scale x scale block.
inline PngImage render_field(const NdArray& field, double lo, double hi, int scale = 4) {
    if (field.ndim() != 2) throw std::invalid_argument("render_field: expected (H,W)");
    if (!(hi > lo)) throw std::invalid_argument("render_field: need hi > lo");
    if (scale < 1) throw std::invalid_argument("render_field: scale must be >= 1");
    const int h = field.dim(0), w = field.dim(1);
    PngImage img(w * scale, h * scale, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double t = std::clamp((field.at2(y, x) - lo) / (hi - lo), 0.0, 1.0);
            const auto v = static_cast<std::uint8_t>(std::lround(t * 255.0));
            for (int dy = 0; dy < scale; ++dy)
                for (int dx = 0; dx < scale; ++dx) img.at(y * scale + dy, x * scale + dx, 0) = v;
        }
    return img;
}

/// Prediction, ground truth, and signed difference side by side. Fields are
/// shown on [0,1]; the difference panel uses a diverging blue-white-red map
/// symmetric about zero.
inline PngImage render_triptych(const NdArray& pred, const NdArray& truth,
                                const std::string& title = "", int scale = 4) {
    require_same_shape(pred, truth, "render_triptych");
    if (pred.ndim() != 2) throw std::invalid_argument("render_triptych: expected (H,W)");
    const int h = pred.dim(0), w = pred.dim(1);
    const int gap = 2, header = 8;
    PngImage img(3 * w * scale + 2 * gap, h * scale + header, 3, 255);

    double max_abs = 1e-9;
    for (std::size_t i = 0; i < pred.size(); ++i)
        max_abs = std::max(max_abs, std::abs(pred[i] - truth[i]));

    auto blit_gray = [&](const NdArray& a, int x_off) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double t = std::clamp(a.at2(y, x), 0.0, 1.0);
                const auto v = static_cast<std::uint8_t>(std::lround(t * 255.0));
                for (int dy = 0; dy < scale; ++dy)
                    for (int dx = 0; dx < scale; ++dx)
                        img.set_rgb(header + y * scale + dy, x_off + x * scale + dx, v, v, v);
            }
    };
    blit_gray(pred, 0);
    blit_gray(truth, w * scale + gap);

    const int diff_off = 2 * (w * scale + gap);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d = (pred.at2(y, x) - truth.at2(y, x)) / max_abs;
            // d < 0: white -> blue, d > 0: white -> red
            const double a = std::clamp(std::abs(d), 0.0, 1.0);
            const auto fade = static_cast<std::uint8_t>(std::lround((1.0 - a) * 255.0));
            const std::uint8_t r = d > 0 ? 255 : fade;
            const std::uint8_t b = d < 0 ? 255 : fade;
            const std::uint8_t g = fade;
            for (int dy = 0; dy < scale; ++dy)
                for (int dx = 0; dx < scale; ++dx)
                    img.set_rgb(header + y * scale + dy, diff_off + x * scale + dx, r, g, b);
        }

    detail::draw_text(img, 1, 1, "PRED", {0, 0, 0});
    detail::draw_text(img, 1, w * scale + gap + 1, "TRUTH", {0, 0, 0});
    detail::draw_text(img, 1, diff_off + 1, "DIFF", {0, 0, 0});
    if (!title.empty()) detail::draw_text(img, 1, 3 * 4 * 6, title, {90, 90, 90});
    return img;
}

struct CurveSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

/// Line chart of one or more series with axes, ticks, and a legend.
inline PngImage render_curves(const std::vector<CurveSeries>& series, const std::string& x_label,
                              const std::string& y_label) {
    if (series.empty()) throw std::invalid_argument("render_curves: no series");
    for (const auto& s : series)
        if (s.points.empty())
            throw std::invalid_argument("render_curves: series '" + s.label + "' has no points");

    const int width = 640, height = 420;
    const int left = 56, right = 16, top = 18, bottom = 40;
    PngImage img(width, height, 3, 255);

    double x_min = series[0].points[0].first, x_max = x_min;
    double y_min = series[0].points[0].second, y_max = y_min;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    if (x_max == x_min) {
        x_min -= 1.0;
        x_max += 1.0;
    }
    if (y_max == y_min) {
        y_min -= 1.0;
        y_max += 1.0;
    }
    const double y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    const int plot_w = width - left - right, plot_h = height - top - bottom;
    auto px = [&](double x) {
        return left + static_cast<int>(std::lround((x - x_min) / (x_max - x_min) * plot_w));
    };
    auto py = [&](double y) {
        return top + plot_h - static_cast<int>(std::lround((y - y_min) / (y_max - y_min) * plot_h));
    };

    const detail::Rgb axis{60, 60, 60}, grid{225, 225, 225};
    for (int tick = 0; tick <= 4; ++tick) {
        const double xv = x_min + (x_max - x_min) * tick / 4.0;
        const double yv = y_min + (y_max - y_min) * tick / 4.0;
        detail::draw_line(img, top, px(xv), top + plot_h, px(xv), grid);
        detail::draw_line(img, py(yv), left, py(yv), left + plot_w, grid);
        detail::draw_text(img, top + plot_h + 6, px(xv) - 6, detail::short_number(xv), axis);
        detail::draw_text(img, py(yv) - 2, 4, detail::short_number(yv), axis);
    }
    detail::draw_line(img, top, left, top + plot_h, left, axis);
    detail::draw_line(img, top + plot_h, left, top + plot_h, left + plot_w, axis);
    detail::draw_text(img, height - 12, left + plot_w / 2 - 2 * static_cast<int>(x_label.size()),
                      x_label, axis);
    detail::draw_text(img, 4, 4, y_label, axis);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto color = detail::series_color(si);
        const auto& pts = series[si].points;
        for (std::size_t i = 0; i + 1 < pts.size(); ++i)
            detail::draw_line(img, py(pts[i].second), px(pts[i].first), py(pts[i + 1].second),
                              px(pts[i + 1].first), color);
        for (const auto& [x, y] : pts)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    img.set_rgb(py(y) + dy, px(x) + dx, color.r, color.g, color.b);
        detail::draw_text(img, top + 4 + 8 * static_cast<int>(si), left + plot_w - 120,
                          series[si].label, color);
    }
    return img;
}

inline void write_triptych_png(const std::filesystem::path& path, const NdArray& pred,
                               const NdArray& truth, const std::string& title,
                               const std::string& manifest_id) {
    write_png(path, render_triptych(pred, truth, title), {{"manifest", manifest_id}});
}

inline void write_curves_png(const std::filesystem::path& path,
                             const std::vector<CurveSeries>& series, const std::string& x_label,
                             const std::string& y_label, const std::string& manifest_id) {
    write_png(path, render_curves(series, x_label, y_label), {{"manifest", manifest_id}});
}

}  // namespace hossnet
