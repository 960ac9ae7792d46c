#pragma once

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hossnet {

/// 8-bit image, rows top to bottom, channels interleaved (1 = gray, 3 = RGB).
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    PngImage() = default;
    PngImage(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 1 || h < 1 || (c != 1 && c != 3))
            throw std::invalid_argument("PngImage: bad dimensions");
    }

    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    void set_rgb(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (y < 0 || y >= height || x < 0 || x >= width) return;
        if (channels == 1) {
            at(y, x, 0) = r;
        } else {
            at(y, x, 0) = r;
            at(y, x, 1) = g;
            at(y, x, 2) = b;
        }
    }
};

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                         const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(type[i]));
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + data.size()));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Serializes the image as an 8-bit PNG (grayscale or truecolor) with optional
/// tEXt metadata chunks.
inline std::vector<std::uint8_t> encode_png(const PngImage& img,
                                            const std::map<std::string, std::string>& text = {}) {
    if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3))
        throw std::invalid_argument("encode_png: bad image");
    if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw std::invalid_argument("encode_png: pixel buffer size mismatch");

    std::vector<std::uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};

    std::vector<std::uint8_t> ihdr;
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
    detail::put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                                      // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);              // gray / truecolor
    ihdr.push_back(0);                                      // compression
    ihdr.push_back(0);                                      // filter
    ihdr.push_back(0);                                      // no interlace
    detail::append_chunk(out, "IHDR", ihdr);

    for (const auto& [key, value] : text) {
        if (key.empty() || key.size() > 79)
            throw std::invalid_argument("encode_png: tEXt keyword must be 1..79 chars");
        std::vector<std::uint8_t> chunk(key.begin(), key.end());
        chunk.push_back(0);
        chunk.insert(chunk.end(), value.begin(), value.end());
        detail::append_chunk(out, "tEXt", chunk);
    }

    // raw scanlines, filter byte 0 per row
    const std::size_t row_bytes = static_cast<std::size_t>(img.width) * img.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((row_bytes + 1) * static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        const auto* row = img.pixels.data() + static_cast<std::size_t>(y) * row_bytes;
        raw.insert(raw.end(), row, row + row_bytes);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw std::runtime_error("encode_png: deflate failed");
    compressed.resize(bound);
    detail::append_chunk(out, "IDAT", compressed);

    detail::append_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::filesystem::path& path, const PngImage& img,
                      const std::map<std::string, std::string>& text = {}) {
    const auto bytes = encode_png(img, text);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_png: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write_png: write failed for " + path.string());
}

}  // namespace hossnet
