#pragma once

// Frame I/O and preprocessing: binary PPM, nearest-neighbour resize, packing
// into the 8-bit input tensor, and box overlays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpyolo/bytes.hpp"
#include "lpyolo/model.hpp"
#include "lpyolo/postprocess.hpp"
#include "lpyolo/qcore.hpp"

namespace lpyolo {

/// 8-bit RGB, row-major, interleaved.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* px(int x, int y) { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }
    const std::uint8_t* px(int x, int y) const { return &pixels[(static_cast<std::size_t>(y) * width + x) * 3]; }

    bool operator==(const Image&) const = default;
};

enum class PpmErrc { io, bad_magic, bad_header, bad_maxval, truncated };

class PpmError : public std::runtime_error {
public:
    PpmError(PpmErrc kind, const std::string& what) : std::runtime_error("ppm: " + what), kind_(kind) {}
    PpmErrc kind() const { return kind_; }

private:
    PpmErrc kind_;
};

inline Image decode_ppm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
        throw PpmError(PpmErrc::bad_magic, "expected binary P6 magic");
    }
    pos = 2;
    auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
    auto next_int = [&](const char* what) {
        for (;;) {
            while (pos < bytes.size() && is_space(bytes[pos])) {
                ++pos;
            }
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
                continue;
            }
            break;
        }
        if (pos >= bytes.size()) {
            throw PpmError(PpmErrc::truncated, std::string("header ended before ") + what);
        }
        if (bytes[pos] < '0' || bytes[pos] > '9') {
            throw PpmError(PpmErrc::bad_header, std::string("non-numeric ") + what);
        }
        long long v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1'000'000) {
                throw PpmError(PpmErrc::bad_header, std::string(what) + " too large");
            }
            ++pos;
        }
        return static_cast<int>(v);
    };
    const int w = next_int("width");
    const int h = next_int("height");
    const int maxval = next_int("maxval");
    if (w <= 0 || h <= 0) {
        throw PpmError(PpmErrc::bad_header, "zero image dimension");
    }
    if (maxval != 255) {
        throw PpmError(PpmErrc::bad_maxval, "maxval " + std::to_string(maxval) + " unsupported, need 255");
    }
    if (pos >= bytes.size() || !is_space(bytes[pos])) {
        throw PpmError(PpmErrc::truncated, "missing separator before pixel data");
    }
    ++pos;
    Image img(w, h);
    if (bytes.size() - pos < img.pixels.size()) {
        throw PpmError(PpmErrc::truncated, "pixel data has " + std::to_string(bytes.size() - pos) + " of " +
                                               std::to_string(img.pixels.size()) + " bytes");
    }
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.pixels.size(), img.pixels.begin());
    return img;
}

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
    return out;
}

inline Image read_ppm(const std::string& path) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = detail::read_file(path);
    } catch (const std::runtime_error& e) {
        throw PpmError(PpmErrc::io, e.what());
    }
    return decode_ppm(bytes);
}

inline void write_ppm(const Image& img, const std::string& path) {
    try {
        detail::write_file(path, encode_ppm(img));
    } catch (const std::runtime_error& e) {
        throw PpmError(PpmErrc::io, e.what());
    }
}

/// Nearest neighbour: src = floor(dst * src_size / dst_size) on each axis.
inline Image resize_nearest(const Image& src, int out_w = kInputSize, int out_h = kInputSize) {
    if (src.width < 1 || src.height < 1 || out_w < 1 || out_h < 1) {
        throw std::invalid_argument("resize: dimensions must be positive");
    }
    Image dst(out_w, out_h);
    std::vector<int> xs(static_cast<std::size_t>(out_w));
    for (int x = 0; x < out_w; ++x) {
        xs[x] = static_cast<int>(static_cast<std::int64_t>(x) * src.width / out_w);
    }
    for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>(static_cast<std::int64_t>(y) * src.height / out_h);
        for (int x = 0; x < out_w; ++x) {
            std::copy_n(src.px(xs[x], sy), 3, dst.px(x, y));
        }
    }
    return dst;
}

/// HWC 8-bit unsigned tensor at scale 1/255.
inline QuantTensor pack_input(const Image& img) {
    if (img.width != kInputSize || img.height != kInputSize) {
        throw std::invalid_argument("pack_input: image is " + std::to_string(img.width) + "x" +
                                    std::to_string(img.height) + ", need 416x416");
    }
    QuantTensor t(Shape{kInputSize, kInputSize, 3}, input_params());
    std::copy(img.pixels.begin(), img.pixels.end(), t.data.begin());
    return t;
}

/// Inverse of pack_input for any 8-bit three-channel tensor.
inline Image unpack_input(const QuantTensor& t) {
    Image img(t.shape.w, t.shape.h);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(t.data[i]);
    }
    return img;
}

struct Rgb {
    std::uint8_t r = 255;
    std::uint8_t g = 0;
    std::uint8_t b = 0;
};

/// Corner pixel coordinates of a detection, before clipping.
struct PixelRect {
    int x0, y0, x1, y1;
};

inline PixelRect denormalize(const Detection& d, int width, int height) {
    return {static_cast<int>(std::lround((d.cx - d.w / 2) * width)),
            static_cast<int>(std::lround((d.cy - d.h / 2) * height)),
            static_cast<int>(std::lround((d.cx + d.w / 2) * width)),
            static_cast<int>(std::lround((d.cy + d.h / 2) * height))};
}

/// Draws a 2-pixel border for each detection inside its rectangle, clipped to
/// the image. Pixels off the borders are untouched.
inline Image draw_detections(Image img, const std::vector<Detection>& dets, Rgb color = {}) {
    constexpr int kThickness = 2;
    auto paint = [&](int x, int y) {
        if (x >= 0 && y >= 0 && x < img.width && y < img.height) {
            auto* p = img.px(x, y);
            p[0] = color.r;
            p[1] = color.g;
            p[2] = color.b;
        }
    };
    for (const auto& d : dets) {
        PixelRect r = denormalize(d, img.width, img.height);
        if (r.x1 < 0 || r.y1 < 0 || r.x0 >= img.width || r.y0 >= img.height) {
            continue;
        }
        r.x0 = std::clamp(r.x0, 0, img.width - 1);
        r.x1 = std::clamp(r.x1, 0, img.width - 1);
        r.y0 = std::clamp(r.y0, 0, img.height - 1);
        r.y1 = std::clamp(r.y1, 0, img.height - 1);
        if (r.x1 < r.x0 || r.y1 < r.y0) {
            continue;
        }
        for (int t = 0; t < kThickness; ++t) {
            for (int x = r.x0; x <= r.x1; ++x) {
                paint(x, std::min(r.y0 + t, r.y1));
                paint(x, std::max(r.y1 - t, r.y0));
            }
            for (int y = r.y0; y <= r.y1; ++y) {
                paint(std::min(r.x0 + t, r.x1), y);
                paint(std::max(r.x1 - t, r.x0), y);
            }
        }
    }
    return img;
}

/// *.ppm files in a directory, lexicographic by file name.
inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw std::runtime_error("frame source " + dir.string() + " is not a directory");
    }
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ppm") {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    return out;
}

}  // namespace lpyolo
