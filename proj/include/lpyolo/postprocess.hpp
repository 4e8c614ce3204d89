#pragma once

// Output-side processing: dequantize the 13x13x18 grid, decode anchor boxes,
// greedy NMS, and single-class average precision against WiderFace-style
// ground truth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpyolo/model.hpp"
#include "lpyolo/qcore.hpp"

namespace lpyolo {

class PostprocessError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultConfThreshold = 0.25;
inline constexpr double kDefaultNmsIou = 0.45;

/// Decoded box in normalized image coordinates (center form).
struct Detection {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
    double objectness = 0.0;
    double class_score = 0.0;

    double score() const { return objectness * class_score; }
    bool operator==(const Detection&) const = default;
};

/// Corner-origin rectangle: (x, y) is the top-left corner.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
    bool operator==(const Box&) const = default;
};

inline Box to_box(const Detection& d) { return {d.cx - d.w / 2.0, d.cy - d.h / 2.0, d.w, d.h}; }

/// Detection scaled to a pixel-space corner box.
inline Box to_pixel_box(const Detection& d, int image_w, int image_h) {
    const Box b = to_box(d);
    return {b.x * image_w, b.y * image_h, b.w * image_w, b.h * image_h};
}

enum class DecodeMode { direct, anchor_pow2 };

inline const char* to_string(DecodeMode m) { return m == DecodeMode::direct ? "direct" : "anchor_pow2"; }

inline DecodeMode parse_decode_mode(const std::string& s) {
    if (s == "direct") {
        return DecodeMode::direct;
    }
    if (s == "anchor_pow2") {
        return DecodeMode::anchor_pow2;
    }
    throw PostprocessError("unknown decode_mode '" + s + "'");
}

inline FloatTensor dequantize_output(const QuantTensor& grid) {
    if (!(grid.shape == Shape{kGridSize, kGridSize, kOutputChannels})) {
        throw PostprocessError("output grid shape " + grid.shape.str() + " != 13x13x18");
    }
    if (!(grid.params == unsigned_params(8, kPixelScale))) {
        throw PostprocessError("output grid must be 8-bit unsigned at scale 1/255");
    }
    return dequantize_tensor(grid);
}

// Channel layout per cell is anchor-major: channel = anchor * 6 + field.
enum GridField { kTx = 0, kTy = 1, kTw = 2, kTh = 3, kObj = 4, kCls = 5 };

/// Decodes every (cell, anchor) whose objectness * class_score reaches
/// conf_threshold. Output order is row-major over cells, then anchor.
inline std::vector<Detection> decode_grid(const FloatTensor& grid, const ModelConfig& cfg, double conf_threshold,
                                          DecodeMode mode = DecodeMode::anchor_pow2) {
    if (!(grid.shape == Shape{kGridSize, kGridSize, kOutputChannels})) {
        throw PostprocessError("decode: grid shape " + grid.shape.str() + " != 13x13x18");
    }
    if (cfg.anchors.size() != kNumAnchors) {
        throw PostprocessError("decode: expected 3 anchors");
    }
    std::vector<Detection> out;
    for (int gy = 0; gy < kGridSize; ++gy) {
        for (int gx = 0; gx < kGridSize; ++gx) {
            for (int a = 0; a < kNumAnchors; ++a) {
                auto field = [&](int f) { return grid.at(gy, gx, a * kValuesPerAnchor + f); };
                Detection d;
                d.objectness = field(kObj);
                d.class_score = field(kCls);
                if (!(d.score() >= conf_threshold)) {
                    continue;
                }
                d.cx = (field(kTx) + gx) / static_cast<double>(kGridSize);
                d.cy = (field(kTy) + gy) / static_cast<double>(kGridSize);
                if (mode == DecodeMode::direct) {
                    d.w = field(kTw);
                    d.h = field(kTh);
                } else {
                    const double sw = 2.0 * field(kTw);
                    const double sh = 2.0 * field(kTh);
                    d.w = cfg.anchors[a].w * sw * sw / kInputSize;
                    d.h = cfg.anchors[a].h * sh * sh / kInputSize;
                }
                d.w = std::clamp(d.w, 0.0, 1.0);
                d.h = std::clamp(d.h, 0.0, 1.0);
                out.push_back(d);
            }
        }
    }
    return out;
}

inline double iou(const Box& a, const Box& b) {
    // Areas from corner differences, like the intersection, so iou(a, a) is exactly 1.
    const double ax1 = a.x + a.w, ay1 = a.y + a.h, bx1 = b.x + b.w, by1 = b.y + b.h;
    const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(a.x, b.x));
    const double ih = std::max(0.0, std::min(ay1, by1) - std::max(a.y, b.y));
    const double inter = iw * ih;
    const double uni = (ax1 - a.x) * (ay1 - a.y) + (bx1 - b.x) * (by1 - b.y) - inter;
    if (!(uni > 0.0)) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

/// Strict weak order used by NMS: score descending, then cx, cy, w, h
/// ascending so the result does not depend on input order.
inline bool nms_before(const Detection& a, const Detection& b) {
    if (a.score() != b.score()) return a.score() > b.score();
    if (a.cx != b.cx) return a.cx < b.cx;
    if (a.cy != b.cy) return a.cy < b.cy;
    if (a.w != b.w) return a.w < b.w;
    if (a.h != b.h) return a.h < b.h;
    return a.objectness < b.objectness;
}

inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(), nms_before);
    std::vector<Detection> kept;
    std::vector<bool> removed(dets.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (removed[i]) {
            continue;
        }
        kept.push_back(dets[i]);
        const Box top = to_box(dets[i]);
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            if (!removed[j] && iou(top, to_box(dets[j])) > iou_threshold) {
                removed[j] = true;
            }
        }
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ScoredBox {
    double score = 0.0;
    Box box;  // pixels
};

using Predictions = std::map<std::string, std::vector<ScoredBox>>;

struct GroundTruthSet {
    std::map<std::string, std::vector<Box>> images;
    std::vector<std::string> order;  // file order of image ids

    std::size_t num_boxes() const {
        std::size_t n = 0;
        for (const auto& [id, boxes] : images) {
            n += boxes.size();
        }
        return n;
    }
};

/// Single-class AP at a fixed IoU threshold with all-points interpolation.
/// Predictions are visited by descending score (stable over image-id order);
/// each claims the highest-IoU unmatched ground truth box in its image.
/// Returns 0 when there is no ground truth.
inline double evaluate_ap(const Predictions& preds, const GroundTruthSet& gt, double iou_threshold = 0.5) {
    struct Flat {
        const std::string* image;
        double score;
        Box box;
    };
    std::vector<Flat> flat;
    for (const auto& [id, list] : preds) {
        if (!gt.images.contains(id)) {
            throw PostprocessError("prediction for unknown image '" + id + "'");
        }
        for (const auto& p : list) {
            flat.push_back({&id, p.score, p.box});
        }
    }
    const std::size_t total_gt = gt.num_boxes();
    if (total_gt == 0) {
        return 0.0;
    }
    std::stable_sort(flat.begin(), flat.end(), [](const Flat& a, const Flat& b) { return a.score > b.score; });

    std::map<std::string, std::vector<bool>> matched;
    for (const auto& [id, boxes] : gt.images) {
        matched[id].assign(boxes.size(), false);
    }
    std::vector<double> precision, recall;
    precision.reserve(flat.size());
    recall.reserve(flat.size());
    std::size_t tp = 0, fp = 0;
    for (const auto& p : flat) {
        const auto& boxes = gt.images.at(*p.image);
        auto& used = matched[*p.image];
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t g = 0; g < boxes.size(); ++g) {
            if (used[g]) {
                continue;
            }
            const double o = iou(p.box, boxes[g]);
            if (o > best) {
                best = o;
                best_idx = g;
            }
        }
        if (best >= iou_threshold) {
            used[best_idx] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }
    // Precision envelope from the right, then sum rectangle areas.
    for (std::size_t i = precision.size(); i-- > 1;) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return std::clamp(ap, 0.0, 1.0);
}

class GtParseError : public std::runtime_error {
public:
    GtParseError(std::size_t line, const std::string& what)
        : std::runtime_error("ground truth line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace detail {

inline bool all_integer_tokens(const std::string& line, std::size_t min_tokens) {
    std::istringstream ss(line);
    std::string tok;
    std::size_t n = 0;
    while (ss >> tok) {
        if (tok.find_first_not_of("-0123456789") != std::string::npos) {
            return false;
        }
        ++n;
    }
    return n >= min_tokens;
}

}  // namespace detail

/// WiderFace bbx_gt format: image path line, face count line, then one
/// "x y w h ..." line per face. Real annotation files follow a zero count
/// with a placeholder all-zero row, which is skipped. Boxes with
/// non-positive width or height are dropped.
inline GroundTruthSet parse_widerface_gt(std::istream& in) {
    GroundTruthSet gt;
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    std::size_t i = 0;
    auto skip_blank = [&] {
        while (i < lines.size() && lines[i].find_first_not_of(" \t") == std::string::npos) {
            ++i;
        }
    };
    skip_blank();
    while (i < lines.size()) {
        const std::string id = lines[i];
        ++i;
        if (i >= lines.size()) {
            throw GtParseError(i + 1, "missing face count for '" + id + "'");
        }
        long long count = -1;
        {
            std::istringstream ss(lines[i]);
            std::string extra;
            if (!(ss >> count) || (ss >> extra) || count < 0) {
                throw GtParseError(i + 1, "malformed face count '" + lines[i] + "'");
            }
        }
        ++i;
        auto& boxes = gt.images[id];
        gt.order.push_back(id);
        if (count == 0 && i < lines.size() && detail::all_integer_tokens(lines[i], 4)) {
            ++i;
        }
        for (long long f = 0; f < count; ++f) {
            if (i >= lines.size()) {
                throw GtParseError(i + 1, "expected " + std::to_string(count) + " faces for '" + id +
                                              "', file ended after " + std::to_string(f));
            }
            std::istringstream ss(lines[i]);
            double x, y, w, h;
            if (!(ss >> x >> y >> w >> h)) {
                throw GtParseError(i + 1, "malformed face line '" + lines[i] + "'");
            }
            if (w > 0 && h > 0) {
                boxes.push_back({x, y, w, h});
            }
            ++i;
        }
        skip_blank();
    }
    return gt;
}

inline GroundTruthSet parse_widerface_gt(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw PostprocessError("cannot open ground truth file " + path);
    }
    return parse_widerface_gt(in);
}

/// Writes "image_id score x y w h" lines (pixel corner boxes).
inline void write_detections(std::ostream& out, const std::string& image_id, const std::vector<ScoredBox>& dets) {
    for (const auto& d : dets) {
        out << image_id << ' ' << d.score << ' ' << d.box.x << ' ' << d.box.y << ' ' << d.box.w << ' ' << d.box.h
            << '\n';
    }
}

}  // namespace lpyolo
