#pragma once

// Run configuration: model bit widths, anchors, and postprocessing
// thresholds, read from a JSON file.
//
//   {"weight_bits": 4, "act_bits": 4,
//    "anchors": [[81, 82], [135, 169], [344, 319]],
//    "conf_threshold": 0.25, "nms_iou": 0.45, "decode_mode": "anchor_pow2"}
//
// Every key is optional. Missing bit widths are taken from the weight file.

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lpyolo/model.hpp"
#include "lpyolo/pipeline.hpp"
#include "lpyolo/postprocess.hpp"

namespace lpyolo {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunConfig {
    std::optional<int> weight_bits;
    std::optional<int> act_bits;
    std::vector<Anchor> anchors = default_anchors();
    PostprocessOptions post;

    /// Model config with bit widths resolved against a weight file's header.
    ModelConfig model_config(const ModelWeights& w) const {
        ModelConfig cfg;
        cfg.weight_bits = weight_bits.value_or(w.weight_bits);
        cfg.act_bits = act_bits.value_or(w.act_bits);
        cfg.anchors = anchors;
        return cfg;
    }
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config: top level must be a JSON object");
    }
    RunConfig rc;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "weight_bits") {
                rc.weight_bits = value.get<int>();
            } else if (key == "act_bits") {
                rc.act_bits = value.get<int>();
            } else if (key == "anchors") {
                rc.anchors.clear();
                for (const auto& a : value) {
                    if (!a.is_array() || a.size() != 2) {
                        throw ConfigError("config: each anchor must be [w, h]");
                    }
                    rc.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
                }
            } else if (key == "conf_threshold") {
                rc.post.conf_threshold = value.get<double>();
            } else if (key == "nms_iou") {
                rc.post.nms_iou = value.get<double>();
            } else if (key == "decode_mode") {
                rc.post.decode_mode = parse_decode_mode(value.get<std::string>());
            } else {
                throw ConfigError("config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const PostprocessError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (rc.anchors.size() != kNumAnchors) {
        throw ConfigError("config: expected exactly 3 anchors, got " + std::to_string(rc.anchors.size()));
    }
    if (!(rc.post.nms_iou >= 0.0 && rc.post.nms_iou <= 1.0)) {
        throw ConfigError("config: nms_iou must be in [0, 1]");
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

inline nlohmann::json to_json(const RunConfig& rc) {
    nlohmann::json j;
    if (rc.weight_bits) {
        j["weight_bits"] = *rc.weight_bits;
    }
    if (rc.act_bits) {
        j["act_bits"] = *rc.act_bits;
    }
    j["anchors"] = nlohmann::json::array();
    for (const auto& a : rc.anchors) {
        j["anchors"].push_back({a.w, a.h});
    }
    j["conf_threshold"] = rc.post.conf_threshold;
    j["nms_iou"] = rc.post.nms_iou;
    j["decode_mode"] = to_string(rc.post.decode_mode);
    return j;
}

}  // namespace lpyolo
