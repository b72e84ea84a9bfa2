#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"
#include "streamseg/merging.hpp"
#include "streamseg/metrics.hpp"

namespace streamseg {

static_assert(std::endian::native == std::endian::little,
              "binary exports assume a little-endian host");

inline nlohmann::json map_to_json(const InstanceMap& map,
                                  const nlohmann::json& config = nlohmann::json::object()) {
    nlohmann::json j;
    j["point_count"] = map.point_count;
    j["config"] = config;
    nlohmann::json instances = nlohmann::json::array();
    for (const auto& r : map.records) {
        nlohmann::json e;
        e["instance_id"] = r.instance_id;
        e["n"] = r.n;
        e["confidence"] = r.confidence;
        e["box_min"] = {r.box.min.x(), r.box.min.y(), r.box.min.z()};
        e["box_max"] = {r.box.max.x(), r.box.max.y(), r.box.max.z()};
        Eigen::Index category = 0;
        if (r.semantic.size() > 0) r.semantic.maxCoeff(&category);
        e["category"] = static_cast<int>(category);
        e["point_count"] = r.point_ids.size();
        e["point_ids"] = r.point_ids;
        instances.push_back(std::move(e));
    }
    j["instances"] = std::move(instances);
    return j;
}

inline nlohmann::json eval_to_json(const EvalResult& res) {
    nlohmann::json j;
    j["ap"] = res.ap;
    j["ap50"] = res.ap50;
    j["ap25"] = res.ap25;
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& c : res.curves) {
        nlohmann::json e;
        e["threshold"] = c.threshold;
        e["ap"] = c.ap;
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : c.points) pts.push_back({p.recall, p.precision});
        e["points"] = std::move(pts);
        curves.push_back(std::move(e));
    }
    j["curves"] = std::move(curves);
    return j;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ParseError(path, "cannot open for writing");
    out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path, e.what(), static_cast<long>(e.byte));
    }
}

// 24 well-separated colors; instance i gets palette[i % 24], unassigned points
// are gray.
inline std::array<std::uint8_t, 3> instance_color(std::int64_t instance_id) {
    static constexpr std::array<std::array<std::uint8_t, 3>, 24> palette = {{
        {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
        {145, 30, 180},  {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
        {0, 128, 128},   {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
        {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},    {255, 105, 97},
        {66, 212, 244},  {191, 255, 0},   {148, 0, 211},  {255, 140, 0},
    }};
    if (instance_id < 0) return {128, 128, 128};
    return palette[static_cast<std::size_t>(instance_id % 24)];
}

// labels[i] = instance id of point i, -1 for unassigned.
inline void export_ply(const std::string& path, const std::vector<Vector3d>& points,
                       const std::vector<std::int64_t>& labels, bool binary = true) {
    if (points.size() != labels.size())
        throw ConfigError("export_ply: point/label count mismatch");
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw ParseError(path, "cannot open for writing");

    out << "ply\n"
        << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
        << "element vertex " << points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";

    for (std::size_t i = 0; i < points.size(); ++i) {
        float xyz[3] = {static_cast<float>(points[i].x()), static_cast<float>(points[i].y()),
                        static_cast<float>(points[i].z())};
        auto rgb = instance_color(labels[i]);
        if (binary) {
            out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
            out.write(reinterpret_cast<const char*>(rgb.data()), 3);
        } else {
            char line[128];
            std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %d %d %d\n", xyz[0], xyz[1],
                          xyz[2], rgb[0], rgb[1], rgb[2]);
            out << line;
        }
    }
    if (!out) throw ParseError(path, "write failed");
}

}  // namespace streamseg
