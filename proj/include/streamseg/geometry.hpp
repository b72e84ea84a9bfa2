#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "streamseg/errors.hpp"

namespace streamseg {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;

struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0 || fy <= 0) throw ConfigError("intrinsics: focal lengths must be positive");
        if (cx < 0 || cx >= width || cy < 0 || cy >= height)
            throw ConfigError("intrinsics: principal point outside image");
        if (width <= 0 || height <= 0) throw ConfigError("intrinsics: bad image size");
    }
};

// Camera-to-world transform.
struct Pose {
    Matrix3d rotation = Matrix3d::Identity();
    Vector3d translation = Vector3d::Zero();

    void validate(double tol = 1e-6) const {
        Matrix3d rtr = rotation.transpose() * rotation;
        if ((rtr - Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol)
            throw ConfigError("pose: rotation is not orthonormal");
        if (std::abs(rotation.determinant() - 1.0) > tol)
            throw ConfigError("pose: rotation determinant is not +1");
    }

    Pose inverse() const {
        Pose inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(rotation.transpose() * translation);
        return inv;
    }

    Vector3d apply(const Vector3d& p) const { return rotation * p + translation; }
};

// 16-bit depth, value 0 = invalid. depth_scale converts units to meters.
struct DepthImage {
    int width = 0, height = 0;
    std::vector<std::uint16_t> data;
    double depth_scale = 0.001;

    DepthImage() = default;
    DepthImage(int w, int h, double scale = 0.001)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0), depth_scale(scale) {}

    std::uint16_t at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
    std::uint16_t& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
};

// World-frame points of one frame, in row-major pixel scan order of the valid
// depth pixels. source_pixel[i] = (u, v) the point came from.
struct PointCloud {
    std::vector<Vector3d> positions;
    std::vector<std::pair<int, int>> source_pixel;
    int frame_id = 0;

    std::size_t size() const { return positions.size(); }
};

struct Aabb {
    Vector3d min = Vector3d::Zero();
    Vector3d max = Vector3d::Zero();

    Aabb() = default;
    Aabb(const Vector3d& mn, const Vector3d& mx) : min(mn), max(mx) {}

    bool valid() const { return (min.array() <= max.array()).all(); }
    Vector3d extent() const { return max - min; }
    Vector3d center() const { return 0.5 * (min + max); }
    double volume() const {
        Vector3d e = extent();
        return e.x() * e.y() * e.z();
    }
    bool operator==(const Aabb& o) const { return min == o.min && max == o.max; }
};

inline PointCloud unproject_depth(const DepthImage& depth, const CameraIntrinsics& K,
                                  const Pose& pose) {
    if (depth.width != K.width || depth.height != K.height)
        throw ConfigError("unproject: depth is " + std::to_string(depth.width) + "x" +
                          std::to_string(depth.height) + " but intrinsics expect " +
                          std::to_string(K.width) + "x" + std::to_string(K.height));
    PointCloud cloud;
    cloud.positions.reserve(depth.data.size());
    cloud.source_pixel.reserve(depth.data.size());
    for (int v = 0; v < depth.height; ++v) {
        for (int u = 0; u < depth.width; ++u) {
            std::uint16_t d = depth.at(u, v);
            if (d == 0) continue;
            double z = d * depth.depth_scale;
            Vector3d cam((u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z);
            cloud.positions.push_back(pose.apply(cam));
            cloud.source_pixel.emplace_back(u, v);
        }
    }
    return cloud;
}

// Inverse of unproject_depth for one point: world -> (u, v, z_cam).
inline Vector3d project_point(const Vector3d& world, const CameraIntrinsics& K,
                              const Pose& pose) {
    Vector3d cam = pose.inverse().apply(world);
    return Vector3d(K.fx * cam.x() / cam.z() + K.cx, K.fy * cam.y() / cam.z() + K.cy, cam.z());
}

inline Aabb aabb_of_points(const std::vector<Vector3d>& points) {
    if (points.empty()) throw EmptyInputError("aabb_of_points: no points");
    Aabb box(points.front(), points.front());
    for (const auto& p : points) {
        box.min = box.min.cwiseMin(p);
        box.max = box.max.cwiseMax(p);
    }
    return box;
}

// Zero-volume unions: 0 unless the boxes are exactly equal, then 1. Keeps flat
// instances (posters, table tops) from producing NaN.
inline double aabb_iou(const Aabb& a, const Aabb& b) {
    Vector3d lo = a.min.cwiseMax(b.min);
    Vector3d hi = a.max.cwiseMin(b.max);
    Vector3d d = (hi - lo).cwiseMax(0.0);
    double inter = d.x() * d.y() * d.z();
    double uni = a.volume() + b.volume() - inter;
    if (uni <= 0.0) return a == b ? 1.0 : 0.0;
    return inter / uni;
}

inline MatrixXd aabb_iou_matrix(const std::vector<Aabb>& a, const std::vector<Aabb>& b) {
    MatrixXd iou(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j)
            iou(static_cast<int>(i), static_cast<int>(j)) = aabb_iou(a[i], b[j]);
    return iou;
}

}  // namespace streamseg
