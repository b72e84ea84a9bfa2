#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"
#include "streamseg/rng.hpp"
#include "streamseg/superpoint.hpp"

namespace streamseg {

enum class ShapeKind { Box, Sphere };

struct SceneObject {
    ShapeKind shape = ShapeKind::Box;
    Vector3d center = Vector3d::Zero();
    Vector3d half_size = Vector3d::Ones();  // spheres use half_size.x() as radius
    int instance_id = 0;
    int category = 0;

    Aabb bounds() const {
        Vector3d h =
            shape == ShapeKind::Sphere ? Vector3d::Constant(half_size.x()) : half_size;
        return Aabb(center - h, center + h);
    }
};

struct SyntheticScene {
    std::vector<SceneObject> objects;
    Aabb room;
    std::uint64_t seed = 0;
    int num_categories = 1;

    Vector3d centroid() const {
        Vector3d c = Vector3d::Zero();
        for (const auto& o : objects) c += o.center;
        return objects.empty() ? c : Vector3d(c / static_cast<double>(objects.size()));
    }
    double bounding_radius() const {
        Vector3d c = centroid();
        double r = 0.0;
        for (const auto& o : objects) {
            Aabb b = o.bounds();
            for (int corner = 0; corner < 8; ++corner) {
                Vector3d p(corner & 1 ? b.max.x() : b.min.x(),
                           corner & 2 ? b.max.y() : b.min.y(),
                           corner & 4 ? b.max.z() : b.min.z());
                r = std::max(r, (p - c).norm());
            }
        }
        return r;
    }
};

struct SyntheticFrame {
    DepthImage depth;
    MaskImage mask;  // compact per-frame ids, -1 for no hit
    Pose pose;
    CameraIntrinsics intrinsics;
    std::vector<int> mask_instance;  // compact id -> scene instance id
    std::vector<int> mask_category;
    std::vector<Aabb> mask_box;  // compact id -> full object bounds

    SyntheticFrame() : depth(0, 0), mask{} {}
};

// Rejection-samples axis-aligned boxes and spheres into a fixed room, keeping
// bounds pairwise separated by a small margin. Deterministic per seed.
inline SyntheticScene generate_scene(std::uint64_t seed, int n_objects, int num_categories) {
    if (n_objects < 1) throw ConfigError("generate_scene: n_objects must be >= 1");
    if (num_categories < 1) throw ConfigError("generate_scene: num_categories must be >= 1");

    SyntheticScene scene;
    scene.seed = seed;
    scene.num_categories = num_categories;
    scene.room = Aabb(Vector3d(-2.0, -2.0, -1.0), Vector3d(2.0, 2.0, 1.0));

    const double margin = 0.05;
    const int max_attempts = 1000;
    Rng rng(Rng::mix(seed, 0x5CE9E5ULL));

    auto separated = [&](const Aabb& a, const Aabb& b) {
        for (int ax = 0; ax < 3; ++ax)
            if (a.min[ax] > b.max[ax] + margin || b.min[ax] > a.max[ax] + margin) return true;
        return false;
    };

    for (int i = 0; i < n_objects; ++i) {
        int attempt = 0;
        for (; attempt < max_attempts; ++attempt) {
            SceneObject obj;
            obj.shape = rng.uniform() < 0.5 ? ShapeKind::Box : ShapeKind::Sphere;
            for (int ax = 0; ax < 3; ++ax) obj.half_size[ax] = rng.uniform(0.15, 0.45);
            if (obj.shape == ShapeKind::Sphere)
                obj.half_size = Vector3d::Constant(obj.half_size.x());
            bool fits = true;
            for (int ax = 0; ax < 3; ++ax) {
                double lo = scene.room.min[ax] + obj.half_size[ax];
                double hi = scene.room.max[ax] - obj.half_size[ax];
                if (lo > hi) {
                    fits = false;
                    break;
                }
                obj.center[ax] = rng.uniform(lo, hi);
            }
            if (!fits) continue;
            Aabb b = obj.bounds();
            bool clear = true;
            for (const auto& other : scene.objects)
                if (!separated(b, other.bounds())) {
                    clear = false;
                    break;
                }
            if (!clear) continue;
            obj.instance_id = i;
            obj.category = rng.uniform_int(num_categories);
            scene.objects.push_back(obj);
            break;
        }
        if (attempt == max_attempts)
            throw CapacityError("generate_scene: could not place object " + std::to_string(i),
                                max_attempts);
    }
    return scene;
}

namespace detail {

// Nearest positive hit parameter along o + t*d, or +inf. d is unnormalized,
// so t equals camera-space depth when d comes from the pixel grid.
inline double ray_object(const Vector3d& o, const Vector3d& d, const SceneObject& obj) {
    const double inf = std::numeric_limits<double>::infinity();
    const double t_min = 1e-6;
    if (obj.shape == ShapeKind::Sphere) {
        Vector3d oc = o - obj.center;
        double r = obj.half_size.x();
        double a = d.dot(d);
        double b = 2.0 * d.dot(oc);
        double c = oc.dot(oc) - r * r;
        double disc = b * b - 4.0 * a * c;
        if (disc < 0.0) return inf;
        double s = std::sqrt(disc);
        double t0 = (-b - s) / (2.0 * a);
        double t1 = (-b + s) / (2.0 * a);
        if (t0 > t_min) return t0;
        if (t1 > t_min) return t1;
        return inf;
    }
    Aabb b = obj.bounds();
    double t_near = -inf, t_far = inf;
    for (int ax = 0; ax < 3; ++ax) {
        if (d[ax] == 0.0) {
            if (o[ax] < b.min[ax] || o[ax] > b.max[ax]) return inf;
            continue;
        }
        double inv = 1.0 / d[ax];
        double t0 = (b.min[ax] - o[ax]) * inv;
        double t1 = (b.max[ax] - o[ax]) * inv;
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
        if (t_near > t_far) return inf;
    }
    if (t_near > t_min) return t_near;
    if (t_far > t_min) return t_far;
    return inf;
}

}  // namespace detail

// Per-pixel analytic ray casting with nearest-hit occlusion. Depth is the hit
// parameter (camera z) quantized to the 16-bit grid; noise adds a uniform
// per-pixel jitter of up to 0.05 m at level 1. Mask ids are compacted per
// frame in increasing scene instance id order.
inline SyntheticFrame render_frame(const SyntheticScene& scene, const Pose& pose,
                                   const CameraIntrinsics& intr, double noise_level = 0.0,
                                   std::uint64_t salt = 0) {
    intr.validate();
    pose.validate();
    const int w = intr.width, h = intr.height;

    SyntheticFrame frame;
    frame.pose = pose;
    frame.intrinsics = intr;
    frame.depth = DepthImage(w, h);
    frame.mask = MaskImage(w, h);

    Rng rng(Rng::mix(Rng::mix(scene.seed, salt), 0xD3B7ULL));
    const Vector3d origin = pose.translation;
    std::vector<int> hit_obj(static_cast<std::size_t>(w) * h, -1);
    std::vector<char> seen(scene.objects.size(), 0);

    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            Vector3d d_cam((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
            Vector3d d = pose.rotation * d_cam;
            double best_t = std::numeric_limits<double>::infinity();
            int best = -1;
            for (std::size_t k = 0; k < scene.objects.size(); ++k) {
                double t = detail::ray_object(origin, d, scene.objects[k]);
                if (t < best_t) {
                    best_t = t;
                    best = static_cast<int>(k);
                }
            }
            if (best < 0) continue;
            double jitter = noise_level * 0.05 * rng.uniform(-1.0, 1.0);
            long long q = std::llround((best_t + jitter) / frame.depth.depth_scale);
            if (q < 1 || q > 65535) continue;
            std::size_t idx = static_cast<std::size_t>(v) * w + u;
            frame.depth.data[idx] = static_cast<std::uint16_t>(q);
            hit_obj[idx] = best;
            seen[best] = 1;
        }
    }

    std::vector<int> compact(scene.objects.size(), -1);
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
        if (!seen[k]) continue;
        compact[k] = frame.mask.num_masks++;
        frame.mask_instance.push_back(scene.objects[k].instance_id);
        frame.mask_category.push_back(scene.objects[k].category);
        frame.mask_box.push_back(scene.objects[k].bounds());
    }
    for (std::size_t idx = 0; idx < hit_obj.size(); ++idx)
        if (hit_obj[idx] >= 0 && frame.depth.data[idx] > 0)
            frame.mask.labels[idx] = compact[hit_obj[idx]];
    return frame;
}

// Camera-to-world pose looking from eye toward target; +z forward, +y image
// down. Throws when the view direction is parallel to world up.
inline Pose look_at(const Vector3d& eye, const Vector3d& target,
                    const Vector3d& up = Vector3d(0, 0, 1)) {
    Vector3d z = target - eye;
    if (z.norm() < 1e-12) throw ConfigError("look_at: eye equals target");
    z.normalize();
    Vector3d x = z.cross(up);
    if (x.norm() < 1e-9) throw ConfigError("look_at: view direction parallel to up");
    x.normalize();
    Vector3d y = z.cross(x);
    Pose pose;
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation = eye;
    return pose;
}

// Equally spaced poses on a tilted circle around the scene centroid, all
// looking at it. The default radius keeps the whole scene in a ~67 deg view.
inline std::vector<Pose> orbit_trajectory(const SyntheticScene& scene, int n_frames,
                                          double radius = 0.0) {
    if (n_frames < 1) throw ConfigError("orbit_trajectory: n_frames must be >= 1");
    Vector3d center = scene.centroid();
    if (radius <= 0.0) radius = std::max(2.5, 1.8 * scene.bounding_radius());
    std::vector<Pose> poses;
    poses.reserve(n_frames);
    for (int k = 0; k < n_frames; ++k) {
        double theta = 2.0 * std::numbers::pi * k / n_frames;
        Vector3d eye = center + Vector3d(radius * std::cos(theta), radius * std::sin(theta),
                                         0.45 * radius);
        poses.push_back(look_at(eye, center));
    }
    return poses;
}

struct OracleFeatures {
    std::vector<Aabb> boxes;  // per compact mask id, jittered object bounds
    MatrixXd contrastive;     // num_masks x channels, unit rows
    MatrixXd semantic;        // num_masks x num_categories
    MatrixXd point_features;  // one row per valid-depth pixel in scan order
};

// Fixed unit vector per instance id; identical across scenes and frames.
inline VectorXd instance_signature(int instance_id, int channels) {
    Rng rng(Rng::mix(0xF00D5EEDULL, static_cast<std::uint64_t>(instance_id)));
    VectorXd f(channels);
    for (int c = 0; c < channels; ++c) f(c) = rng.normal();
    double norm = f.norm();
    if (norm > 0.0) f /= norm;
    return f;
}

// Stand-in for the trained backbone and heads: per-mask box/contrastive/
// semantic targets plus per-point features. All noise draws happen regardless
// of the level and scale linearly with it, so runs at different levels share
// the same perturbation directions.
inline OracleFeatures oracle_features(const SyntheticFrame& frame, const SyntheticScene& scene,
                                      double noise_level, int channels = 64,
                                      std::uint64_t salt = 0) {
    if (noise_level < 0.0) throw ConfigError("oracle_features: noise_level must be >= 0");
    const int m = frame.mask.num_masks;
    const int k = scene.num_categories;
    OracleFeatures out;
    out.contrastive.resize(m, channels);
    out.semantic.resize(m, k);

    Rng rng(Rng::mix(Rng::mix(scene.seed, salt), 0xFEA7ULL));
    const double blend = std::min(1.0, noise_level);

    for (int i = 0; i < m; ++i) {
        const Aabb& gt = frame.mask_box[i];
        Vector3d ext = gt.extent();
        Vector3d lo = gt.min, hi = gt.max;
        for (int ax = 0; ax < 3; ++ax) lo[ax] += noise_level * 0.5 * ext[ax] * rng.uniform(-1.0, 1.0);
        for (int ax = 0; ax < 3; ++ax) hi[ax] += noise_level * 0.5 * ext[ax] * rng.uniform(-1.0, 1.0);
        out.boxes.emplace_back(lo.cwiseMin(hi), lo.cwiseMax(hi));

        VectorXd g(channels);
        for (int c = 0; c < channels; ++c) g(c) = rng.normal();
        double gn = g.norm();
        if (gn > 0.0) g /= gn;
        VectorXd f = instance_signature(frame.mask_instance[i], channels) + noise_level * g;
        double fn = f.norm();
        out.contrastive.row(i) = (fn > 0.0 ? VectorXd(f / fn) : f).transpose();

        for (int c = 0; c < k; ++c)
            out.semantic(i, c) = (c == frame.mask_category[i] ? 1.0 - blend : 0.0) + blend / k;
    }

    std::vector<VectorXd> sig(m);
    for (int i = 0; i < m; ++i) sig[i] = instance_signature(frame.mask_instance[i], channels);

    std::vector<Eigen::Index> rows;
    for (int v = 0; v < frame.depth.height; ++v)
        for (int u = 0; u < frame.depth.width; ++u)
            if (frame.depth.at(u, v) > 0)
                rows.push_back(static_cast<Eigen::Index>(v) * frame.depth.width + u);
    out.point_features.resize(static_cast<Eigen::Index>(rows.size()), channels);
    Eigen::Index r = 0;
    for (Eigen::Index idx : rows) {
        int mid = frame.mask.labels[static_cast<std::size_t>(idx)];
        for (int c = 0; c < channels; ++c) {
            double base = mid >= 0 ? sig[mid](c) : 0.0;
            out.point_features(r, c) = base + noise_level * rng.uniform(-1.0, 1.0);
        }
        ++r;
    }
    return out;
}

}  // namespace streamseg
