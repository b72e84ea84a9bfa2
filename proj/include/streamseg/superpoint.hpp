#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"
#include "streamseg/nn.hpp"

namespace streamseg {

using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Per-pixel instance-mask labels, -1 = covered by no mask.
struct MaskImage {
    int width = 0, height = 0;
    std::vector<std::int32_t> labels;
    int num_masks = 0;

    MaskImage() = default;
    MaskImage(int w, int h)
        : width(w), height(h), labels(static_cast<std::size_t>(w) * h, -1) {}

    std::int32_t at(int u, int v) const { return labels[static_cast<std::size_t>(v) * width + u]; }
    std::int32_t& at(int u, int v) { return labels[static_cast<std::size_t>(v) * width + u]; }
};

// Per-point mask id over a frame's cloud, -1 = unassigned.
using SuperpointIndex = std::vector<std::int32_t>;

inline SuperpointIndex lift_masks(const MaskImage& mask, const PointCloud& cloud) {
    SuperpointIndex index(cloud.size(), -1);
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        auto [u, v] = cloud.source_pixel[p];
        if (u < 0 || u >= mask.width || v < 0 || v >= mask.height)
            throw ConfigError("lift_masks: point source pixel (" + std::to_string(u) + "," +
                              std::to_string(v) + ") outside " + std::to_string(mask.width) +
                              "x" + std::to_string(mask.height) + " mask");
        index[p] = mask.at(u, v);
    }
    return index;
}

enum class ExtentNorm { Scalar, PerAxis };
enum class CenterMode { Centroid, BoxCenter };

struct SuperpointConfig {
    ExtentNorm extent = ExtentNorm::Scalar;
    CenterMode center = CenterMode::Centroid;
};

// Center + positions scaled so the largest axis extent is 1 (Scalar mode) or
// every axis extent is 1 (PerAxis). Coincident points normalize to all zeros.
inline std::pair<Vector3d, std::vector<Vector3d>> normalize_superpoint(
    const std::vector<Vector3d>& points, const SuperpointConfig& config = {}) {
    if (points.empty()) throw EmptyInputError("normalize_superpoint: no points");
    Aabb box = aabb_of_points(points);
    Vector3d center;
    if (config.center == CenterMode::Centroid) {
        center = Vector3d::Zero();
        for (const auto& p : points) center += p;
        center /= static_cast<double>(points.size());
    } else {
        center = box.center();
    }
    std::vector<Vector3d> normalized;
    normalized.reserve(points.size());
    Vector3d ext = box.extent();
    if (config.extent == ExtentNorm::Scalar) {
        double scale = ext.maxCoeff();
        for (const auto& p : points)
            normalized.push_back(scale > 0.0 ? ((p - center) / scale).eval() : Vector3d::Zero());
    } else {
        for (const auto& p : points) {
            Vector3d q;
            for (int a = 0; a < 3; ++a)
                q[a] = ext[a] > 0.0 ? (p[a] - center[a]) / ext[a] : 0.0;
            normalized.push_back(q);
        }
    }
    return {center, normalized};
}

struct Superpoint {
    std::vector<int> point_ids;  // frame-local indices into the cloud
    Vector3d center = Vector3d::Zero();
    std::vector<Vector3d> normalized;
    int mask_id = -1;  // id in the source MaskImage
};

struct SuperpointSet {
    std::vector<Superpoint> groups;
    SuperpointIndex index;  // per-point compacted group id, -1 = unassigned
    std::size_t point_count = 0;

    int size() const { return static_cast<int>(groups.size()); }
};

// Groups the cloud by mask id and drops masks whose pixels all had invalid
// depth, remapping ids so every group is non-empty.
inline SuperpointSet build_superpoints(const PointCloud& cloud, const SuperpointIndex& index,
                                       int num_masks, const SuperpointConfig& config = {}) {
    if (index.size() != cloud.size())
        throw ConfigError("build_superpoints: index length does not match cloud");
    std::vector<std::vector<int>> members(num_masks);
    for (std::size_t p = 0; p < index.size(); ++p) {
        std::int32_t id = index[p];
        if (id < 0) continue;
        if (id >= num_masks)
            throw ConfigError("build_superpoints: mask id " + std::to_string(id) +
                              " out of range [0," + std::to_string(num_masks) + ")");
        members[id].push_back(static_cast<int>(p));
    }
    SuperpointSet sp;
    sp.point_count = cloud.size();
    sp.index.assign(cloud.size(), -1);
    for (int id = 0; id < num_masks; ++id) {
        if (members[id].empty()) continue;
        Superpoint g;
        g.mask_id = id;
        g.point_ids = std::move(members[id]);
        std::vector<Vector3d> pts;
        pts.reserve(g.point_ids.size());
        for (int p : g.point_ids) pts.push_back(cloud.positions[p]);
        auto [center, normalized] = normalize_superpoint(pts, config);
        g.center = center;
        g.normalized = std::move(normalized);
        int compact = sp.size();
        for (int p : g.point_ids) sp.index[p] = compact;
        sp.groups.push_back(std::move(g));
    }
    return sp;
}

// The two learned stacks of the geometric pooling: a per-point shape embedding
// (3 -> C) and a weight predictor over [local, global] (2C -> 1).
struct GeoPoolWeights {
    Mlp mlp_local;
    Mlp mlp_weight;

    int channels() const { return mlp_local.out_dim(); }

    void validate() const {
        if (mlp_local.empty() || mlp_weight.empty())
            throw ConfigError("geo pool weights: missing mlp");
        if (mlp_local.in_dim() != 3)
            throw ConfigError("geo pool weights: mlp_local must take 3 inputs");
        if (mlp_weight.in_dim() != 2 * mlp_local.out_dim() || mlp_weight.out_dim() != 1)
            throw ConfigError("geo pool weights: mlp_weight must map 2C -> 1");
    }
};

struct GeoFeatures {
    MatrixXd z_local;   // |P_i| x C
    VectorXd z_global;  // C, channel-wise max over z_local rows
};

inline GeoFeatures geo_features(const std::vector<Vector3d>& normalized,
                                const GeoPoolWeights& w) {
    if (normalized.empty()) throw EmptyInputError("geo_features: no points");
    w.validate();
    MatrixXd pts(normalized.size(), 3);
    for (std::size_t j = 0; j < normalized.size(); ++j) pts.row(j) = normalized[j].transpose();
    GeoFeatures g;
    g.z_local = w.mlp_local.apply(pts);
    g.z_global = g.z_local.colwise().maxCoeff().transpose();
    return g;
}

inline VectorXd point_weights(const MatrixXd& z_local, const VectorXd& z_global,
                              const GeoPoolWeights& w) {
    int c = static_cast<int>(z_local.cols());
    if (z_global.size() != c)
        throw ConfigError("point_weights: local/global channel mismatch");
    MatrixXd cat(z_local.rows(), 2 * c);
    cat.leftCols(c) = z_local;
    cat.rightCols(c) = z_global.transpose().replicate(z_local.rows(), 1);
    MatrixXd raw = w.mlp_weight.apply(cat);
    VectorXd out(z_local.rows());
    for (int j = 0; j < out.size(); ++j) out(j) = sigmoid(raw(j, 0));
    return out;
}

// Whether the weighted average divides by the point count (literal reading of
// the pooling formula) or by the weight sum.
enum class PoolMean { ByCount, ByWeightSum };

// F_S^i = mean_j(w_j * F_P[j]) + z_global_i. `weights` is per point over the
// whole frame; entries of unassigned points are ignored.
inline MatrixXd geometric_pool(const MatrixXd& point_features, const SuperpointSet& sp,
                               const VectorXd& weights, const MatrixXd& z_global,
                               PoolMean mean = PoolMean::ByCount) {
    if (static_cast<std::size_t>(point_features.rows()) != sp.point_count)
        throw ConfigError("geometric_pool: feature rows do not match point count");
    if (weights.size() != point_features.rows())
        throw ConfigError("geometric_pool: weight length mismatch");
    if (z_global.rows() != sp.size() || z_global.cols() != point_features.cols())
        throw ConfigError("geometric_pool: z_global shape mismatch");
    MatrixXd out = MatrixXd::Zero(sp.size(), point_features.cols());
    for (int i = 0; i < sp.size(); ++i) {
        const auto& ids = sp.groups[i].point_ids;
        double wsum = 0.0;
        for (int p : ids) {
            out.row(i) += weights(p) * point_features.row(p);
            wsum += weights(p);
        }
        double denom = mean == PoolMean::ByCount ? static_cast<double>(ids.size()) : wsum;
        if (denom > 0.0) out.row(i) /= denom;
        out.row(i) += z_global.row(i);
    }
    return out;
}

// Pools point masks (rows = queries) to superpoint masks with the same
// weighted mean, then thresholds: entry = mean_j(w_j * mask_j) > phi.
inline MaskMat pool_mask(const MaskMat& point_masks, const SuperpointSet& sp,
                         const VectorXd& weights, double phi,
                         PoolMean mean = PoolMean::ByCount) {
    if (phi <= 0.0 || phi >= 1.0) throw ConfigError("pool_mask: phi must be in (0,1)");
    if (static_cast<std::size_t>(point_masks.cols()) != sp.point_count)
        throw ConfigError("pool_mask: mask columns do not match point count");
    MaskMat out(point_masks.rows(), sp.size());
    for (int q = 0; q < point_masks.rows(); ++q) {
        for (int i = 0; i < sp.size(); ++i) {
            const auto& ids = sp.groups[i].point_ids;
            double acc = 0.0, wsum = 0.0;
            for (int p : ids) {
                acc += weights(p) * (point_masks(q, p) ? 1.0 : 0.0);
                wsum += weights(p);
            }
            double denom = mean == PoolMean::ByCount ? static_cast<double>(ids.size()) : wsum;
            out(q, i) = (denom > 0.0 && acc / denom > phi) ? 1 : 0;
        }
    }
    return out;
}

inline MatrixXd scatter_mean(const MatrixXd& values, const SuperpointIndex& index,
                             int num_groups) {
    if (static_cast<std::size_t>(values.rows()) != index.size())
        throw ConfigError("scatter_mean: index length mismatch");
    MatrixXd out = MatrixXd::Zero(num_groups, values.cols());
    std::vector<int> counts(num_groups, 0);
    for (std::size_t p = 0; p < index.size(); ++p) {
        std::int32_t id = index[p];
        if (id < 0) continue;
        if (id >= num_groups) throw ConfigError("scatter_mean: index out of range");
        out.row(id) += values.row(static_cast<int>(p));
        ++counts[id];
    }
    for (int i = 0; i < num_groups; ++i)
        if (counts[i] > 0) out.row(i) /= static_cast<double>(counts[i]);
    return out;
}

inline MatrixXd scatter_max(const MatrixXd& values, const SuperpointIndex& index,
                            int num_groups) {
    if (static_cast<std::size_t>(values.rows()) != index.size())
        throw ConfigError("scatter_max: index length mismatch");
    MatrixXd out = MatrixXd::Zero(num_groups, values.cols());
    std::vector<bool> seen(num_groups, false);
    for (std::size_t p = 0; p < index.size(); ++p) {
        std::int32_t id = index[p];
        if (id < 0) continue;
        if (id >= num_groups) throw ConfigError("scatter_max: index out of range");
        if (!seen[id]) {
            out.row(id) = values.row(static_cast<int>(p));
            seen[id] = true;
        } else {
            out.row(id) = out.row(id).cwiseMax(values.row(static_cast<int>(p)));
        }
    }
    return out;
}

}  // namespace streamseg
