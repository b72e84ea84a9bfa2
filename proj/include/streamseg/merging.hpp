#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "streamseg/assignment.hpp"
#include "streamseg/decoder.hpp"
#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"
#include "streamseg/nn.hpp"
#include "streamseg/superpoint.hpp"

namespace streamseg {

// Fixed-size summary of one tracked instance: its accumulated point mask, an
// axis-aligned box, a contrastive vector, a semantic distribution and the
// merge count driving the running average.
struct InstanceRecord {
    std::vector<std::int64_t> point_ids;  // sorted unique global indices
    Aabb box;
    VectorXd contrastive;
    VectorXd semantic;  // nonnegative entries
    int n = 1;
    double confidence = 1.0;
    std::int64_t instance_id = -1;
};

struct InstanceMap {
    std::vector<InstanceRecord> records;
    std::int64_t point_count = 0;
    std::int64_t next_instance_id = 0;
};

// Auxiliary heads decoded from query features. Any head may be absent; the
// record builder then falls back to geometry- and pooling-derived values.
struct HeadWeights {
    std::optional<Mlp> box_head;          // C -> 6 offsets around the query center
    std::optional<Mlp> contrastive_head;  // C -> C_f
    std::optional<Mlp> semantic_head;     // C -> K logits

    bool any() const { return box_head || contrastive_head || semantic_head; }
};

enum class ConfidenceFusion { Max, WeightedAverage };

// Nonnegative, exactly zero at zero input: softplus shifted to its own value
// at the origin and clamped. Raw softplus would pad every box by log 2.
inline double box_offset(double x) {
    double s = softplus(x) - 0.6931471805599453;
    return s > 0.0 ? s : 0.0;
}

// Everything make_records needs from one processed frame.
struct FrameDetections {
    const QuerySet* queries = nullptr;
    const PredictedMasks* masks = nullptr;  // rows aligned with queries
    const SuperpointSet* sp = nullptr;
    const std::vector<Vector3d>* positions = nullptr;  // frame-local cloud
    std::int64_t point_offset = 0;                     // global id of local point 0
    const MatrixXd* pooled_features = nullptr;  // per-superpoint rows for headless f
    const std::vector<int>* mask_categories = nullptr;  // per original mask id
    int num_categories = 0;
};

// One record per surviving query. Overlapping point masks are resolved by
// score priority (then lower query index) so the frame's records stay
// disjoint; queries whose mask ends up empty produce no record.
inline std::vector<InstanceRecord> make_records(const FrameDetections& det,
                                                const HeadWeights& heads) {
    const QuerySet& q = *det.queries;
    const PredictedMasks& pm = *det.masks;
    const SuperpointSet& sp = *det.sp;
    if (pm.size() != q.size())
        throw ConfigError("make_records: query/mask count mismatch");
    const int n_points = static_cast<int>(pm.point_masks.cols());
    if (static_cast<std::size_t>(n_points) != det.positions->size())
        throw ConfigError("make_records: mask width does not match cloud size");

    std::vector<int> order(q.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return pm.scores(a) > pm.scores(b); });
    std::vector<int> owner(n_points, -1);
    for (int rank : order) {
        for (int p = 0; p < n_points; ++p)
            if (pm.point_masks(rank, p) && owner[p] < 0) owner[p] = rank;
    }

    std::vector<std::vector<int>> claimed(q.size());
    for (int p = 0; p < n_points; ++p)
        if (owner[p] >= 0) claimed[owner[p]].push_back(p);

    std::vector<InstanceRecord> records;
    for (int row = 0; row < q.size(); ++row) {
        if (claimed[row].empty()) continue;
        InstanceRecord rec;
        rec.point_ids.reserve(claimed[row].size());
        for (int p : claimed[row]) rec.point_ids.push_back(det.point_offset + p);
        rec.n = 1;
        rec.confidence = pm.scores(row);

        const int origin = q.origin[row];
        const Vector3d center = sp.groups[origin].center;

        if (heads.box_head) {
            MatrixXd raw = heads.box_head->apply(q.values.row(row));
            Vector3d lower, upper;
            for (int a = 0; a < 3; ++a) {
                lower[a] = box_offset(raw(0, a));
                upper[a] = box_offset(raw(0, a + 3));
            }
            rec.box = Aabb(center - lower, center + upper);
        } else {
            std::vector<Vector3d> pts;
            pts.reserve(claimed[row].size());
            for (int p : claimed[row]) pts.push_back((*det.positions)[p]);
            rec.box = aabb_of_points(pts);
        }

        if (heads.contrastive_head) {
            rec.contrastive = heads.contrastive_head->apply(q.values.row(row)).row(0);
        } else {
            VectorXd f = det.pooled_features
                             ? VectorXd(det.pooled_features->row(origin))
                             : VectorXd(q.values.row(row));
            double norm = f.norm();
            rec.contrastive = norm > 0.0 ? VectorXd(f / norm) : f;
        }

        if (heads.semantic_head) {
            MatrixXd logits = heads.semantic_head->apply(q.values.row(row));
            rec.semantic = softmax_rows(logits).row(0);
        } else {
            int k = std::max(1, det.num_categories);
            int label = -1;
            if (det.mask_categories) {
                int mask_id = sp.groups[origin].mask_id;
                if (mask_id >= 0 && mask_id < static_cast<int>(det.mask_categories->size()))
                    label = (*det.mask_categories)[mask_id];
            }
            if (label >= 0 && label < k) {
                rec.semantic = VectorXd::Zero(k);
                rec.semantic(label) = 1.0;
            } else {
                rec.semantic = VectorXd::Constant(k, 1.0 / k);
            }
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// Box IoU plus the two cosine terms, rows normalized at comparison time.
// Zero-norm vectors contribute 0 to their term.
inline MatrixXd similarity_matrix(const std::vector<InstanceRecord>& prev,
                                  const std::vector<InstanceRecord>& cur) {
    const int m = static_cast<int>(prev.size());
    const int k = static_cast<int>(cur.size());
    if (m == 0 || k == 0) return MatrixXd(m, k);

    auto normalized_rows = [](const std::vector<InstanceRecord>& recs,
                              const VectorXd InstanceRecord::*field) {
        int dim = static_cast<int>((recs.front().*field).size());
        MatrixXd out(recs.size(), dim);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const VectorXd& v = recs[i].*field;
            if (v.size() != dim)
                throw ConfigError("similarity_matrix: inconsistent vector widths");
            double norm = v.norm();
            out.row(static_cast<int>(i)) = v.transpose();
            if (norm > 0.0) out.row(static_cast<int>(i)) /= norm;
        }
        return out;
    };
    if (prev.front().contrastive.size() != cur.front().contrastive.size() ||
        prev.front().semantic.size() != cur.front().semantic.size())
        throw ConfigError("similarity_matrix: prev/cur vector widths differ");

    std::vector<Aabb> boxes_prev, boxes_cur;
    boxes_prev.reserve(m);
    boxes_cur.reserve(k);
    for (const auto& r : prev) boxes_prev.push_back(r.box);
    for (const auto& r : cur) boxes_cur.push_back(r.box);

    MatrixXd sim = aabb_iou_matrix(boxes_prev, boxes_cur);
    sim += normalized_rows(prev, &InstanceRecord::contrastive) *
           normalized_rows(cur, &InstanceRecord::contrastive).transpose();
    sim += normalized_rows(prev, &InstanceRecord::semantic) *
           normalized_rows(cur, &InstanceRecord::semantic).transpose();
    return sim;
}

inline MatrixXd prune(const MatrixXd& sim, double eps) {
    if (!std::isfinite(eps)) throw ConfigError("prune: eps must be finite");
    const double neg_inf = -std::numeric_limits<double>::infinity();
    return (sim.array() < eps).select(neg_inf, sim);
}

// Maximum-total-similarity assignment; pruned (-inf) pairs never appear.
inline std::vector<std::pair<int, int>> match(const MatrixXd& pruned) {
    return max_weight_matching(pruned);
}

struct MergeTimings {
    double similarity_ms = 0;
    double matching_ms = 0;
    double updating_ms = 0;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

inline void running_average(VectorXd& prev, const VectorXd& cur, int n) {
    prev = (static_cast<double>(n) / (n + 1)) * prev + (1.0 / (n + 1)) * cur;
}

}  // namespace detail

// Matches the frame's records against the map and fuses them: matched records
// take the union of point ids and the n/(n+1) running average of box,
// contrastive and semantic vectors; unmatched ones register new instances.
// An empty map adopts the frame's records as-is.
inline InstanceMap merge_step(InstanceMap map, std::vector<InstanceRecord> cur, double eps,
                              std::int64_t frame_point_count,
                              ConfidenceFusion fusion = ConfidenceFusion::Max,
                              MergeTimings* timings = nullptr) {
    const std::int64_t lo = map.point_count;
    const std::int64_t hi = map.point_count + frame_point_count;
    for (const auto& rec : cur) {
        for (std::int64_t id : rec.point_ids)
            if (id < lo || id >= hi)
                throw IntegrityError("merge_step: point id " + std::to_string(id) +
                                     " outside the frame's range [" + std::to_string(lo) + "," +
                                     std::to_string(hi) + ")");
    }

    auto t0 = std::chrono::steady_clock::now();
    MatrixXd sim = similarity_matrix(map.records, cur);
    if (timings) timings->similarity_ms += detail::ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::vector<std::pair<int, int>> assignment = match(prune(sim, eps));
    if (timings) timings->matching_ms += detail::ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::vector<char> cur_matched(cur.size(), 0);
    for (auto [i, j] : assignment) {
        InstanceRecord& prev = map.records[i];
        InstanceRecord& add = cur[j];
        cur_matched[j] = 1;
        // new-frame ids are all greater than anything already in the map
        prev.point_ids.insert(prev.point_ids.end(), add.point_ids.begin(), add.point_ids.end());
        const double w_prev = static_cast<double>(prev.n) / (prev.n + 1);
        const double w_cur = 1.0 / (prev.n + 1);
        prev.box.min = w_prev * prev.box.min + w_cur * add.box.min;
        prev.box.max = w_prev * prev.box.max + w_cur * add.box.max;
        detail::running_average(prev.contrastive, add.contrastive, prev.n);
        detail::running_average(prev.semantic, add.semantic, prev.n);
        prev.confidence = fusion == ConfidenceFusion::Max
                              ? std::max(prev.confidence, add.confidence)
                              : w_prev * prev.confidence + w_cur * add.confidence;
        prev.n += 1;
    }
    for (std::size_t j = 0; j < cur.size(); ++j) {
        if (cur_matched[j]) continue;
        InstanceRecord rec = std::move(cur[j]);
        rec.instance_id = map.next_instance_id++;
        rec.n = 1;
        map.records.push_back(std::move(rec));
    }
    map.point_count = hi;
    if (timings) timings->updating_ms += detail::ms_since(t0);
    return map;
}

// make_records followed by merge_step; the only mutating entry point of the
// streaming engine, strictly sequential across frames.
inline InstanceMap frame_update(InstanceMap map, const FrameDetections& det,
                                const HeadWeights& heads, double eps,
                                ConfidenceFusion fusion = ConfidenceFusion::Max,
                                MergeTimings* timings = nullptr) {
    std::vector<InstanceRecord> cur = make_records(det, heads);
    return merge_step(std::move(map), std::move(cur), eps,
                      static_cast<std::int64_t>(det.positions->size()), fusion, timings);
}

}  // namespace streamseg
