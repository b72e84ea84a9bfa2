#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "streamseg/decoder.hpp"
#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"
#include "streamseg/io/sequence.hpp"
#include "streamseg/io/weights.hpp"
#include "streamseg/merging.hpp"
#include "streamseg/superpoint.hpp"

namespace streamseg {

struct RunConfig {
    double phi = 0.5;      // mask probability threshold
    double eps = 1.75;     // similarity prune threshold
    double tau = 0.02;     // contrastive temperature (diagnostics only)
    double alpha = 0.5;    // cls loss weight (diagnostics only)
    double beta = 0.5;     // iou loss weight (diagnostics only)
    double nms_iou = 0.6;  // mask suppression threshold
    double depth_scale = 0.001;
    double sample_ratio = 1.0;
    std::uint64_t seed = 0;
    ExtentNorm extent_norm = ExtentNorm::Scalar;
    CenterMode center_mode = CenterMode::Centroid;
    PoolMean pool_mean = PoolMean::ByCount;
    ConfidenceFusion fusion = ConfidenceFusion::Max;
    std::string weights_path;  // empty = run without learned weights

    void validate() const {
        if (!(phi > 0.0 && phi < 1.0)) throw ConfigError("config: phi must be in (0,1)");
        if (!std::isfinite(eps)) throw ConfigError("config: eps must be finite");
        if (!(tau > 0.0)) throw ConfigError("config: tau must be positive");
        if (!(nms_iou > 0.0 && nms_iou <= 1.0))
            throw ConfigError("config: nms_iou must be in (0,1]");
        if (!(sample_ratio > 0.0 && sample_ratio <= 1.0))
            throw ConfigError("config: sample_ratio must be in (0,1]");
        if (depth_scale <= 0.0) throw ConfigError("config: depth_scale must be positive");
    }
};

struct FrameTiming {
    int frame = 0;
    double backbone_ms = 0;  // unprojection, lifting, pooling
    double decoder_ms = 0;   // queries, decoding, NMS, record building
    double similarity_ms = 0;
    double matching_ms = 0;
    double updating_ms = 0;
    double total_ms = 0;
};

struct RunResult {
    InstanceMap map;
    std::vector<FrameTiming> timing;
    std::vector<Vector3d> points;               // all unprojected points, global order
    std::vector<std::int64_t> point_instance;   // per point: instance id or -1
    int num_categories = 0;
    int feature_channels = 0;
};

namespace detail {

inline double ms_between(std::chrono::steady_clock::time_point a,
                         std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

inline MatrixXd positions_matrix(const PointCloud& cloud) {
    MatrixXd m(cloud.size(), 3);
    for (std::size_t i = 0; i < cloud.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = cloud.positions[i].transpose();
    return m;
}

// Superpoint memberships presented as decoder output, for runs without
// decoder weights.
inline std::pair<QuerySet, PredictedMasks> passthrough_detections(const MatrixXd& pooled,
                                                                  const SuperpointSet& sp) {
    QuerySet q;
    q.values = pooled;
    q.origin.resize(sp.size());
    std::iota(q.origin.begin(), q.origin.end(), 0);

    PredictedMasks pm;
    const int n = static_cast<int>(sp.point_count);
    pm.point_masks = MaskMat::Zero(sp.size(), n);
    pm.logits = MatrixXd::Constant(sp.size(), n, -25.0);
    for (int p = 0; p < n; ++p) {
        if (sp.index[p] < 0) continue;
        pm.point_masks(sp.index[p], p) = 1;
        pm.logits(sp.index[p], p) = 25.0;
    }
    pm.scores = VectorXd::Ones(sp.size());
    return {std::move(q), std::move(pm)};
}

}  // namespace detail

// The streaming pipeline: per frame, unproject + lift + pool, decode (or pass
// superpoints through when no decoder weights are loaded), suppress, build
// records and merge into the map. Strictly sequential over frames.
inline RunResult run_sequence(const SequenceReader& seq, const RunConfig& cfg,
                              const LoadedWeights* weights = nullptr) {
    cfg.validate();
    if (weights && weights->geo) weights->geo->validate();

    RunResult result;
    int num_categories = 0;
    for (int p = 0; p < seq.size(); ++p) {
        // cheap prescan so the semantic one-hot width is frame-independent
        std::vector<int> cats = seq.read_semantic(p, 1 << 16);
        for (int c : cats) num_categories = std::max(num_categories, c + 1);
    }
    result.num_categories = num_categories;

    for (int p = 0; p < seq.size(); ++p) {
        const int frame_index = seq.frame_index(p);
        try {
            auto t_start = std::chrono::steady_clock::now();
            SequenceFrame frame = seq.read(p);

            PointCloud cloud = unproject_depth(frame.depth, seq.intrinsics(), frame.pose);
            cloud.frame_id = frame.index;
            SuperpointIndex index = lift_masks(frame.mask, cloud);
            SuperpointSet sp = build_superpoints(cloud, index, frame.mask.num_masks,
                                                 {cfg.extent_norm, cfg.center_mode});

            MatrixXd point_feats = frame.point_features ? std::move(*frame.point_features)
                                                        : detail::positions_matrix(cloud);
            if (result.feature_channels == 0)
                result.feature_channels = static_cast<int>(point_feats.cols());
            else if (result.feature_channels != point_feats.cols())
                throw ConfigError("feature width changed from " +
                                  std::to_string(result.feature_channels) + " to " +
                                  std::to_string(point_feats.cols()));

            VectorXd pool_w = VectorXd::Ones(point_feats.rows());
            MatrixXd z_global = MatrixXd::Zero(sp.size(), point_feats.cols());
            if (weights && weights->geo) {
                if (weights->geo->channels() != point_feats.cols())
                    throw ConfigError("geo pooling channels (" +
                                      std::to_string(weights->geo->channels()) +
                                      ") do not match feature width (" +
                                      std::to_string(point_feats.cols()) + ")");
                for (int g = 0; g < sp.size(); ++g) {
                    GeoFeatures gf = geo_features(sp.groups[g].normalized, *weights->geo);
                    VectorXd w = point_weights(gf.z_local, gf.z_global, *weights->geo);
                    const auto& ids = sp.groups[g].point_ids;
                    for (std::size_t j = 0; j < ids.size(); ++j) pool_w(ids[j]) = w(j);
                    z_global.row(g) = gf.z_global.transpose();
                }
            }
            MatrixXd pooled = geometric_pool(point_feats, sp, pool_w, z_global, cfg.pool_mean);
            auto t_backbone = std::chrono::steady_clock::now();

            QuerySet queries;
            PredictedMasks masks;
            if (sp.size() > 0 && weights && weights->decoder) {
                QuerySet q0 = init_queries(pooled, cfg.sample_ratio,
                                           Rng::mix(cfg.seed, frame.index));
                DecodeResult dec = decode(q0, pooled, point_feats, sp, pool_w,
                                          *weights->decoder, cfg.phi, cfg.pool_mean);
                NmsResult nms = mask_nms(dec.masks, cfg.nms_iou);
                masks = std::move(nms.masks);
                queries.values.resize(static_cast<Eigen::Index>(nms.kept.size()),
                                      dec.queries.values.cols());
                queries.layer = dec.queries.layer;
                for (std::size_t i = 0; i < nms.kept.size(); ++i) {
                    queries.values.row(static_cast<Eigen::Index>(i)) =
                        dec.queries.values.row(nms.kept[i]);
                    queries.origin.push_back(dec.queries.origin[nms.kept[i]]);
                }
            } else if (sp.size() > 0) {
                auto [q, pm] = detail::passthrough_detections(pooled, sp);
                NmsResult nms = mask_nms(pm, cfg.nms_iou);
                masks = std::move(nms.masks);
                queries.values.resize(static_cast<Eigen::Index>(nms.kept.size()),
                                      q.values.cols());
                for (std::size_t i = 0; i < nms.kept.size(); ++i) {
                    queries.values.row(static_cast<Eigen::Index>(i)) =
                        q.values.row(nms.kept[i]);
                    queries.origin.push_back(q.origin[nms.kept[i]]);
                }
            }

            FrameDetections det;
            det.queries = &queries;
            det.masks = &masks;
            det.sp = &sp;
            det.positions = &cloud.positions;
            det.point_offset = result.map.point_count;
            det.pooled_features = &pooled;
            det.mask_categories = frame.mask_category.empty() ? nullptr : &frame.mask_category;
            det.num_categories = num_categories;

            std::vector<InstanceRecord> cur =
                sp.size() > 0 ? make_records(det, weights ? weights->heads : HeadWeights{})
                              : std::vector<InstanceRecord>{};
            auto t_decoder = std::chrono::steady_clock::now();

            MergeTimings mt;
            result.map = merge_step(std::move(result.map), std::move(cur), cfg.eps,
                                    static_cast<std::int64_t>(cloud.size()), cfg.fusion, &mt);
            auto t_end = std::chrono::steady_clock::now();

            FrameTiming ft;
            ft.frame = frame.index;
            ft.backbone_ms = detail::ms_between(t_start, t_backbone);
            ft.decoder_ms = detail::ms_between(t_backbone, t_decoder);
            ft.similarity_ms = mt.similarity_ms;
            ft.matching_ms = mt.matching_ms;
            ft.updating_ms = mt.updating_ms;
            ft.total_ms = detail::ms_between(t_start, t_end);
            result.timing.push_back(ft);

            result.points.insert(result.points.end(), cloud.positions.begin(),
                                 cloud.positions.end());
        } catch (const ConfigError& e) {
            throw ConfigError("frame " + std::to_string(frame_index) + ": " + e.what());
        } catch (const IntegrityError& e) {
            throw IntegrityError("frame " + std::to_string(frame_index) + ": " + e.what());
        }
    }

    result.point_instance.assign(result.points.size(), -1);
    for (const auto& rec : result.map.records)
        for (std::int64_t id : rec.point_ids)
            result.point_instance[static_cast<std::size_t>(id)] = rec.instance_id;
    return result;
}

// Ground-truth point sets per instance, from the gt tables of a sequence,
// using the same global point numbering as run_sequence. Instances are
// returned in increasing instance-id order.
inline std::vector<std::vector<std::int64_t>> ground_truth_sets(const SequenceReader& seq) {
    std::map<std::int64_t, std::vector<std::int64_t>> sets;
    bool any_table = false;
    std::int64_t next_id = 0;
    for (int p = 0; p < seq.size(); ++p) {
        SequenceFrame frame = seq.read(p);
        if (!frame.mask_instance.empty()) any_table = true;
        for (int v = 0; v < frame.depth.height; ++v) {
            for (int u = 0; u < frame.depth.width; ++u) {
                if (frame.depth.at(u, v) == 0) continue;
                std::int64_t gid = next_id++;
                std::int32_t mid = frame.mask.at(u, v);
                if (mid < 0 || frame.mask_instance.empty()) continue;
                std::int64_t inst = frame.mask_instance[mid];
                if (inst >= 0) sets[inst].push_back(gid);
            }
        }
    }
    if (!any_table) throw ConfigError("sequence has no ground-truth tables: " + seq.dir());
    std::vector<std::vector<std::int64_t>> out;
    out.reserve(sets.size());
    for (auto& [id, pts] : sets) out.push_back(std::move(pts));
    return out;
}

}  // namespace streamseg
