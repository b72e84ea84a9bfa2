#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "streamseg/errors.hpp"
#include "streamseg/nn.hpp"
#include "streamseg/rng.hpp"
#include "streamseg/superpoint.hpp"

namespace streamseg {

// Query features, one row per candidate instance. origin[i] is the superpoint
// the query was initialized from.
struct QuerySet {
    MatrixXd values;  // Q x C
    std::vector<int> origin;
    int layer = 0;

    int size() const { return static_cast<int>(values.rows()); }
    int channels() const { return static_cast<int>(values.cols()); }
};

enum class NormPlacement { Pre, Post };

struct DecoderLayerWeights {
    Linear cross_q, cross_k, cross_v, cross_out;
    Linear self_q, self_k, self_v, self_out;
    Mlp ffn;
    LayerNorm ln_cross, ln_self, ln_ffn;

    DecoderLayerWeights() = default;
    DecoderLayerWeights(int channels, int ffn_hidden)
        : cross_q(channels, channels),
          cross_k(channels, channels),
          cross_v(channels, channels),
          cross_out(channels, channels),
          self_q(channels, channels),
          self_k(channels, channels),
          self_v(channels, channels),
          self_out(channels, channels),
          ffn(Mlp::zeros({channels, ffn_hidden, channels})),
          ln_cross(channels),
          ln_self(channels),
          ln_ffn(channels) {}
};

struct DecoderWeights {
    std::array<DecoderLayerWeights, 3> layers;
    Linear mask_head;              // the linear map applied to queries before F^T
    std::optional<Mlp> cls_head;   // confidence head, C -> 1; scores = 1 when absent
    NormPlacement norm = NormPlacement::Pre;
    int num_heads = 1;

    DecoderWeights() = default;
    DecoderWeights(int channels, int ffn_hidden)
        : layers{DecoderLayerWeights(channels, ffn_hidden),
                 DecoderLayerWeights(channels, ffn_hidden),
                 DecoderLayerWeights(channels, ffn_hidden)},
          mask_head(channels, channels) {}

    int channels() const { return mask_head.in_dim(); }
};

// true = the query may attend to the superpoint
using AttentionMask = MaskMat;

struct PredictedMasks {
    MaskMat point_masks;  // Q x N
    MatrixXd logits;      // Q x N
    VectorXd scores;      // Q, in [0,1]

    int size() const { return static_cast<int>(point_masks.rows()); }
};

// ratio 1 takes every superpoint feature row in order. ratio < 1 draws
// ceil(ratio*M) rows without replacement, seeded.
inline QuerySet init_queries(const MatrixXd& superpoint_features, double sample_ratio,
                             std::uint64_t seed = 0) {
    if (sample_ratio <= 0.0 || sample_ratio > 1.0)
        throw ConfigError("init_queries: sample_ratio must be in (0,1]");
    int m = static_cast<int>(superpoint_features.rows());
    if (m < 1) throw ConfigError("init_queries: need at least one superpoint");
    QuerySet qs;
    if (sample_ratio == 1.0) {
        qs.values = superpoint_features;
        qs.origin.resize(m);
        std::iota(qs.origin.begin(), qs.origin.end(), 0);
        return qs;
    }
    int count = static_cast<int>(std::ceil(sample_ratio * m));
    std::vector<int> ids(m);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(seed);
    rng.shuffle(ids);
    ids.resize(count);
    std::sort(ids.begin(), ids.end());
    qs.values.resize(count, superpoint_features.cols());
    for (int i = 0; i < count; ++i) qs.values.row(i) = superpoint_features.row(ids[i]);
    qs.origin = std::move(ids);
    return qs;
}

namespace detail {

// softmax(Q K^T / sqrt(head_dim) + A') V per head, heads concatenated.
// mask == nullptr means unmasked; a row with no allowed entry falls back to
// unmasked attention so the softmax stays finite.
inline MatrixXd attention_core(const MatrixXd& q, const MatrixXd& k, const MatrixXd& v,
                               const MaskMat* mask, int num_heads) {
    const int channels = static_cast<int>(q.cols());
    if (num_heads < 1 || channels % num_heads != 0)
        throw ConfigError("attention: head count must divide the channel width");
    const int head_dim = channels / num_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    const double neg_inf = -std::numeric_limits<double>::infinity();

    MatrixXd out(q.rows(), channels);
    for (int h = 0; h < num_heads; ++h) {
        auto qh = q.middleCols(h * head_dim, head_dim);
        auto kh = k.middleCols(h * head_dim, head_dim);
        auto vh = v.middleCols(h * head_dim, head_dim);
        MatrixXd logits = qh * kh.transpose() * scale;
        if (mask) {
            for (int i = 0; i < logits.rows(); ++i) {
                bool any = false;
                for (int j = 0; j < logits.cols(); ++j)
                    if ((*mask)(i, j)) { any = true; break; }
                if (!any) continue;  // fallback: leave the row unmasked
                for (int j = 0; j < logits.cols(); ++j)
                    if (!(*mask)(i, j)) logits(i, j) = neg_inf;
            }
        }
        out.middleCols(h * head_dim, head_dim) = softmax_rows(logits) * vh;
    }
    return out;
}

}  // namespace detail

// Raw masked cross-attention over superpoint features: projections, masked
// softmax, value mix. Residual and output projection are applied by decode().
inline MatrixXd masked_cross_attention(const MatrixXd& queries,
                                       const MatrixXd& superpoint_features,
                                       const AttentionMask& mask, const DecoderWeights& w,
                                       int layer) {
    if (layer < 0 || layer > 2) throw ConfigError("masked_cross_attention: layer must be 0..2");
    if (mask.rows() != queries.rows() || mask.cols() != superpoint_features.rows())
        throw ConfigError("masked_cross_attention: mask shape mismatch");
    const auto& lw = w.layers[layer];
    MatrixXd q = lw.cross_q.apply(queries);
    MatrixXd k = lw.cross_k.apply(superpoint_features);
    MatrixXd v = lw.cross_v.apply(superpoint_features);
    return detail::attention_core(q, k, v, &mask, w.num_heads);
}

// Self-attention over queries plus feed-forward, both residual.
inline QuerySet decoder_layer(const QuerySet& queries, const DecoderWeights& w, int layer) {
    if (layer < 0 || layer > 2) throw ConfigError("decoder_layer: layer must be 0..2");
    const auto& lw = w.layers[layer];
    MatrixXd x = queries.values;

    auto self_attn = [&](const MatrixXd& in) {
        MatrixXd q = lw.self_q.apply(in);
        MatrixXd k = lw.self_k.apply(in);
        MatrixXd v = lw.self_v.apply(in);
        return lw.self_out.apply(detail::attention_core(q, k, v, nullptr, w.num_heads));
    };

    if (w.norm == NormPlacement::Pre) {
        x += self_attn(lw.ln_self.apply(x));
        x += lw.ffn.apply(lw.ln_ffn.apply(x));
    } else {
        x = lw.ln_self.apply(x + self_attn(x));
        x = lw.ln_ffn.apply(x + lw.ffn.apply(x));
    }

    QuerySet out;
    out.values = std::move(x);
    out.origin = queries.origin;
    out.layer = queries.layer + 1;
    return out;
}

// logits = mask_head(Q) F_P^T, booleans by sigmoid(logit) > phi (strict).
inline PredictedMasks predict_masks(const QuerySet& queries, const MatrixXd& point_features,
                                    const DecoderWeights& w, double phi) {
    if (phi <= 0.0 || phi >= 1.0) throw ConfigError("predict_masks: phi must be in (0,1)");
    if (point_features.cols() != queries.values.cols())
        throw ConfigError("predict_masks: channel mismatch between queries and features");
    PredictedMasks pm;
    pm.logits = w.mask_head.apply(queries.values) * point_features.transpose();
    const double logit_phi = std::log(phi / (1.0 - phi));
    pm.point_masks.resize(pm.logits.rows(), pm.logits.cols());
    for (int i = 0; i < pm.logits.rows(); ++i)
        for (int j = 0; j < pm.logits.cols(); ++j)
            pm.point_masks(i, j) = pm.logits(i, j) > logit_phi ? 1 : 0;
    if (w.cls_head) {
        MatrixXd raw = w.cls_head->apply(queries.values);
        pm.scores.resize(raw.rows());
        for (int i = 0; i < raw.rows(); ++i) pm.scores(i) = sigmoid(raw(i, 0));
    } else {
        pm.scores = VectorXd::Ones(queries.size());
    }
    return pm;
}

struct DecodeResult {
    QuerySet queries;      // after all three layers
    PredictedMasks masks;  // final point masks
};

// Three refinement rounds: predict point masks, pool them to superpoint masks
// reusing the pooling weights, masked cross-attention over superpoints
// (residual, with output projection), then self-attention + FFN. Mask
// prediction always reads point features; attention always reads superpoint
// features.
inline DecodeResult decode(const QuerySet& initial, const MatrixXd& superpoint_features,
                           const MatrixXd& point_features, const SuperpointSet& sp,
                           const VectorXd& pool_weights, const DecoderWeights& w, double phi,
                           PoolMean mean = PoolMean::ByCount) {
    QuerySet q = initial;
    for (int l = 0; l < 3; ++l) {
        PredictedMasks pm = predict_masks(q, point_features, w, phi);
        AttentionMask attn_mask = pool_mask(pm.point_masks, sp, pool_weights, phi, mean);
        const auto& lw = w.layers[l];
        if (w.norm == NormPlacement::Pre) {
            MatrixXd attn =
                masked_cross_attention(lw.ln_cross.apply(q.values), superpoint_features,
                                       attn_mask, w, l);
            q.values += lw.cross_out.apply(attn);
        } else {
            MatrixXd attn = masked_cross_attention(q.values, superpoint_features, attn_mask, w, l);
            q.values = lw.ln_cross.apply(q.values + lw.cross_out.apply(attn));
        }
        q = decoder_layer(q, w, l);
    }
    DecodeResult out;
    out.masks = predict_masks(q, point_features, w, phi);
    out.queries = std::move(q);
    return out;
}

inline double mask_iou(const MaskMat& masks, int a, int b) {
    long inter = 0, uni = 0;
    for (int j = 0; j < masks.cols(); ++j) {
        bool in_a = masks(a, j) != 0;
        bool in_b = masks(b, j) != 0;
        inter += in_a && in_b;
        uni += in_a || in_b;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct NmsResult {
    PredictedMasks masks;
    std::vector<int> kept;  // indices into the input rows
};

// Greedy suppression in descending score order (ties by lower index). Empty
// masks are dropped before suppression.
inline NmsResult mask_nms(const PredictedMasks& masks, double iou_threshold) {
    if (iou_threshold <= 0.0 || iou_threshold > 1.0)
        throw ConfigError("mask_nms: iou_threshold must be in (0,1]");
    std::vector<int> order;
    for (int i = 0; i < masks.size(); ++i) {
        bool empty = true;
        for (int j = 0; j < masks.point_masks.cols(); ++j)
            if (masks.point_masks(i, j)) { empty = false; break; }
        if (!empty) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return masks.scores(a) > masks.scores(b); });
    std::vector<int> kept;
    for (int cand : order) {
        bool suppressed = false;
        for (int k : kept) {
            if (mask_iou(masks.point_masks, cand, k) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(cand);
    }
    std::sort(kept.begin(), kept.end());

    NmsResult out;
    out.kept = kept;
    out.masks.point_masks.resize(kept.size(), masks.point_masks.cols());
    out.masks.logits.resize(kept.size(), masks.logits.cols());
    out.masks.scores.resize(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        out.masks.point_masks.row(static_cast<int>(i)) = masks.point_masks.row(kept[i]);
        out.masks.logits.row(static_cast<int>(i)) = masks.logits.row(kept[i]);
        out.masks.scores(static_cast<int>(i)) = masks.scores(kept[i]);
    }
    return out;
}

}  // namespace streamseg
