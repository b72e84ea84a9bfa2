#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "streamseg/errors.hpp"
#include "streamseg/geometry.hpp"

namespace streamseg {

struct LossWeights {
    double alpha = 0.5;
    double beta = 0.5;
    double tau = 0.02;
};

// Mean binary cross-entropy over logits, stable for large |x|.
inline double bce_loss(const MatrixXd& logits, const MatrixXd& targets) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
        throw ConfigError("bce_loss: shape mismatch");
    if (logits.size() == 0) return 0.0;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            double x = logits(i, j);
            double t = targets(i, j);
            sum += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
        }
    return sum / static_cast<double>(logits.size());
}

// 1 - (2*sum(p*t) + 1) / (sum(p) + sum(t) + 1); exactly 0 for identical masks.
inline double dice_loss(const MatrixXd& probs, const MatrixXd& targets) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
        throw ConfigError("dice_loss: shape mismatch");
    const double smooth = 1.0;
    double inter = probs.cwiseProduct(targets).sum();
    return 1.0 - (2.0 * inter + smooth) / (probs.sum() + targets.sum() + smooth);
}

inline double iou_loss(const Aabb& pred, const Aabb& gt) { return 1.0 - aabb_iou(pred, gt); }

// Foreground/background and semantic terms are plain binary cross-entropies
// on their respective heads; named separately to keep call sites readable.
inline double cls_loss(const MatrixXd& logits, const MatrixXd& targets) {
    return bce_loss(logits, targets);
}
inline double sem_loss(const MatrixXd& logits, const MatrixXd& targets) {
    return bce_loss(logits, targets);
}

// InfoNCE over row-wise cosine similarities between the same Z instances in
// two adjacent frames; row i's positive is row i of the other matrix.
inline double contrastive_loss(const MatrixXd& f_t, const MatrixXd& f_t1, double tau) {
    if (f_t.rows() != f_t1.rows() || f_t.cols() != f_t1.cols())
        throw ConfigError("contrastive_loss: shape mismatch");
    if (f_t.rows() < 2) throw ConfigError("contrastive_loss: needs at least 2 instances");
    if (!(tau > 0.0)) throw ConfigError("contrastive_loss: tau must be positive");

    auto normalized = [](const MatrixXd& m) {
        MatrixXd out = m;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            double norm = m.row(i).norm();
            if (norm > 0.0) out.row(i) /= norm;
        }
        return out;
    };
    MatrixXd sim = normalized(f_t) * normalized(f_t1).transpose() / tau;

    double total = 0.0;
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        double m = sim.row(i).maxCoeff();
        double lse = m + std::log((sim.row(i).array() - m).exp().sum());
        total += lse - sim(i, i);
    }
    return total / static_cast<double>(sim.rows());
}

// Per-frame loss table; the boundary contrastive terms stay 0.
struct FrameLossTerms {
    double cls = 0.0;
    double bce = 0.0;
    double dice = 0.0;
    double iou = 0.0;
    double sem = 0.0;
    double cont_next = 0.0;
    double cont_prev = 0.0;
};

inline double total_loss(const std::vector<FrameLossTerms>& frames, const LossWeights& w) {
    if (frames.empty()) throw ConfigError("total_loss: needs at least one frame");
    double sum = 0.0;
    for (const auto& f : frames)
        sum += w.alpha * f.cls + f.bce + f.dice + w.beta * f.iou + f.sem + f.cont_next +
               f.cont_prev;
    return sum / static_cast<double>(frames.size());
}

struct Prediction {
    std::vector<std::int64_t> point_ids;
    double confidence = 1.0;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct ThresholdCurve {
    double threshold = 0.0;
    double ap = 0.0;
    std::vector<PrPoint> points;
};

struct EvalResult {
    double ap = 0.0;
    double ap50 = 0.0;
    double ap25 = 0.0;
    std::vector<ThresholdCurve> curves;  // 0.25, then 0.50:0.05:0.95
};

inline double mask_set_iou(const std::vector<std::int64_t>& a,
                           const std::vector<std::int64_t>& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0, ia = 0, ib = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] < b[ib])
            ++ia;
        else if (b[ib] < a[ia])
            ++ib;
        else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

namespace detail {

// Area under the precision envelope using every observed recall step.
inline double pr_area(std::vector<PrPoint> points) {
    if (points.empty()) return 0.0;
    for (int k = static_cast<int>(points.size()) - 2; k >= 0; --k)
        points[k].precision = std::max(points[k].precision, points[k + 1].precision);
    double area = 0.0;
    double prev_recall = 0.0;
    for (const auto& p : points) {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    return area;
}

}  // namespace detail

// Class-agnostic average precision with greedy confidence-ordered matching.
// AP averages thresholds 0.50:0.05:0.95; AP50/AP25 are the single thresholds.
// Equal confidences are ordered by best achievable IoU, then input index.
inline EvalResult evaluate_ap(const std::vector<Prediction>& pred,
                              const std::vector<std::vector<std::int64_t>>& gt,
                              double both_empty_value = 1.0) {
    std::vector<std::vector<std::int64_t>> gt_sorted = gt;
    for (auto& g : gt_sorted) {
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end()), g.end());
    }
    std::vector<Prediction> preds = pred;
    for (auto& p : preds) {
        std::sort(p.point_ids.begin(), p.point_ids.end());
        p.point_ids.erase(std::unique(p.point_ids.begin(), p.point_ids.end()),
                          p.point_ids.end());
    }

    const int np = static_cast<int>(preds.size());
    const int ng = static_cast<int>(gt_sorted.size());
    MatrixXd iou(np, ng);
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < ng; ++j) iou(i, j) = mask_set_iou(preds[i].point_ids, gt_sorted[j]);

    std::vector<double> best_iou(np, 0.0);
    for (int i = 0; i < np; ++i)
        if (ng > 0) best_iou[i] = iou.row(i).maxCoeff();
    std::vector<int> order(np);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (preds[a].confidence != preds[b].confidence)
            return preds[a].confidence > preds[b].confidence;
        if (best_iou[a] != best_iou[b]) return best_iou[a] > best_iou[b];
        return a < b;
    });

    auto curve_at = [&](double threshold) {
        ThresholdCurve curve;
        curve.threshold = threshold;
        if (ng == 0 && np == 0) {
            curve.ap = both_empty_value;
            return curve;
        }
        if (ng == 0 || np == 0) {
            curve.ap = 0.0;
            return curve;
        }
        std::vector<char> matched(ng, 0);
        int tp = 0, fp = 0;
        for (int rank : order) {
            int best = -1;
            double best_val = threshold;
            for (int j = 0; j < ng; ++j) {
                if (matched[j]) continue;
                if (iou(rank, j) >= best_val && (best < 0 || iou(rank, j) > best_val)) {
                    best = j;
                    best_val = iou(rank, j);
                }
            }
            if (best >= 0) {
                matched[best] = 1;
                ++tp;
            } else {
                ++fp;
            }
            curve.points.push_back({static_cast<double>(tp) / ng,
                                    static_cast<double>(tp) / (tp + fp)});
        }
        curve.ap = detail::pr_area(curve.points);
        return curve;
    };

    EvalResult result;
    result.curves.push_back(curve_at(0.25));
    result.ap25 = result.curves.back().ap;
    double sum = 0.0;
    for (int i = 0; i < 10; ++i) {
        result.curves.push_back(curve_at((50 + 5 * i) / 100.0));
        sum += result.curves.back().ap;
    }
    result.ap50 = result.curves[1].ap;
    result.ap = sum / 10.0;
    return result;
}

}  // namespace streamseg
