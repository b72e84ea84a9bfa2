#include "streamseg/superpoint.hpp"

#include <gtest/gtest.h>

#include "streamseg/rng.hpp"

using namespace streamseg;

namespace {

// A frame with every pixel at a random valid depth, identity pose.
PointCloud random_cloud(Rng& rng, int n) {
    PointCloud cloud;
    for (int i = 0; i < n; ++i)
        cloud.positions.emplace_back(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    cloud.source_pixel.resize(n, {0, 0});
    return cloud;
}

SuperpointIndex random_index(Rng& rng, int n, int num_masks, double unassigned = 0.1) {
    SuperpointIndex index(n);
    for (int i = 0; i < n; ++i)
        index[i] = rng.uniform() < unassigned
                       ? -1
                       : static_cast<std::int32_t>(rng.uniform_int(num_masks));
    // every mask id must occur at least once
    for (int m = 0; m < num_masks && m < n; ++m) index[m] = m;
    return index;
}

GeoPoolWeights random_geo(Rng& rng, int channels) {
    GeoPoolWeights w;
    w.mlp_local = Mlp::random({3, channels, channels}, rng);
    w.mlp_weight = Mlp::random({2 * channels, channels, 1}, rng);
    return w;
}

// Scalar re-evaluation of an MLP with ReLU between layers.
VectorXd mlp_scalar(const Mlp& mlp, VectorXd x) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const Linear& lin = mlp.layers[l];
        VectorXd y = VectorXd::Zero(lin.out_dim());
        for (int i = 0; i < lin.out_dim(); ++i) {
            double acc = lin.bias(i);
            for (int j = 0; j < lin.in_dim(); ++j) acc += lin.weight(i, j) * x(j);
            y(i) = acc;
        }
        if (l + 1 < mlp.layers.size())
            for (int i = 0; i < y.size(); ++i) y(i) = std::max(0.0, y(i));
        x = y;
    }
    return x;
}

}  // namespace

TEST(LiftMasks, AllUnmaskedGivesAllUnassigned) {
    MaskImage mask(4, 3);
    std::fill(mask.labels.begin(), mask.labels.end(), -1);
    mask.num_masks = 0;
    PointCloud cloud;
    cloud.positions.resize(5, Vector3d::Zero());
    cloud.source_pixel = {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {0, 2}};
    SuperpointIndex index = lift_masks(mask, cloud);
    for (auto id : index) EXPECT_EQ(id, -1);
}

TEST(LiftMasks, FullImageMaskCoversEveryPoint) {
    MaskImage mask(4, 3);
    std::fill(mask.labels.begin(), mask.labels.end(), 0);
    mask.num_masks = 1;
    PointCloud cloud;
    cloud.positions.resize(12, Vector3d::Zero());
    for (int v = 0; v < 3; ++v)
        for (int u = 0; u < 4; ++u) cloud.source_pixel.emplace_back(u, v);
    SuperpointIndex index = lift_masks(mask, cloud);
    for (auto id : index) EXPECT_EQ(id, 0);
}

TEST(LiftMasks, CheckerboardMatchesPixelLookup) {
    const int w = 8, h = 6;
    MaskImage mask(w, h);
    mask.num_masks = 2;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) mask.at(u, v) = (u + v) % 2;

    Rng rng(17);
    PointCloud cloud;
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            if (rng.uniform() < 0.3) continue;  // simulate invalid depth holes
            cloud.positions.emplace_back(u, v, 1.0);
            cloud.source_pixel.emplace_back(u, v);
        }
    }
    SuperpointIndex index = lift_masks(mask, cloud);
    ASSERT_EQ(index.size(), cloud.size());
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        auto [u, v] = cloud.source_pixel[p];
        EXPECT_EQ(index[p], mask.at(u, v));
    }
}

TEST(NormalizeSuperpoint, SinglePointHasZeroShape) {
    auto [center, normalized] = normalize_superpoint({Vector3d(1, 1, 1)}, {});
    EXPECT_EQ(center, Vector3d(1, 1, 1));
    ASSERT_EQ(normalized.size(), 1u);
    EXPECT_EQ(normalized[0], Vector3d(0, 0, 0));
}

TEST(NormalizeSuperpoint, SymmetricPairSpansUnitDiameter) {
    auto [center, normalized] =
        normalize_superpoint({Vector3d(0, 0, 0), Vector3d(1, 0, 0)}, {});
    EXPECT_EQ(center, Vector3d(0.5, 0, 0));
    ASSERT_EQ(normalized.size(), 2u);
    EXPECT_LT((normalized[0] - Vector3d(-0.5, 0, 0)).norm(), 1e-15);
    EXPECT_LT((normalized[1] - Vector3d(0.5, 0, 0)).norm(), 1e-15);
}

TEST(NormalizeSuperpoint, RandomClusterScaledByLargestExtent) {
    Rng rng(29);
    std::vector<Vector3d> pts;
    for (int i = 0; i < 50; ++i)
        pts.emplace_back(rng.uniform(-3, 1), rng.uniform(0, 5), rng.uniform(-1, 1));

    auto [center, normalized] = normalize_superpoint(pts, {});

    Vector3d lo = pts[0], hi = pts[0];
    Vector3d sum = Vector3d::Zero();
    for (const auto& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
        sum += p;
    }
    Vector3d centroid = sum / pts.size();
    double ext = (hi - lo).maxCoeff();
    EXPECT_LT((center - centroid).norm(), 1e-12);

    double max_axis = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        Vector3d expect = (pts[j] - centroid) / ext;
        EXPECT_LT((normalized[j] - expect).norm(), 1e-12);
        max_axis = std::max(max_axis, normalized[j].cwiseAbs().maxCoeff());
    }
    // the widest axis fills exactly [-a, 1-a] for some split a, total extent 1
    Vector3d nlo = normalized[0], nhi = normalized[0];
    for (const auto& p : normalized) {
        nlo = nlo.cwiseMin(p);
        nhi = nhi.cwiseMax(p);
    }
    EXPECT_NEAR((nhi - nlo).maxCoeff(), 1.0, 1e-9);
    EXPECT_LE(max_axis, 1.0 + 1e-9);
}

TEST(NormalizeSuperpoint, InvariantUnderTranslationAndScale) {
    Rng rng(31);
    std::vector<Vector3d> pts;
    for (int i = 0; i < 40; ++i)
        pts.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto [c0, n0] = normalize_superpoint(pts, {});

    Vector3d t(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    double s = rng.uniform(0.1, 8.0);
    std::vector<Vector3d> moved;
    for (const auto& p : pts) moved.push_back(s * p + t);
    auto [c1, n1] = normalize_superpoint(moved, {});

    for (std::size_t j = 0; j < pts.size(); ++j) EXPECT_LT((n0[j] - n1[j]).norm(), 1e-9);
}

TEST(BuildSuperpoints, DropsEmptyMasksAndPartitionsPoints) {
    Rng rng(37);
    PointCloud cloud = random_cloud(rng, 60);
    SuperpointIndex index = random_index(rng, 60, 4);
    for (auto& id : index)
        if (id == 2) id = 3;  // empty out mask 2

    SuperpointSet sp = build_superpoints(cloud, index, 4);
    EXPECT_EQ(sp.size(), 3);
    std::vector<int> seen(60, 0);
    for (const auto& g : sp.groups) {
        EXPECT_FALSE(g.point_ids.empty());
        for (int p : g.point_ids) seen[p]++;
    }
    for (int p = 0; p < 60; ++p) EXPECT_EQ(seen[p], index[p] >= 0 ? 1 : 0);
}

TEST(GeoFeatures, GlobalIsMaxOfFirstChannelEmbedding) {
    GeoPoolWeights w;
    w.mlp_local = Mlp::zeros({3, 4});
    w.mlp_local.layers[0].weight(0, 0) = 1.0;  // channel 0 copies x
    w.mlp_weight = Mlp::zeros({8, 1});
    GeoFeatures g = geo_features({Vector3d(0.5, 0, 0), Vector3d(-0.5, 0, 0)}, w);
    EXPECT_DOUBLE_EQ(g.z_global(0), 0.5);
}

TEST(GeoFeatures, SinglePointGlobalEqualsLocalRow) {
    Rng rng(43);
    GeoPoolWeights w = random_geo(rng, 6);
    GeoFeatures g = geo_features({Vector3d(0.1, -0.2, 0.3)}, w);
    ASSERT_EQ(g.z_local.rows(), 1);
    EXPECT_LT((g.z_global.transpose() - g.z_local.row(0)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GeoFeatures, GlobalMatchesPerChannelMaxLoop) {
    Rng rng(47);
    GeoPoolWeights w = random_geo(rng, 5);
    std::vector<Vector3d> pts;
    for (int i = 0; i < 10; ++i)
        pts.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    GeoFeatures g = geo_features(pts, w);
    for (int c = 0; c < 5; ++c) {
        double mx = -1e300;
        for (int j = 0; j < 10; ++j) mx = std::max(mx, g.z_local(j, c));
        EXPECT_DOUBLE_EQ(g.z_global(c), mx);
    }
    // local rows match the scalar MLP on each point
    for (int j = 0; j < 10; ++j) {
        VectorXd ref = mlp_scalar(w.mlp_local, pts[j]);
        EXPECT_LT((g.z_local.row(j).transpose() - ref).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(PointWeights, ZeroWeightsGiveHalf) {
    GeoPoolWeights w;
    w.mlp_local = Mlp::zeros({3, 4});
    w.mlp_weight = Mlp::zeros({8, 1});
    GeoFeatures g = geo_features({Vector3d(1, 2, 3), Vector3d(0, 0, 0)}, w);
    VectorXd weights = point_weights(g.z_local, g.z_global, w);
    for (int j = 0; j < weights.size(); ++j) EXPECT_DOUBLE_EQ(weights(j), 0.5);
}

TEST(PointWeights, LargeBiasSaturates) {
    GeoPoolWeights w;
    w.mlp_local = Mlp::zeros({3, 4});
    w.mlp_weight = Mlp::zeros({8, 1});
    w.mlp_weight.layers[0].bias(0) = 20.0;
    GeoFeatures g = geo_features({Vector3d(0.5, 0.5, 0.5)}, w);
    VectorXd weights = point_weights(g.z_local, g.z_global, w);
    EXPECT_GT(weights(0), 0.999999);
}

TEST(PointWeights, MatchesScalarReEvaluation) {
    Rng rng(53);
    GeoPoolWeights w = random_geo(rng, 4);
    std::vector<Vector3d> pts;
    for (int i = 0; i < 12; ++i)
        pts.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    GeoFeatures g = geo_features(pts, w);
    VectorXd weights = point_weights(g.z_local, g.z_global, w);

    for (int j = 0; j < 12; ++j) {
        VectorXd cat(8);
        cat.head(4) = g.z_local.row(j).transpose();
        cat.tail(4) = g.z_global;
        double raw = mlp_scalar(w.mlp_weight, cat)(0);
        EXPECT_NEAR(weights(j), 1.0 / (1.0 + std::exp(-raw)), 1e-6);
    }
}

TEST(PointWeights, BoundedInOpenUnitInterval) {
    Rng rng(59);
    for (int trial = 0; trial < 20; ++trial) {
        GeoPoolWeights w = random_geo(rng, 3);
        std::vector<Vector3d> pts;
        for (int i = 0; i < 8; ++i)
            pts.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                             rng.uniform(-0.5, 0.5));
        GeoFeatures g = geo_features(pts, w);
        VectorXd weights = point_weights(g.z_local, g.z_global, w);
        for (int j = 0; j < weights.size(); ++j) {
            EXPECT_GT(weights(j), 0.0);
            EXPECT_LT(weights(j), 1.0);
        }
    }
}

TEST(GeometricPool, UnitWeightsZeroGlobalIsPlainMean) {
    Rng rng(61);
    PointCloud cloud = random_cloud(rng, 40);
    SuperpointIndex index = random_index(rng, 40, 5);
    SuperpointSet sp = build_superpoints(cloud, index, 5);

    MatrixXd feats(40, 7);
    for (int i = 0; i < feats.size(); ++i) feats(i / 7, i % 7) = rng.uniform(-1, 1);
    VectorXd ones = VectorXd::Ones(40);
    MatrixXd zero_g = MatrixXd::Zero(sp.size(), 7);

    MatrixXd pooled = geometric_pool(feats, sp, ones, zero_g);
    MatrixXd mean = scatter_mean(feats, sp.index, sp.size());
    EXPECT_LT((pooled - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GeometricPool, SinglePointHalfWeightPlusGlobal) {
    PointCloud cloud;
    cloud.positions = {Vector3d(1, 2, 3)};
    cloud.source_pixel = {{0, 0}};
    SuperpointSet sp = build_superpoints(cloud, {0}, 1);

    MatrixXd feats(1, 3);
    feats << 2.0, -4.0, 6.0;
    VectorXd w(1);
    w << 0.5;
    MatrixXd g(1, 3);
    g << 10.0, 20.0, 30.0;
    MatrixXd pooled = geometric_pool(feats, sp, w, g);
    EXPECT_LT((pooled.row(0) - Eigen::RowVector3d(11.0, 18.0, 33.0)).cwiseAbs().maxCoeff(),
              1e-15);
}

TEST(GeometricPool, MatchesDoubleLoopOracle) {
    Rng rng(67);
    PointCloud cloud = random_cloud(rng, 80);
    SuperpointIndex index = random_index(rng, 80, 5);
    SuperpointSet sp = build_superpoints(cloud, index, 5);

    const int c = 6;
    MatrixXd feats(80, c);
    for (int i = 0; i < 80; ++i)
        for (int j = 0; j < c; ++j) feats(i, j) = rng.uniform(-1, 1);
    VectorXd w(80);
    for (int i = 0; i < 80; ++i) w(i) = rng.uniform();
    MatrixXd g(sp.size(), c);
    for (int i = 0; i < sp.size(); ++i)
        for (int j = 0; j < c; ++j) g(i, j) = rng.uniform(-1, 1);

    MatrixXd pooled = geometric_pool(feats, sp, w, g);
    for (int i = 0; i < sp.size(); ++i) {
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int p : sp.groups[i].point_ids) acc += w(p) * feats(p, ch);
            acc /= static_cast<double>(sp.groups[i].point_ids.size());
            acc += g(i, ch);
            EXPECT_NEAR(pooled(i, ch), acc, 1e-9);
        }
    }
}

TEST(PoolMask, AllTrueUnitWeightsStaysTrue) {
    Rng rng(71);
    PointCloud cloud = random_cloud(rng, 30);
    SuperpointSet sp = build_superpoints(cloud, random_index(rng, 30, 3, 0.0), 3);
    MaskMat masks = MaskMat::Ones(4, 30);
    MaskMat pooled = pool_mask(masks, sp, VectorXd::Ones(30), 0.5);
    EXPECT_EQ(pooled.rows(), 4);
    EXPECT_EQ(pooled.cols(), sp.size());
    for (int i = 0; i < pooled.size(); ++i) EXPECT_EQ(pooled(i / pooled.cols(), i % pooled.cols()), 1);
}

TEST(PoolMask, AllFalseStaysFalse) {
    Rng rng(73);
    PointCloud cloud = random_cloud(rng, 30);
    SuperpointSet sp = build_superpoints(cloud, random_index(rng, 30, 3, 0.0), 3);
    MaskMat pooled = pool_mask(MaskMat::Zero(4, 30), sp, VectorXd::Ones(30), 0.5);
    for (int i = 0; i < pooled.rows(); ++i)
        for (int j = 0; j < pooled.cols(); ++j) EXPECT_EQ(pooled(i, j), 0);
}

TEST(PoolMask, MatchesDoubleLoopOracle) {
    Rng rng(79);
    for (int frame = 0; frame < 25; ++frame) {
        int n = 20 + static_cast<int>(rng.uniform_int(40));
        int m = 2 + static_cast<int>(rng.uniform_int(4));
        PointCloud cloud = random_cloud(rng, n);
        SuperpointSet sp = build_superpoints(cloud, random_index(rng, n, m), m);
        int q = 1 + static_cast<int>(rng.uniform_int(5));
        MaskMat masks(q, n);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < n; ++j) masks(i, j) = rng.uniform() < 0.5 ? 1 : 0;
        VectorXd w(n);
        for (int i = 0; i < n; ++i) w(i) = rng.uniform();

        MaskMat pooled = pool_mask(masks, sp, w, 0.5);
        for (int qi = 0; qi < q; ++qi) {
            for (int si = 0; si < sp.size(); ++si) {
                double acc = 0.0;
                for (int p : sp.groups[si].point_ids) acc += w(p) * (masks(qi, p) ? 1.0 : 0.0);
                acc /= static_cast<double>(sp.groups[si].point_ids.size());
                EXPECT_EQ(pooled(qi, si), acc > 0.5 ? 1 : 0);
            }
        }
    }
}

TEST(PoolMask, MonotoneInAddedTrueEntries) {
    Rng rng(83);
    PointCloud cloud = random_cloud(rng, 50);
    SuperpointSet sp = build_superpoints(cloud, random_index(rng, 50, 4, 0.0), 4);
    VectorXd w(50);
    for (int i = 0; i < 50; ++i) w(i) = rng.uniform();

    MaskMat masks(1, 50);
    for (int j = 0; j < 50; ++j) masks(0, j) = rng.uniform() < 0.3 ? 1 : 0;
    MaskMat before = pool_mask(masks, sp, w, 0.5);

    MaskMat more = masks;
    for (int j = 0; j < 50; ++j)
        if (rng.uniform() < 0.4) more(0, j) = 1;
    MaskMat after = pool_mask(more, sp, w, 0.5);
    for (int i = 0; i < sp.size(); ++i)
        if (before(0, i)) EXPECT_EQ(after(0, i), 1);
}

TEST(Scatter, SingleGroupAndIdentityGrouping) {
    Rng rng(89);
    MatrixXd values(6, 3);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 3; ++j) values(i, j) = rng.uniform(-1, 1);

    SuperpointIndex all_one(6, 0);
    MatrixXd mean = scatter_mean(values, all_one, 1);
    MatrixXd mx = scatter_max(values, all_one, 1);
    for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(mean(0, j), values.col(j).mean(), 1e-12);
        EXPECT_DOUBLE_EQ(mx(0, j), values.col(j).maxCoeff());
    }

    SuperpointIndex identity = {0, 1, 2, 3, 4, 5};
    EXPECT_LT((scatter_mean(values, identity, 6) - values).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((scatter_max(values, identity, 6) - values).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Scatter, RandomGroupingMatchesLoopOracle) {
    Rng rng(97);
    const int n = 40, groups = 5, c = 4;
    MatrixXd values(n, c);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) values(i, j) = rng.uniform(-2, 2);
    SuperpointIndex index = random_index(rng, n, groups, 0.0);

    MatrixXd mean = scatter_mean(values, index, groups);
    MatrixXd mx = scatter_max(values, index, groups);
    for (int g = 0; g < groups; ++g) {
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0, best = -1e300;
            int count = 0;
            for (int p = 0; p < n; ++p) {
                if (index[p] != g) continue;
                acc += values(p, ch);
                best = std::max(best, values(p, ch));
                ++count;
            }
            ASSERT_GT(count, 0);
            EXPECT_NEAR(mean(g, ch), acc / count, 1e-12);
            EXPECT_DOUBLE_EQ(mx(g, ch), best);
        }
    }
}
