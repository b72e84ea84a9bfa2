#include "streamseg/decoder.hpp"

#include <gtest/gtest.h>

#include <set>

#include "streamseg/rng.hpp"

using namespace streamseg;

namespace {

MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
    MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-scale, scale);
    return m;
}

DecoderWeights random_decoder(Rng& rng, int channels, int ffn_hidden, int num_heads = 1) {
    DecoderWeights w(channels, ffn_hidden);
    w.num_heads = num_heads;
    for (auto& lw : w.layers) {
        lw.cross_q = Linear::random(channels, channels, rng);
        lw.cross_k = Linear::random(channels, channels, rng);
        lw.cross_v = Linear::random(channels, channels, rng);
        lw.cross_out = Linear::random(channels, channels, rng);
        lw.self_q = Linear::random(channels, channels, rng);
        lw.self_k = Linear::random(channels, channels, rng);
        lw.self_v = Linear::random(channels, channels, rng);
        lw.self_out = Linear::random(channels, channels, rng);
        lw.ffn = Mlp::random({channels, ffn_hidden, channels}, rng);
        for (int c = 0; c < channels; ++c) {
            lw.ln_cross.gamma(c) = rng.uniform(0.5, 1.5);
            lw.ln_self.gamma(c) = rng.uniform(0.5, 1.5);
            lw.ln_ffn.gamma(c) = rng.uniform(0.5, 1.5);
            lw.ln_cross.beta(c) = rng.uniform(-0.2, 0.2);
            lw.ln_self.beta(c) = rng.uniform(-0.2, 0.2);
            lw.ln_ffn.beta(c) = rng.uniform(-0.2, 0.2);
        }
    }
    w.mask_head = Linear::random(channels, channels, rng);
    return w;
}

// Scalar re-implementation of one attention head group.
MatrixXd attention_oracle(const MatrixXd& q, const MatrixXd& k, const MatrixXd& v,
                          const MaskMat* mask, int num_heads) {
    const int channels = static_cast<int>(q.cols());
    const int head_dim = channels / num_heads;
    MatrixXd out(q.rows(), channels);
    for (int h = 0; h < num_heads; ++h) {
        for (int i = 0; i < q.rows(); ++i) {
            std::vector<double> logits(k.rows());
            bool any = false;
            if (mask)
                for (int j = 0; j < k.rows(); ++j) any = any || (*mask)(i, j);
            for (int j = 0; j < k.rows(); ++j) {
                double dot = 0.0;
                for (int c = 0; c < head_dim; ++c)
                    dot += q(i, h * head_dim + c) * k(j, h * head_dim + c);
                logits[j] = dot / std::sqrt(static_cast<double>(head_dim));
            }
            double mx = -1e300;
            for (int j = 0; j < k.rows(); ++j) {
                bool allowed = !mask || !any || (*mask)(i, j);
                if (allowed) mx = std::max(mx, logits[j]);
            }
            double z = 0.0;
            std::vector<double> weights(k.rows(), 0.0);
            for (int j = 0; j < k.rows(); ++j) {
                bool allowed = !mask || !any || (*mask)(i, j);
                if (!allowed) continue;
                weights[j] = std::exp(logits[j] - mx);
                z += weights[j];
            }
            for (int c = 0; c < head_dim; ++c) {
                double acc = 0.0;
                for (int j = 0; j < k.rows(); ++j) acc += weights[j] / z * v(j, h * head_dim + c);
                out(i, h * head_dim + c) = acc;
            }
        }
    }
    return out;
}

}  // namespace

TEST(InitQueries, FullRatioIsIdentity) {
    Rng rng(3);
    MatrixXd feats = random_matrix(rng, 7, 5);
    QuerySet qs = init_queries(feats, 1.0);
    EXPECT_EQ(qs.size(), 7);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(qs.origin[i], i);
    EXPECT_LT((qs.values - feats).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(InitQueries, HalfRatioDrawsDistinctOrigins) {
    Rng rng(5);
    MatrixXd feats = random_matrix(rng, 8, 4);
    QuerySet qs = init_queries(feats, 0.5, 99);
    EXPECT_EQ(qs.size(), 4);
    std::set<int> distinct(qs.origin.begin(), qs.origin.end());
    EXPECT_EQ(distinct.size(), 4u);
    for (int i = 0; i < 4; ++i)
        EXPECT_LT((qs.values.row(i) - feats.row(qs.origin[i])).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(InitQueries, SameSeedSameSelection) {
    Rng rng(7);
    MatrixXd feats = random_matrix(rng, 20, 3);
    QuerySet a = init_queries(feats, 0.35, 1234);
    QuerySet b = init_queries(feats, 0.35, 1234);
    EXPECT_EQ(a.origin, b.origin);
    QuerySet c = init_queries(feats, 0.35, 1235);
    EXPECT_EQ(c.size(), a.size());
}

TEST(InitQueries, RejectsBadRatioAndEmptyInput) {
    MatrixXd feats = MatrixXd::Zero(3, 2);
    EXPECT_THROW(init_queries(feats, 0.0), ConfigError);
    EXPECT_THROW(init_queries(feats, 1.5), ConfigError);
    EXPECT_THROW(init_queries(MatrixXd(0, 2), 1.0), ConfigError);
}

TEST(MaskedAttention, UniformWhenLogitsAreZero) {
    // zero Q/K projections make every logit 0; rows average the V rows
    DecoderWeights w(6, 8);
    Rng rng(11);
    w.layers[0].cross_v = Linear::random(6, 6, rng);
    MatrixXd queries = random_matrix(rng, 4, 6);
    MatrixXd sp_feats = random_matrix(rng, 5, 6);
    AttentionMask mask = AttentionMask::Ones(4, 5);

    MatrixXd out = masked_cross_attention(queries, sp_feats, mask, w, 0);
    MatrixXd v = w.layers[0].cross_v.apply(sp_feats);
    Eigen::RowVectorXd mean = v.colwise().mean();
    for (int i = 0; i < 4; ++i) EXPECT_LT((out.row(i) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MaskedAttention, SingleAllowedEntryCopiesValueRow) {
    Rng rng(13);
    DecoderWeights w(6, 8);
    w.layers[1].cross_q = Linear::random(6, 6, rng);
    w.layers[1].cross_k = Linear::random(6, 6, rng);
    w.layers[1].cross_v = Linear::random(6, 6, rng);
    MatrixXd queries = random_matrix(rng, 3, 6);
    MatrixXd sp_feats = random_matrix(rng, 5, 6);
    AttentionMask mask = AttentionMask::Zero(3, 5);
    mask(0, 2) = 1;
    mask(1, 4) = 1;
    mask(2, 0) = 1;

    MatrixXd out = masked_cross_attention(queries, sp_feats, mask, w, 1);
    MatrixXd v = w.layers[1].cross_v.apply(sp_feats);
    EXPECT_LT((out.row(0) - v.row(2)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((out.row(1) - v.row(4)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((out.row(2) - v.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MaskedAttention, MatchesScalarOracleAndMasksHard) {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        int channels = 4 * (1 + static_cast<int>(rng.uniform_int(3)));
        int heads = trial % 2 == 0 ? 1 : 2;
        DecoderWeights w = random_decoder(rng, channels, channels, heads);
        int nq = 2 + static_cast<int>(rng.uniform_int(5));
        int ns = 2 + static_cast<int>(rng.uniform_int(6));
        MatrixXd queries = random_matrix(rng, nq, channels);
        MatrixXd sp_feats = random_matrix(rng, ns, channels);
        AttentionMask mask(nq, ns);
        for (int i = 0; i < nq; ++i)
            for (int j = 0; j < ns; ++j) mask(i, j) = rng.uniform() < 0.6 ? 1 : 0;

        MatrixXd out = masked_cross_attention(queries, sp_feats, mask, w, 2);
        MatrixXd q = w.layers[2].cross_q.apply(queries);
        MatrixXd k = w.layers[2].cross_k.apply(sp_feats);
        MatrixXd v = w.layers[2].cross_v.apply(sp_feats);
        MatrixXd ref = attention_oracle(q, k, v, &mask, heads);
        EXPECT_LT((out - ref).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(MaskedAttention, AllTrueMaskEqualsUnmasked) {
    Rng rng(19);
    DecoderWeights w = random_decoder(rng, 8, 8);
    MatrixXd queries = random_matrix(rng, 5, 8);
    MatrixXd sp_feats = random_matrix(rng, 6, 8);
    AttentionMask all = AttentionMask::Ones(5, 6);

    MatrixXd masked = masked_cross_attention(queries, sp_feats, all, w, 0);
    MatrixXd q = w.layers[0].cross_q.apply(queries);
    MatrixXd k = w.layers[0].cross_k.apply(sp_feats);
    MatrixXd v = w.layers[0].cross_v.apply(sp_feats);
    MatrixXd unmasked = detail::attention_core(q, k, v, nullptr, 1);
    EXPECT_LT((masked - unmasked).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(MaskedAttention, FullyMaskedRowFallsBackWithoutNan) {
    Rng rng(23);
    for (int trial = 0; trial < 200; ++trial) {
        int channels = 2 * (1 + static_cast<int>(rng.uniform_int(4)));
        DecoderWeights w = random_decoder(rng, channels, channels);
        int nq = 1 + static_cast<int>(rng.uniform_int(6));
        int ns = 1 + static_cast<int>(rng.uniform_int(7));
        MatrixXd queries = random_matrix(rng, nq, channels);
        MatrixXd sp_feats = random_matrix(rng, ns, channels);
        AttentionMask mask(nq, ns);
        for (int i = 0; i < nq; ++i)
            for (int j = 0; j < ns; ++j) mask(i, j) = rng.uniform() < 0.3 ? 1 : 0;
        mask.row(trial % nq).setZero();  // force at least one fully-masked row

        MatrixXd out = masked_cross_attention(queries, sp_feats, mask, w, 0);
        EXPECT_TRUE(out.allFinite());
        // the fallback row equals unmasked attention for that query
        MatrixXd q = w.layers[0].cross_q.apply(queries);
        MatrixXd k = w.layers[0].cross_k.apply(sp_feats);
        MatrixXd v = w.layers[0].cross_v.apply(sp_feats);
        MatrixXd unmasked = detail::attention_core(q, k, v, nullptr, 1);
        int r = trial % nq;
        EXPECT_LT((out.row(r) - unmasked.row(r)).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(DecoderLayer, ZeroWeightsPassQueriesThrough) {
    Rng rng(29);
    DecoderWeights w(6, 12);  // all projections zero, pre-norm
    QuerySet qs;
    qs.values = random_matrix(rng, 4, 6);
    QuerySet out = decoder_layer(qs, w, 0);
    EXPECT_LT((out.values - qs.values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(out.layer, 1);
}

TEST(DecoderLayer, SingleQuerySelfAttendsToItself) {
    Rng rng(31);
    DecoderWeights w = random_decoder(rng, 6, 6);
    w.layers[0].ffn = Mlp::zeros({6, 6, 6});
    QuerySet qs;
    qs.values = random_matrix(rng, 1, 6);
    QuerySet out = decoder_layer(qs, w, 0);

    // softmax over one element is 1: the attention output is the query's own
    // V projection, then the output projection and residual
    MatrixXd normed = w.layers[0].ln_self.apply(qs.values);
    MatrixXd v = w.layers[0].self_v.apply(normed);
    MatrixXd expected = qs.values + w.layers[0].self_out.apply(v);
    EXPECT_LT((out.values - expected).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(DecoderLayer, MatchesScalarTransformerOracle) {
    Rng rng(37);
    DecoderWeights w = random_decoder(rng, 8, 10);
    QuerySet qs;
    qs.values = random_matrix(rng, 5, 8);
    QuerySet out = decoder_layer(qs, w, 1);

    const auto& lw = w.layers[1];
    MatrixXd x = qs.values;
    MatrixXd normed = lw.ln_self.apply(x);
    MatrixXd attn = attention_oracle(lw.self_q.apply(normed), lw.self_k.apply(normed),
                                     lw.self_v.apply(normed), nullptr, 1);
    x += lw.self_out.apply(attn);
    x += lw.ffn.apply(lw.ln_ffn.apply(x));
    EXPECT_LT((out.values - x).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(PredictMasks, ZeroHeadGivesAllFalseAtThreshold) {
    Rng rng(41);
    DecoderWeights w(6, 6);
    QuerySet qs;
    qs.values = random_matrix(rng, 3, 6);
    MatrixXd point_feats = random_matrix(rng, 10, 6);
    PredictedMasks pm = predict_masks(qs, point_feats, w, 0.5);
    // logits are exactly 0, sigmoid 0.5, strict comparison keeps them off
    EXPECT_EQ(pm.logits.cwiseAbs().maxCoeff(), 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 10; ++j) EXPECT_EQ(pm.point_masks(i, j), 0);
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(pm.scores(i), 1.0);
}

TEST(PredictMasks, OrthogonalRowsStayOff) {
    DecoderWeights w(4, 4);
    w.mask_head.weight = MatrixXd::Identity(4, 4);
    QuerySet qs;
    qs.values = MatrixXd::Zero(1, 4);
    qs.values(0, 0) = 1.0;
    MatrixXd point_feats = MatrixXd::Zero(3, 4);
    point_feats(0, 1) = 5.0;  // orthogonal to the query row
    point_feats(1, 2) = -2.0;
    point_feats(2, 3) = 1.0;
    PredictedMasks pm = predict_masks(qs, point_feats, w, 0.5);
    for (int j = 0; j < 3; ++j) EXPECT_EQ(pm.point_masks(0, j), 0);
}

TEST(PredictMasks, MatchesScalarDotProductOracle) {
    Rng rng(43);
    DecoderWeights w = random_decoder(rng, 6, 6);
    QuerySet qs;
    qs.values = random_matrix(rng, 4, 6);
    MatrixXd point_feats = random_matrix(rng, 12, 6);
    const double phi = 0.5;
    PredictedMasks pm = predict_masks(qs, point_feats, w, phi);

    MatrixXd mapped = w.mask_head.apply(qs.values);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 12; ++j) {
            double logit = 0.0;
            for (int c = 0; c < 6; ++c) logit += mapped(i, c) * point_feats(j, c);
            EXPECT_NEAR(pm.logits(i, j), logit, 1e-9);
            EXPECT_EQ(pm.point_masks(i, j), sigmoid(logit) > phi ? 1 : 0);
        }
    }
}

namespace {

struct DecodeFixtureData {
    SuperpointSet sp;
    MatrixXd sp_feats;
    MatrixXd point_feats;
    VectorXd pool_w;
};

DecodeFixtureData decode_fixture(Rng& rng, int n_points, int n_sp, int channels) {
    DecodeFixtureData fx;
    PointCloud cloud;
    for (int i = 0; i < n_points; ++i)
        cloud.positions.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    cloud.source_pixel.resize(n_points, {0, 0});
    SuperpointIndex index(n_points);
    for (int i = 0; i < n_points; ++i)
        index[i] = static_cast<std::int32_t>(i % n_sp);
    fx.sp = build_superpoints(cloud, index, n_sp);
    fx.sp_feats = random_matrix(rng, fx.sp.size(), channels);
    fx.point_feats = random_matrix(rng, n_points, channels);
    fx.pool_w = VectorXd::Ones(n_points);
    return fx;
}

}  // namespace

TEST(Decode, ZeroWeightsAreIdentityOnQueries) {
    Rng rng(47);
    for (int trial = 0; trial < 5; ++trial) {
        int channels = 2 + 2 * static_cast<int>(rng.uniform_int(4));
        int n_sp = 1 + static_cast<int>(rng.uniform_int(5));
        int n_points = n_sp * (1 + static_cast<int>(rng.uniform_int(10)));
        DecodeFixtureData fx = decode_fixture(rng, n_points, n_sp, channels);
        DecoderWeights w(channels, 2 * channels);

        QuerySet q0 = init_queries(fx.sp_feats, 1.0);
        DecodeResult res = decode(q0, fx.sp_feats, fx.point_feats, fx.sp, fx.pool_w, w, 0.5);
        EXPECT_LT((res.queries.values - q0.values).cwiseAbs().maxCoeff(), 1e-12);
        for (int i = 0; i < res.masks.point_masks.rows(); ++i)
            for (int j = 0; j < res.masks.point_masks.cols(); ++j)
                EXPECT_EQ(res.masks.point_masks(i, j), 0);
    }
}

TEST(Decode, DegenerateOneByOneComposesLayerOracles) {
    Rng rng(53);
    const int channels = 4;
    DecodeFixtureData fx = decode_fixture(rng, 6, 1, channels);
    DecoderWeights w = random_decoder(rng, channels, channels);
    QuerySet q0 = init_queries(fx.sp_feats, 1.0);
    DecodeResult res = decode(q0, fx.sp_feats, fx.point_feats, fx.sp, fx.pool_w, w, 0.5);

    // replay the documented sequence step by step with the public pieces
    QuerySet q = q0;
    for (int l = 0; l < 3; ++l) {
        PredictedMasks pm = predict_masks(q, fx.point_feats, w, 0.5);
        AttentionMask am = pool_mask(pm.point_masks, fx.sp, fx.pool_w, 0.5);
        MatrixXd attn = masked_cross_attention(w.layers[l].ln_cross.apply(q.values),
                                               fx.sp_feats, am, w, l);
        q.values += w.layers[l].cross_out.apply(attn);
        q = decoder_layer(q, w, l);
    }
    PredictedMasks pm = predict_masks(q, fx.point_feats, w, 0.5);
    EXPECT_LT((res.queries.values - q.values).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((res.masks.logits - pm.logits).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Decode, OutputShapesFollowContract) {
    Rng rng(59);
    const int channels = 6;
    DecodeFixtureData fx = decode_fixture(rng, 30, 5, channels);
    DecoderWeights w = random_decoder(rng, channels, 8);
    QuerySet q0 = init_queries(fx.sp_feats, 1.0);
    DecodeResult res = decode(q0, fx.sp_feats, fx.point_feats, fx.sp, fx.pool_w, w, 0.5);
    EXPECT_EQ(res.queries.values.rows(), 5);
    EXPECT_EQ(res.queries.values.cols(), channels);
    EXPECT_EQ(res.masks.point_masks.rows(), 5);
    EXPECT_EQ(res.masks.point_masks.cols(), 30);
    EXPECT_EQ(res.queries.layer, 3);
}

TEST(MaskNms, HigherScoreWinsBetweenDuplicates) {
    PredictedMasks pm;
    pm.point_masks = MaskMat::Zero(2, 6);
    for (int j = 0; j < 4; ++j) {
        pm.point_masks(0, j) = 1;
        pm.point_masks(1, j) = 1;
    }
    pm.logits = MatrixXd::Zero(2, 6);
    pm.scores.resize(2);
    pm.scores << 0.8, 0.9;
    NmsResult res = mask_nms(pm, 0.6);
    ASSERT_EQ(res.kept.size(), 1u);
    EXPECT_EQ(res.kept[0], 1);
}

TEST(MaskNms, DisjointMasksAllSurvive) {
    PredictedMasks pm;
    pm.point_masks = MaskMat::Zero(3, 9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) pm.point_masks(i, 3 * i + j) = 1;
    pm.logits = MatrixXd::Zero(3, 9);
    pm.scores.resize(3);
    pm.scores << 0.5, 0.9, 0.7;
    NmsResult res = mask_nms(pm, 0.6);
    EXPECT_EQ(res.kept.size(), 3u);
}

TEST(MaskNms, MatchesGreedyOracleAndIsAntichain) {
    Rng rng(61);
    for (int trial = 0; trial < 30; ++trial) {
        const int q = 10, n = 24;
        PredictedMasks pm;
        pm.point_masks.resize(q, n);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < n; ++j) pm.point_masks(i, j) = rng.uniform() < 0.4 ? 1 : 0;
        pm.logits = MatrixXd::Zero(q, n);
        pm.scores.resize(q);
        for (int i = 0; i < q; ++i) pm.scores(i) = rng.uniform();

        NmsResult res = mask_nms(pm, 0.6);

        // quadratic greedy oracle over score-sorted non-empty masks
        std::vector<int> order;
        for (int i = 0; i < q; ++i) {
            bool empty = true;
            for (int j = 0; j < n; ++j) empty = empty && !pm.point_masks(i, j);
            if (!empty) order.push_back(i);
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return pm.scores(a) > pm.scores(b); });
        std::vector<int> kept;
        for (int cand : order) {
            bool keep = true;
            for (int prev : kept)
                if (mask_iou(pm.point_masks, cand, prev) > 0.6) keep = false;
            if (keep) kept.push_back(cand);
        }
        std::sort(kept.begin(), kept.end());
        EXPECT_EQ(res.kept, kept);

        for (std::size_t a = 0; a < res.kept.size(); ++a)
            for (std::size_t b = a + 1; b < res.kept.size(); ++b)
                EXPECT_LE(mask_iou(pm.point_masks, res.kept[a], res.kept[b]), 0.6);
    }
}
