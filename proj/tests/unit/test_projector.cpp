#include <gtest/gtest.h>

#include "falcon/errors.hpp"
#include "falcon/oracle.hpp"
#include "falcon/projector.hpp"
#include "falcon/rng.hpp"

using namespace falcon;

namespace {

TensorD random_feats(std::size_t n, std::size_t d, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return init_uniform<double>({n, d}, 1, 1, rng);
}

} // namespace

TEST(Projector, ZeroWeightsGiveBias) {
    auto w = init_projector_weights<float>(8, 16, 1);
    w.w1 = TensorF::zeros(w.w1.dims());
    w.w2 = TensorF::zeros(w.w2.dims());
    w.b2 = TensorF::filled({16}, 0.75f);
    const auto out = mlp_project(TensorF::filled({5, 8}, 3.0f), w);
    EXPECT_EQ(out, TensorF::filled({5, 16}, 0.75f));
}

TEST(Projector, MatchesReference) {
    const auto w = init_projector_weights<double>(8, 16, 2);
    const auto f = random_feats(12, 8, 3);
    EXPECT_LE(max_abs_diff(mlp_project(f, w), oracle::project_reference(f, w)), 1e-12);
}

TEST(Projector, WidthMismatchThrows) {
    const auto w = init_projector_weights<float>(8, 16, 1);
    EXPECT_THROW(mlp_project(TensorF::zeros({2, 4}), w), ShapeError);
}

TEST(Projector, ArchiveRoundTrip) {
    const auto w = init_projector_weights<float>(8, 16, 4);
    TensorArchive a;
    add_projector_to_archive(a, w);
    ProjectorWeights<float> back;
    ASSERT_TRUE(projector_from_archive(a, 8, back));
    EXPECT_EQ(back.w1, w.w1);
    EXPECT_EQ(back.b2, w.b2);
    EXPECT_THROW(projector_from_archive(a, 4, back), ConfigError);
    EXPECT_FALSE(projector_from_archive(TensorArchive{}, 8, back));
}

TEST(Compressors, KindNames) {
    for (auto k : all_compressor_kinds()) EXPECT_EQ(parse_compressor_kind(to_string(k)), k);
    EXPECT_THROW(parse_compressor_kind("bogus"), ConfigError);
}

TEST(Compressors, Geometry) {
    const auto g = compressor_geometry(576);
    EXPECT_EQ(g.side, 24u);
    EXPECT_EQ(g.factor, 3u);
    EXPECT_EQ(g.out_side, 8u);
    EXPECT_EQ(g.target(), 64u);
    EXPECT_THROW(compressor_geometry(575), ShapeError);
    EXPECT_THROW(compressor_geometry(100), ShapeError);
}

TEST(AvgPool, ConstantInConstantOut) {
    const auto out = avg_pool_compress(TensorF::filled({576, 4}, 2.5f));
    EXPECT_EQ(out.dims(), (Dims{64, 4}));
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, 2.5f);
}

TEST(AvgPool, SingleSpikeScaledByNinth) {
    TensorD f({576, 3});
    f(0, 1) = 9.0;
    const auto out = avg_pool_compress(f);
    for (std::size_t r = 0; r < 64; ++r)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out(r, c), (r == 0 && c == 1) ? 1.0 : 0.0);
}

TEST(AvgPool, NonSquareThrows) { EXPECT_THROW(avg_pool_compress(TensorF::zeros({570, 2})), ShapeError); }

TEST(AvgPool, LinearAndMatchesReference) {
    const auto x = random_feats(576, 6, 1), y = random_feats(576, 6, 2);
    auto combo = x;
    scale_inplace(combo, 2.5);
    auto ys = y;
    scale_inplace(ys, -0.75);
    add_inplace(combo, ys);
    auto expect = avg_pool_compress(x);
    scale_inplace(expect, 2.5);
    auto py = avg_pool_compress(y);
    scale_inplace(py, -0.75);
    add_inplace(expect, py);
    EXPECT_LE(max_abs_diff(avg_pool_compress(combo), expect), 1e-5);
    EXPECT_LE(max_abs_diff(avg_pool_compress(x), oracle::avg_pool_reference(x, 64)), 1e-12);
}

TEST(PixelShuffle, NeighbourZeroSelectorIsStridedSubsample) {
    const std::size_t d = 4;
    const auto x = random_feats(576, d, 5);
    TensorD proj({9 * d, d});
    for (std::size_t j = 0; j < d; ++j) proj(j, j) = 1.0;
    const auto out = pixel_shuffle_compress(x, proj);
    ASSERT_EQ(out.dims(), (Dims{64, d}));
    for (std::size_t oy = 0; oy < 8; ++oy)
        for (std::size_t ox = 0; ox < 8; ++ox)
            for (std::size_t j = 0; j < d; ++j) EXPECT_EQ(out(oy * 8 + ox, j), x((oy * 3) * 24 + ox * 3, j));
}

TEST(PixelShuffle, ConstantFeaturesSummedBlocks) {
    const std::size_t d = 2;
    TensorF proj({9 * d, d});
    for (std::size_t b = 0; b < 9; ++b)
        for (std::size_t j = 0; j < d; ++j) proj(b * d + j, j) = 1.0f;
    const auto out = pixel_shuffle_compress(TensorF::filled({576, d}, 0.5f), proj);
    for (float v : out.data()) EXPECT_FLOAT_EQ(v, 4.5f);
}

TEST(PixelShuffle, LinearAndMatchesReference) {
    const std::size_t d = 3;
    SplitMix64 rng(8);
    const auto proj = init_uniform<double>({9 * d, d}, 9 * d, d, rng);
    const auto x = random_feats(576, d, 6), y = random_feats(576, d, 7);
    auto combo = x;
    add_inplace(combo, y);
    auto expect = pixel_shuffle_compress(x, proj);
    add_inplace(expect, pixel_shuffle_compress(y, proj));
    EXPECT_LE(max_abs_diff(pixel_shuffle_compress(combo, proj), expect), 1e-5);
    EXPECT_LE(max_abs_diff(pixel_shuffle_compress(x, proj), oracle::pixel_shuffle_reference(x, proj, 64)), 1e-12);
    EXPECT_THROW(pixel_shuffle_compress(x, TensorD::zeros({d, d})), ShapeError);
}

TEST(Abstractor, ZeroLogitsGiveMeanFeature) {
    const std::size_t d = 8;
    auto w = init_abstractor_weights<double>(d, 64, 4, 3);
    auto& b = w.blocks[0];
    b.wq = TensorD::zeros({d, d});
    b.wk = TensorD::zeros({d, d});
    b.wv = TensorD::identity(d);
    b.wo = TensorD::identity(d);
    const auto feats = random_feats(100, d, 9);
    std::vector<TensorD> probs;
    const auto out = cross_attention(w.queries, feats, b, 2, &probs);
    const auto normed = layer_norm(feats, b.ln_kv_gamma, b.ln_kv_beta, 1e-6);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0;
        for (std::size_t r = 0; r < 100; ++r) mean += normed(r, j);
        mean /= 100.0;
        for (std::size_t q = 0; q < 64; ++q) EXPECT_NEAR(out(q, j), mean, 1e-12);
    }
    for (const auto& p : probs)
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double s = 0;
            for (double v : p.row(r)) s += v;
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
}

TEST(Abstractor, ShapeIndependentOfInputCount) {
    const auto w = init_abstractor_weights<float>(8, 64, 4, 4);
    EXPECT_EQ(abstractor_compress(TensorF::filled({576, 8}, 0.1f), w, 2).dims(), (Dims{64, 8}));
    EXPECT_EQ(abstractor_compress(TensorF::filled({10, 8}, 0.1f), w, 2).dims(), (Dims{64, 8}));
}

TEST(Abstractor, PermutationInvariantOverFeatures) {
    const auto w = init_abstractor_weights<float>(8, 64, 4, 5);
    const auto feats = random_feats(144, 8, 10).cast<float>();
    TensorF reversed({144, 8});
    for (std::size_t r = 0; r < 144; ++r)
        for (std::size_t j = 0; j < 8; ++j) reversed(r, j) = feats(143 - r, j);
    EXPECT_LE(max_abs_diff(abstractor_compress(feats, w, 2), abstractor_compress(reversed, w, 2)), 1e-5);
}

TEST(Abstractor, MatchesReference) {
    const auto w = init_abstractor_weights<double>(8, 64, 4, 6);
    const auto feats = random_feats(256, 8, 11);
    EXPECT_LE(max_abs_diff(abstractor_compress(feats, w, 2), oracle::abstractor_reference(feats, w, 2)), 1e-10);
}

TEST(Compressors, ParameterCountsMatchWeights) {
    auto cfg = tiny_preset();
    cfg.patch = 4;
    cfg.tile = 96;  // 24 x 24 grid, as in the paper preset
    const auto aw = init_abstractor_weights<float>(cfg.width, 64, cfg.ffn_mult, 1);
    EXPECT_EQ(oracle::compressor_parameter_count(CompressorKind::abstractor, cfg), parameter_count(aw));
    EXPECT_EQ(oracle::compressor_parameter_count(CompressorKind::pool, cfg), 0u);
    EXPECT_EQ(oracle::compressor_parameter_count(CompressorKind::pixel_shuffle, cfg), 9u * cfg.width * cfg.width);
    const auto ew = init_encoder_weights<float>(cfg, 1);
    std::size_t reatten_params = ew.registers.size();
    for (const auto& R : ew.reatten) reatten_params += R.rq.size() + R.rk.size() + R.rv.size() + R.ro.size() +
                                                       R.ln_gamma.size() + R.ln_beta.size();
    EXPECT_EQ(oracle::compressor_parameter_count(CompressorKind::registers, cfg), reatten_params);
}
