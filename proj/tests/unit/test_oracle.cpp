#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "falcon/autodiff.hpp"
#include "falcon/encoder.hpp"
#include "falcon/errors.hpp"
#include "falcon/gradients.hpp"
#include "falcon/oracle.hpp"
#include "falcon/rng.hpp"
#include "falcon/selftest.hpp"

using namespace falcon;

namespace {

// Small config whose tiles hold a 16 x 16 token grid, so every compressor can
// reach 64 tokens while the loop reference stays under its cap.
EncoderConfig compressor_config() {
    auto cfg = tiny_preset();
    cfg.patch = 4;
    cfg.tile = 64;
    cfg.registers = 64;
    return cfg;
}

} // namespace

TEST(BruteForceAttention, SingleKeyReturnsValue) {
    const TensorD q({1, 2}, {0.3, -2}), k({1, 2}, {5, 1}), v({1, 3}, {1, 2, 3});
    EXPECT_EQ(oracle::brute_force_attention(q, k, v), v);
}

TEST(BruteForceAttention, ZeroQueryAveragesValues) {
    SplitMix64 rng(1);
    const auto k = init_uniform<double>({5, 4}, 1, 1, rng);
    const auto v = init_uniform<double>({5, 4}, 1, 1, rng);
    const auto out = oracle::brute_force_attention(TensorD::zeros({3, 4}), k, v);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0;
        for (std::size_t r = 0; r < 5; ++r) mean += v(r, c) / 5.0;
        for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(out(r, c), mean, 1e-15);
    }
}

TEST(EncodeReference, MatchesMainImplementation) {
    for (bool reatten_on : {true, false}) {
        auto cfg = tiny_preset();
        cfg.reatten_enabled = reatten_on;
        const auto w = init_encoder_weights<double>(cfg, 21);
        const auto set = make_fixture_tiles(cfg, 1, 2, 22);
        const auto inputs = set.encoder_inputs(true);
        const auto ref = oracle::encode_reference(inputs, w, cfg);
        EXPECT_LE(max_abs_diff(encode<double>(inputs, w, cfg).f_hr, ref), 1e-10);
        EXPECT_LE(max_abs_diff(encode<float>(inputs, w.cast<float>(), cfg).f_hr.cast<double>(), ref), 1e-5);
    }
}

TEST(EncodeReference, ZeroWeightsGiveEqualRows) {
    const auto cfg = tiny_preset();
    const auto w = zero_weights<double>(cfg);
    const auto set = make_fixture_tiles(cfg, 1, 2, 23);
    const auto f = oracle::encode_reference(set.encoder_inputs(true), w, cfg);
    for (std::size_t r = 1; r < f.rows(); ++r)
        for (std::size_t c = 0; c < f.cols(); ++c) EXPECT_EQ(f(r, c), f(0, c));
}

TEST(EncodeReference, RefusesAboveCap) {
    const auto cfg = paper_preset();
    const auto w = zero_weights<double>(tiny_preset());
    const std::vector<Image> tiles{Image(384, 384)};
    EXPECT_THROW(oracle::encode_reference(tiles, w, cfg), RefusalError);
}

TEST(EncodeReference, ImageTokenRunMatches) {
    const auto cfg = compressor_config();
    const auto w = init_encoder_weights<double>(cfg, 24);
    const auto set = make_fixture_tiles(cfg, 1, 2, 25);
    const auto a = encode_image_tokens<double>(set.tiles, w, cfg);
    const auto b = oracle::encode_image_tokens_reference(set.tiles, w, cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(max_abs_diff(a[i], b[i]), 1e-10);
}

TEST(FiniteDiff, QuadraticIsExact) {
    const std::vector<double> theta{0.5, -1.25, 3.0, 2e-3};
    const auto g = oracle::finite_diff_grad(
        [](std::span<const double> p) {
            double s = 0;
            for (double v : p) s += 0.5 * v * v;
            return s;
        },
        theta, 1e-5);
    for (std::size_t i = 0; i < theta.size(); ++i) EXPECT_NEAR(g[i], theta[i], 1e-8);
}

TEST(FiniteDiff, Linear) {
    const std::vector<double> c{2.0, -3.0, 0.25};
    const auto g = oracle::finite_diff_grad(
        [&](std::span<const double> p) { return c[0] * p[0] + c[1] * p[1] + c[2] * p[2]; },
        std::vector<double>{1, 2, 3}, 1e-5);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(g[i], c[i], 1e-9);
}

TEST(FiniteDiff, NonFiniteLossThrows) {
    EXPECT_THROW(oracle::finite_diff_grad([](std::span<const double>) { return std::numeric_limits<double>::infinity(); },
                                          std::vector<double>{1.0}, 1e-5),
                 NumericError);
}

TEST(Autodiff, MatmulGradient) {
    autodiff::Tape tape;
    const auto a = tape.leaf(TensorD({2, 2}, {1, 2, 3, 4}));
    const auto b = tape.leaf(TensorD({2, 1}, {5, 6}));
    tape.backward(tape.sum(tape.matmul(a, b)));
    EXPECT_EQ(tape.grad(a), TensorD({2, 2}, {5, 6, 5, 6}));
    EXPECT_EQ(tape.grad(b), TensorD({2, 1}, {4, 6}));
}

TEST(Autodiff, OpsAgreeWithFiniteDifferences) {
    SplitMix64 rng(31);
    const auto x0 = init_uniform<double>({3, 4}, 1, 1, rng);
    const auto g0 = init_uniform<double>({4}, 1, 1, rng);
    const auto w0 = init_uniform<double>({4, 4}, 1, 1, rng);
    auto loss = [&](const TensorD& x, autodiff::Tape& t, autodiff::NodeId& xid) {
        xid = t.leaf(x);
        const auto g = t.leaf(g0), b = t.leaf(TensorD::zeros({4})), w = t.leaf(w0);
        auto h = t.layer_norm(xid, g, b, 1e-6);
        h = t.gelu(t.matmul(h, w));
        auto s = t.softmax_rows(t.scale(h, 1.7));
        auto c = t.concat_rows({t.slice_rows(s, 0, 2), h});
        c = t.concat_cols({t.slice_cols(c, 0, 1), t.slice_cols(c, 1, 4)});
        return t.sum(t.matmul(c, t.transpose(c)));
    };
    autodiff::Tape tape;
    autodiff::NodeId xid = 0;
    tape.backward(loss(x0, tape, xid));
    const TensorD analytic = tape.grad(xid);
    const auto numeric = oracle::finite_diff_grad(
        [&](std::span<const double> p) {
            autodiff::Tape t;
            autodiff::NodeId id = 0;
            const auto root = loss(TensorD(x0.dims(), {p.begin(), p.end()}), t, id);
            return t.value(root)[0];
        },
        x0.data(), 1e-5);
    for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_NEAR(analytic[i], numeric[i], 1e-7);
}

TEST(Gradients, LossMatchesForward) {
    const auto cfg = tiny_preset();
    const auto w = init_encoder_weights<double>(cfg, 41);
    const auto set = make_fixture_tiles(cfg, 1, 2, 42);
    const auto inputs = set.encoder_inputs(true);
    const auto g = encoder_loss_gradients(inputs, w, cfg);
    double s = 0;
    const TensorD f = encode<double>(inputs, w, cfg).f_hr;
    for (double v : f.data()) s += v;
    EXPECT_NEAR(g.loss, s, 1e-12);
}

TEST(Gradients, CheckCoversEveryTensor) {
    const auto cfg = tiny_preset();
    const auto w = init_encoder_weights<double>(cfg, 43);
    const auto set = make_fixture_tiles(cfg, 1, 2, 44);
    const auto report = oracle::check_encoder_gradients(set.encoder_inputs(true), w, cfg);
    std::size_t tensors = 0;
    for_each_param(w, [&](const std::string&, const TensorD&) { ++tensors; });
    EXPECT_EQ(report.entries.size(), tensors);
    for (const auto& e : report.entries) EXPECT_LE(e.max_rel_err, 1e-4) << e.name;
    EXPECT_TRUE(report.pass());
}

TEST(Flops, ClosedForm) {
    EXPECT_EQ(oracle::attention_flops(10, 4), 4u * 10 * 16 + 2u * 100 * 4);
    EXPECT_EQ(oracle::ffn_flops(10, 4, 4), 8u * 10 * 16);
    const auto r = oracle::count_flops(tiny_preset(), 2, true);
    EXPECT_EQ(r.total, r.self_attention + r.reatten + r.ffn + r.projector);
    EXPECT_EQ(r.tokens_out, 3u * 4);
}

TEST(Flops, ReattenCheaperThanSelfAttentionAtPaperScale) {
    const auto r = oracle::count_flops(paper_preset(), 16, true);
    EXPECT_LT(r.reatten, r.self_attention);
}

TEST(Flops, DoublingWidthQuadruplesSquaredTerms) {
    auto a = tiny_preset();
    auto b = a;
    b.width *= 2;
    const std::uint64_t t = a.tokens_per_tile();
    const auto sq = [](const EncoderConfig& c, std::uint64_t rows) {
        return 4 * rows * c.width * c.width + 8 * rows * c.width * c.width;
    };
    EXPECT_EQ(sq(b, t), 4 * sq(a, t));
    const auto fa = oracle::count_flops(a, 1, false), fb = oracle::count_flops(b, 1, false);
    EXPECT_EQ(fb.ffn, 4 * fa.ffn);
    const std::uint64_t lin_a = a.layers * 2 * t * t * a.width, lin_b = b.layers * 2 * t * t * b.width;
    EXPECT_EQ(fb.self_attention - lin_b, 4 * (fa.self_attention - lin_a));
}

TEST(Flops, EncoderFormulaMatchesInstrumentedCount) {
    for (std::size_t cols : {1, 2, 3}) {
        for (bool thumb : {true, false}) {
            const auto cfg = tiny_preset();
            const auto w = init_encoder_weights<double>(cfg, 50);
            const auto set = make_fixture_tiles(cfg, 1, cols, 51);
            oracle::FlopCounter c;
            oracle::encode_reference(set.encoder_inputs(thumb), w, cfg, &c);
            const auto f = oracle::count_flops(cfg, cols, thumb);
            EXPECT_EQ(c.self_attention, f.self_attention);
            EXPECT_EQ(c.reatten, f.reatten);
            EXPECT_EQ(c.ffn, f.ffn);
        }
    }
}

TEST(Flops, ProjectorFormulaMatchesInstrumentedCount) {
    const auto cfg = tiny_preset();
    const auto w = init_projector_weights<double>(cfg.width, 16, 1);
    oracle::FlopCounter c;
    oracle::project_reference(TensorD::zeros({12, cfg.width}), w, &c);
    EXPECT_EQ(c.projector, oracle::count_flops(cfg, 2, true, 16).projector);
}

TEST(Flops, CompressorFormulasMatchInstrumentedCounts) {
    const auto cfg = compressor_config();
    const auto w = init_encoder_weights<double>(cfg, 60);
    const auto set = make_fixture_tiles(cfg, 1, 1, 61);
    const auto feats = oracle::encode_image_tokens_reference(set.tiles, w, cfg)[0];

    oracle::FlopCounter pool;
    oracle::avg_pool_reference(feats, 64, &pool);
    EXPECT_EQ(pool.compressor, oracle::compressor_flops_per_tile(CompressorKind::pool, cfg));

    SplitMix64 rng(1);
    const auto proj = init_uniform<double>({4 * cfg.width, cfg.width}, 4 * cfg.width, cfg.width, rng);
    oracle::FlopCounter shuffle;
    oracle::pixel_shuffle_reference(feats, proj, 64, &shuffle);
    EXPECT_EQ(shuffle.compressor, oracle::compressor_flops_per_tile(CompressorKind::pixel_shuffle, cfg));

    const auto aw = init_abstractor_weights<double>(cfg.width, 64, cfg.ffn_mult, 2);
    oracle::FlopCounter abs;
    oracle::abstractor_reference(feats, aw, cfg.heads, &abs);
    EXPECT_EQ(abs.compressor, oracle::compressor_flops_per_tile(CompressorKind::abstractor, cfg));

    auto off = cfg;
    off.reatten_enabled = false;
    oracle::FlopCounter with, without;
    oracle::encode_reference(set.tiles, w, off, &with);
    oracle::encode_image_tokens_reference(set.tiles, w, off, &without);
    EXPECT_EQ((with.self_attention + with.ffn) - (without.self_attention + without.ffn),
              oracle::compressor_flops_per_tile(CompressorKind::registers, cfg));
}
