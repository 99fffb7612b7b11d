#include "falcon/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "falcon/encoder.hpp"
#include "falcon/oracle.hpp"
#include "falcon/rng.hpp"

namespace falcon {

Image make_fixture_image(std::size_t height, std::size_t width, std::uint64_t seed) {
    SplitMix64 rng(seed);
    Image img(height, width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t c = 0; c < Image::kChannels; ++c) {
                const double ramp = (c == 0 ? double(x) / double(width) : c == 1 ? double(y) / double(height) : 0.5);
                const double noise = rng.next_unit() - 0.5;
                const double v = std::clamp(0.6 * ramp + 0.4 * (noise + 0.5), 0.0, 1.0);
                img.at(y, x, c) = static_cast<float>(std::round(v * 255.0)) / 255.0f;
            }
        }
    }
    return img;
}

TileSet make_fixture_tiles(const EncoderConfig& cfg, std::size_t rows, std::size_t cols, std::uint64_t seed) {
    const Image img = make_fixture_image(rows * cfg.tile, cols * cfg.tile, seed);
    const CropPlan plan{rows, cols, cfg.tile, rows * cfg.tile, cols * cfg.tile, rows * cols};
    return crop_tiles(img, plan);
}

bool SelftestReport::pass() const {
    return !checks.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass || c.skipped; });
}

namespace {

CheckResult bounded(std::string name, double value, double threshold, std::string detail = {}) {
    CheckResult r;
    r.name = std::move(name);
    r.value = value;
    r.threshold = threshold;
    r.pass = std::isfinite(value) && value <= threshold;
    r.detail = std::move(detail);
    return r;
}

double max_row_sum_error(const AttentionTrace& trace) {
    double worst = 0;
    for (const auto& p : trace.full) {
        for (std::size_t r = 0; r < p.rows(); ++r) {
            double s = 0;
            for (double v : p.row(r)) s += v;
            worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    return worst;
}

} // namespace

SelftestReport run_selftest(const SelftestOptions& opts) {
    const EncoderConfig cfg = opts.config;
    cfg.validate();
    const EncoderWeights<float> wf = opts.weights ? *opts.weights : init_encoder_weights<float>(cfg, opts.seed);
    check_weight_shapes(wf, cfg);
    const EncoderWeights<double> wd = wf.cast<double>();

    const TileSet set = make_fixture_tiles(cfg, 1, 2, opts.seed ^ 0xF1C0ULL);
    const std::vector<Image> inputs = set.encoder_inputs(true);

    SelftestReport report;

    const TensorD reference = oracle::encode_reference(inputs, wd, cfg);
    report.checks.push_back(bounded("oracle_equivalence_f32",
                                    max_abs_diff(encode<float>(inputs, wf, cfg).f_hr.cast<double>(), reference), 1e-5,
                                    "max-abs difference, encode<float> vs loop reference"));
    report.checks.push_back(bounded("oracle_equivalence_f64", max_abs_diff(encode<double>(inputs, wd, cfg).f_hr, reference),
                                    1e-10, "max-abs difference, encode<double> vs loop reference"));

    if (opts.verify_mode) {
        const auto grad = oracle::check_encoder_gradients(inputs, wd, cfg, 1e-5, 1e-4);
        double worst = 0;
        std::string worst_name;
        for (const auto& e : grad.entries) {
            if (e.max_rel_err >= worst) {
                worst = e.max_rel_err;
                worst_name = e.name;
            }
        }
        auto r = bounded("gradient_check", worst, 1e-4,
                         std::to_string(grad.entries.size()) + " tensors; worst " + worst_name);
        r.pass = r.pass && grad.pass();
        report.checks.push_back(r);
    } else {
        CheckResult r;
        r.name = "gradient_check";
        r.skipped = true;
        r.threshold = 1e-4;
        r.detail = "skipped: verify-mode off";
        report.checks.push_back(r);
    }

    {
        // Swap the two grid tiles; the thumbnail stays last.
        const std::size_t m = cfg.registers;
        std::vector<Image> swapped = {inputs[1], inputs[0], inputs[2]};
        const TensorF a = encode<float>(inputs, wf, cfg).f_hr;
        const TensorF b = encode<float>(swapped, wf, cfg).f_hr;
        const std::vector<TensorF> expect_blocks = {slice_rows(a, m, 2 * m), slice_rows(a, 0, m),
                                                    slice_rows(a, 2 * m, 3 * m)};
        report.checks.push_back(bounded("permutation_equivariance", max_abs_diff(concat_rows(expect_blocks), b), 1e-5,
                                        "swap tiles 0 and 1"));
    }

    {
        EncoderConfig off = cfg;
        off.reatten_enabled = false;
        const TensorF joint = encode<float>(inputs, wf, off).f_hr;
        const TensorF solo = encode<float>(std::span<const Image>(inputs).first(1), wf, off).f_hr;
        const bool same = slice_rows(joint, 0, cfg.registers) == solo;
        auto r = bounded("reatten_off_independence", same ? 0.0 : 1.0, 0.0, "bitwise, tile 0 joint vs solo");
        report.checks.push_back(r);
    }

    {
        EncodeOptions eo;
        eo.record_trace = true;
        eo.keep_full_attention = true;
        const auto res = encode<float>(inputs, wf, cfg, eo);
        report.checks.push_back(
            bounded("attention_normalization", max_row_sum_error(*res.trace), 1e-6, "max |row sum - 1|"));
    }

    {
        oracle::FlopCounter counter;
        oracle::encode_reference(inputs, wd, cfg, &counter);
        const auto formula = oracle::count_flops(cfg, 2, true);
        const double diff = std::abs(double(counter.self_attention) - double(formula.self_attention)) +
                            std::abs(double(counter.reatten) - double(formula.reatten)) +
                            std::abs(double(counter.ffn) - double(formula.ffn));
        report.checks.push_back(bounded("flop_formula_matches_instrumented", diff, 0.0,
                                        "closed-form total " + std::to_string(formula.total)));
    }

    {
        EncoderWeights<float> init = init_reatten_from_vit(wf);
        bool equal = true;
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            equal = equal && init.reatten[l].rq == wf.layers[l].wq && init.reatten[l].rk == wf.layers[l].wk &&
                    init.reatten[l].rv == wf.layers[l].wv && init.reatten[l].ro == wf.layers[l].wo &&
                    init.reatten[l].ln_gamma == wf.layers[l].ln1_gamma && init.reatten[l].ln_beta == wf.layers[l].ln1_beta;
        }
        const TensorF wq_before = init.layers[0].wq;
        init.reatten[0].rq[0] += 1.0f;
        const bool independent = init.layers[0].wq == wq_before;
        report.checks.push_back(bounded("reatten_init_contract", (equal && independent) ? 0.0 : 1.0, 0.0,
                                        "bitwise copy per layer, deep copy"));
    }

    {
        EncodeOptions one, many;
        many.threads = std::max<std::size_t>(2, opts.threads);
        const bool same = encode<float>(inputs, wf, cfg, one).f_hr == encode<float>(inputs, wf, cfg, many).f_hr;
        report.checks.push_back(bounded("thread_determinism", same ? 0.0 : 1.0, 0.0,
                                        "bitwise, 1 vs " + std::to_string(many.threads) + " threads"));
    }

    return report;
}

} // namespace falcon
