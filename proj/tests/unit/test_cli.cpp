#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "falcon/archive.hpp"
#include "falcon/cli.hpp"
#include "falcon/image.hpp"
#include "falcon/selftest.hpp"
#include "falcon/weights.hpp"
#include "json.hpp"

using namespace falcon;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
    json report() const { return json::parse(out); }
};

Run falcon_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "falcon");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        unsetenv("FALCON_SEED");
        dir_ = fs::temp_directory_path() / ("falcon_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override {
        unsetenv("FALCON_SEED");
        fs::remove_all(dir_);
    }
    std::string image(std::size_t h, std::size_t w, std::uint64_t seed = 1) {
        const auto p = dir_ / ("img_" + std::to_string(h) + "x" + std::to_string(w) + ".ppm");
        save_ppm(p, make_fixture_image(h, w, seed));
        return p.string();
    }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }
    fs::path dir_;
};

std::vector<std::uint8_t> slurp(const std::string& p) { return read_file_bytes(p); }

} // namespace

TEST_F(CliTest, PlanCropExamples) {
    auto r = falcon_cli({"plan-crop", image(384, 384)});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.report()["rows"], 1);
    EXPECT_EQ(r.report()["cols"], 1);

    r = falcon_cli({"plan-crop", image(1500, 2000)});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.report()["rows"], 3);
    EXPECT_EQ(r.report()["cols"], 5);
    EXPECT_EQ(r.report()["h"], 1500);
    EXPECT_EQ(r.report()["w"], 2000);

    r = falcon_cli({"plan-crop", image(1500, 2000), "--max-tiles", "4"});
    ASSERT_EQ(r.code, 0);
    EXPECT_LE(r.report()["n_tiles"].get<int>(), 4);
}

TEST_F(CliTest, BadImageIsInputError) {
    EXPECT_EQ(falcon_cli({"plan-crop", path("missing.ppm")}).code, 2);
    std::ofstream(path("junk.ppm")) << "P3\n1 1\n255\n0 0 0\n";
    EXPECT_EQ(falcon_cli({"plan-crop", path("junk.ppm")}).code, 2);
    std::ofstream(path("short.ppm")) << "P6\n4 4\n255\nabc";
    const auto r = falcon_cli({"encode", "--preset", "tiny", path("short.ppm")});
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(falcon_cli({}).code, 2);
    EXPECT_EQ(falcon_cli({"frobnicate"}).code, 2);
    EXPECT_EQ(falcon_cli({"--help"}).code, 0);
}

TEST_F(CliTest, EncodePaperAccounting) {
    const auto r = falcon_cli({"encode", image(1500, 2000), "--accounting-only"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = r.report();
    EXPECT_EQ(j["compression_ratio"].get<double>(), 9.0);
    EXPECT_EQ(j["image_tokens_per_tile"], 576);
    EXPECT_EQ(j["tokens_per_tile"], 64);
    EXPECT_EQ(j["n_tiles"], 15);
    EXPECT_EQ(j["tokens_out"], 64 * 16);
}

TEST_F(CliTest, EncodeTinyWritesArchive) {
    const auto img = image(32, 32);
    auto r = falcon_cli({"encode", "--preset", "tiny", "--thumbnail", "off", img, "--out", path("a.falt")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.report()["tokens_out"], 4);
    const auto a = TensorArchive::load(path("a.falt"));
    EXPECT_EQ(a.get("f_hr").dims(), (Dims{4, 8}));
    EXPECT_FALSE(a.contains("projected"));

    r = falcon_cli({"encode", "--preset", "tiny", "--thumbnail", "off", img, "--out", path("b.falt")});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(slurp(path("a.falt")), slurp(path("b.falt")));
}

TEST_F(CliTest, EncodeProjectAndThreads) {
    const auto img = image(80, 120);
    auto r = falcon_cli({"encode", "--preset", "tiny", "--project", "--llm-width", "16", img, "--out", path("p1.falt")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto a = TensorArchive::load(path("p1.falt"));
    EXPECT_EQ(a.get("projected").dims(), (Dims{a.get("f_hr").rows(), 16}));
    r = falcon_cli({"encode", "--preset", "tiny", "--project", "--llm-width", "16", "--threads", "8", img, "--out",
                    path("p8.falt")});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(slurp(path("p1.falt")), slurp(path("p8.falt")));
}

TEST_F(CliTest, SeedPrecedence) {
    const auto img = image(32, 64);
    const auto enc = [&](std::vector<std::string> extra, const std::string& out) {
        std::vector<std::string> args{"encode", "--preset", "tiny", img, "--out", path(out)};
        args.insert(args.end(), extra.begin(), extra.end());
        EXPECT_EQ(falcon_cli(args).code, 0);
        return slurp(path(out));
    };
    const auto s3 = enc({"--seed", "3"}, "s3.falt");
    const auto s4 = enc({"--seed", "4"}, "s4.falt");
    EXPECT_NE(s3, s4);
    setenv("FALCON_SEED", "3", 1);
    EXPECT_EQ(enc({"--seed", "4"}, "env.falt"), s3);
    unsetenv("FALCON_SEED");

    std::ofstream(path("cfg.json")) << R"({"preset": "tiny", "seed": 4})";
    EXPECT_EQ(enc({"--config", path("cfg.json")}, "cfg.falt"), s4);
    EXPECT_EQ(enc({"--config", path("cfg.json"), "--seed", "3"}, "flag.falt"), s3);
}

TEST_F(CliTest, EncodeWithWeightArchive) {
    const auto cfg = tiny_preset();
    weights_to_archive(init_encoder_weights<float>(cfg, 9)).save(path("w.falt"));
    const auto img = image(32, 32);
    auto r = falcon_cli({"encode", "--preset", "tiny", "--weights", path("w.falt"), img, "--out", path("w_out.falt")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = falcon_cli({"encode", "--preset", "tiny", "--seed", "9", img, "--out", path("s_out.falt")});
    EXPECT_EQ(slurp(path("w_out.falt")), slurp(path("s_out.falt")));

    r = falcon_cli({"encode", "--preset", "tiny", "--registers", "8", "--weights", path("w.falt"), img});
    EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, ConfigErrors) {
    const auto img = image(32, 32);
    EXPECT_EQ(falcon_cli({"encode", "--preset", "tiny", "--heads", "3", img}).code, 3);
    EXPECT_EQ(falcon_cli({"encode", "--preset", "nope", img}).code, 3);
    EXPECT_EQ(falcon_cli({"encode", "--preset", "tiny", "--reatten", "maybe", img}).code, 3);
    std::ofstream(path("bad.json")) << "{ not json";
    EXPECT_EQ(falcon_cli({"encode", "--config", path("bad.json"), img}).code, 3);
    std::ofstream(path("unknown.json")) << R"({"colour": 3})";
    EXPECT_EQ(falcon_cli({"encode", "--config", path("unknown.json"), img}).code, 3);
}

TEST_F(CliTest, AttnMap) {
    const auto img = image(64, 96);
    auto r = falcon_cli({"attn-map", "--preset", "tiny", "--layer", "1", "--head", "1", "--register", "2", img, "--out",
                         path("map.pgm")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = r.report();
    EXPECT_EQ(j["height"], 4);
    EXPECT_EQ(j["width"], 6);
    EXPECT_GE(j["min"].get<double>(), 0.0);
    EXPECT_LE(j["max"].get<double>(), 1.0);
    const auto bytes = slurp(path("map.pgm"));
    const std::string header = "P5\n6 4\n255\n";
    ASSERT_EQ(bytes.size(), header.size() + 24);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);

    EXPECT_EQ(falcon_cli({"attn-map", "--preset", "tiny", "--layer", "2", img}).code, 4);
    EXPECT_EQ(falcon_cli({"attn-map", "--preset", "tiny", "--head", "2", img}).code, 4);
    EXPECT_EQ(falcon_cli({"attn-map", "--preset", "tiny", "--register", "4", img}).code, 4);
    // Indices are checked before the image is even read.
    EXPECT_EQ(falcon_cli({"attn-map", "--preset", "tiny", "--register", "4", path("missing.ppm")}).code, 4);
}

TEST_F(CliTest, AttnMapUniformAttentionIsAllZeros) {
    auto cfg = tiny_preset();
    auto w = init_encoder_weights<float>(cfg, 3);
    for (auto& L : w.layers) {
        L.wq = TensorF::zeros(L.wq.dims());
        L.wk = TensorF::zeros(L.wk.dims());
    }
    weights_to_archive(w).save(path("zero.falt"));
    const auto r = falcon_cli({"attn-map", "--preset", "tiny", "--weights", path("zero.falt"), image(32, 64), "--out",
                               path("flat.pgm")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.report()["min"], r.report()["max"]);
    const auto bytes = slurp(path("flat.pgm"));
    for (std::size_t i = bytes.size() - 2; i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
}

TEST_F(CliTest, Compare) {
    const auto r = falcon_cli({"compare"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = r.report()["compressors"];
    ASSERT_EQ(rows.size(), 4u);
    json pool, abstractor;
    for (const auto& row : rows) {
        EXPECT_EQ(row["tokens_per_tile"], 64);
        if (row["compressor"] == "pool") pool = row;
        if (row["compressor"] == "abstractor") abstractor = row;
        if (row["compressor"] == "registers") {
            EXPECT_TRUE(row.contains("reatten_flops_per_tile"));
        }
    }
    EXPECT_EQ(pool["params"], 0);
    EXPECT_GT(abstractor["params"].get<long>(), pool["params"].get<long>());

    const auto one = falcon_cli({"compare", "--compressor", "pixel_shuffle"});
    ASSERT_EQ(one.code, 0);
    EXPECT_EQ(one.report()["compressors"].size(), 1u);
    EXPECT_EQ(falcon_cli({"compare", "--compressor", "nope"}).code, 3);
    // A 2x2 token grid cannot be pooled down to 64 tokens.
    EXPECT_EQ(falcon_cli({"--preset", "tiny", "compare", "--compressor", "pool"}).code, 3);
    EXPECT_EQ(falcon_cli({"--preset", "tiny", "compare", "--compressor", "abstractor"}).code, 0);
}

TEST_F(CliTest, SelftestVerifyOff) {
    const auto r = falcon_cli({"selftest", "--verify-mode", "off"});
    ASSERT_EQ(r.code, 0) << r.out << r.err;
    const auto j = r.report();
    bool found = false;
    for (const auto& c : j["checks"]) {
        if (c["name"] == "gradient_check") {
            found = true;
            EXPECT_TRUE(c["skipped"].get<bool>());
            EXPECT_NE(c["detail"].get<std::string>().find("verify-mode off"), std::string::npos);
        }
    }
    EXPECT_TRUE(found);
}

TEST_F(CliTest, SelftestCorruptWeightsFailsFast) {
    std::ofstream(path("corrupt.falt"), std::ios::binary) << "FALT\x01\x00garbage";
    const auto r = falcon_cli({"selftest", "--weights", path("corrupt.falt")});
    EXPECT_EQ(r.code, 3);
    EXPECT_TRUE(r.out.empty());
}
