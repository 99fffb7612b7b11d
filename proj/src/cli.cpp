#include "falcon/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "falcon/archive.hpp"
#include "falcon/encoder.hpp"
#include "falcon/errors.hpp"
#include "falcon/image.hpp"
#include "falcon/oracle.hpp"
#include "falcon/projector.hpp"
#include "falcon/selftest.hpp"
#include "falcon/weights.hpp"

namespace falcon::cli {

using nlohmann::json;

namespace {

// Thrown for a failure that maps straight to an exit code.
struct CommandError : std::runtime_error {
    CommandError(ExitCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
    ExitCode code;
};

bool parse_switch(const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("expected on|off, got '" + v + "'");
}

std::uint64_t parse_seed(const std::string& s) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos, 0);
    } catch (const std::exception&) {
        throw ConfigError("invalid seed '" + s + "'");
    }
    if (pos != s.size()) throw ConfigError("invalid seed '" + s + "'");
    return v;
}

std::size_t as_count(const json& v, const std::string& key) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

bool as_bool(const json& v, const std::string& key) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) return parse_switch(v.get<std::string>());
    throw ConfigError("config key '" + key + "' must be a boolean");
}

// Applies every key except "preset".
void apply_overrides(RunConfig& rc, const json& o) {
    if (!o.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, v] : o.items()) {
        auto& e = rc.encoder;
        if (key == "preset") continue;
        else if (key == "seed") rc.seed = v.is_string() ? parse_seed(v.get<std::string>()) : as_count(v, key);
        else if (key == "layers") e.layers = as_count(v, key);
        else if (key == "width") e.width = as_count(v, key);
        else if (key == "heads") e.heads = as_count(v, key);
        else if (key == "patch") e.patch = as_count(v, key);
        else if (key == "tile") e.tile = as_count(v, key);
        else if (key == "registers") e.registers = as_count(v, key);
        else if (key == "max_tiles") e.max_tiles = as_count(v, key);
        else if (key == "reatten") e.reatten_enabled = as_bool(v, key);
        else if (key == "thumbnail") rc.thumbnail = as_bool(v, key);
        else if (key == "verify_mode") rc.verify_mode = as_bool(v, key);
        else if (key == "project") rc.project = as_bool(v, key);
        else if (key == "llm_width") rc.llm_width = as_count(v, key);
        else if (key == "threads") rc.threads = as_count(v, key);
        else if (key == "out") {
            if (!v.is_string()) throw ConfigError("config key 'out' must be a string");
            rc.out = v.get<std::string>();
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

struct CommandDefaults {
    std::string preset;
    bool verify_mode;
    std::string out;
};

RunConfig resolve(const json& flag_overrides, const std::string& config_path, const CommandDefaults& defaults) {
    json file_overrides = json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
        try {
            file_overrides = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
        }
        if (!file_overrides.is_object()) throw ConfigError("config file must hold a JSON object");
    }
    RunConfig rc;
    rc.preset = defaults.preset;
    if (file_overrides.contains("preset")) rc.preset = file_overrides["preset"].get<std::string>();
    if (flag_overrides.contains("preset")) rc.preset = flag_overrides["preset"].get<std::string>();
    rc.encoder = preset_by_name(rc.preset);
    rc.verify_mode = defaults.verify_mode;
    rc.out = defaults.out;
    apply_overrides(rc, file_overrides);
    apply_overrides(rc, flag_overrides);
    if (const char* env = std::getenv("FALCON_SEED"); env && *env) rc.seed = parse_seed(env);
    if (rc.threads == 0) throw ConfigError("threads must be >= 1");
    if (rc.llm_width == 0) throw ConfigError("llm_width must be >= 1");
    rc.encoder.validate();
    return rc;
}

Image read_image(const std::string& path) {
    try {
        return load_image(path);
    } catch (const ParseError& e) {
        throw CommandError(kInputError, e.what());
    } catch (const IoError& e) {
        throw CommandError(kInputError, e.what());
    } catch (const ShapeError& e) {
        throw CommandError(kInputError, e.what());
    }
}

TensorArchive read_weight_archive(const std::string& path) {
    try {
        return TensorArchive::load(path);
    } catch (const std::exception& e) {
        throw CommandError(kConfigError, "weight archive '" + path + "': " + e.what());
    }
}

EncoderWeights<float> load_or_init_weights(const RunConfig& rc, const std::string& weights_path) {
    if (weights_path.empty()) return init_encoder_weights<float>(rc.encoder, rc.seed);
    const auto archive = read_weight_archive(weights_path);
    try {
        return weights_from_archive<float>(archive, rc.encoder);
    } catch (const std::exception& e) {
        throw CommandError(kConfigError, "weight archive '" + weights_path + "': " + e.what());
    }
}

json flops_json(const oracle::FlopReport& f) {
    return json{{"self_attention", f.self_attention}, {"reatten", f.reatten}, {"ffn", f.ffn},
                {"projector", f.projector}, {"total", f.total}};
}

json plan_json(const Image& img, const CropPlan& plan) {
    return json{{"h", img.height},         {"w", img.width},         {"rows", plan.rows},
                {"cols", plan.cols},       {"n_tiles", plan.n_tiles}, {"resize_h", plan.resize_h},
                {"resize_w", plan.resize_w}, {"tile", plan.tile}};
}

int cmd_plan_crop(const RunConfig& rc, const std::string& image_path, std::ostream& out) {
    const Image img = read_image(image_path);
    const CropPlan plan = plan_crop(img.height, img.width, rc.encoder.tile, rc.encoder.max_tiles);
    out << plan_json(img, plan).dump() << "\n";
    return kOk;
}

template <typename T>
TensorF run_encoder(const std::vector<Image>& inputs, const EncoderWeights<float>& wf, const RunConfig& rc) {
    EncodeOptions opts;
    opts.threads = rc.threads;
    if constexpr (std::is_same_v<T, float>) {
        return encode<float>(inputs, wf, rc.encoder, opts).f_hr;
    } else {
        return encode<double>(inputs, wf.cast<double>(), rc.encoder, opts).f_hr.template cast<float>();
    }
}

int cmd_encode(const RunConfig& rc, const std::string& image_path, const std::string& weights_path,
               bool accounting_only, std::ostream& out) {
    const auto& cfg = rc.encoder;
    const Image img = read_image(image_path);
    const CropPlan plan = plan_crop(img.height, img.width, cfg.tile, cfg.max_tiles);
    const std::size_t inputs = plan.n_tiles + (rc.thumbnail ? 1 : 0);
    const auto flops = oracle::count_flops(cfg, plan.n_tiles, rc.thumbnail, rc.project ? rc.llm_width : 0);

    json summary = plan_json(img, plan);
    summary["preset"] = rc.preset;
    summary["thumbnail"] = rc.thumbnail;
    summary["reatten"] = cfg.reatten_enabled;
    summary["image_tokens_per_tile"] = cfg.image_tokens();
    summary["tokens_per_tile"] = cfg.registers;
    summary["tokens_out"] = inputs * cfg.registers;
    summary["compression_ratio"] = static_cast<double>(cfg.image_tokens()) / static_cast<double>(cfg.registers);
    summary["flops"] = flops_json(flops);
    summary["accounting_only"] = accounting_only;

    if (!accounting_only) {
        const EncoderWeights<float> wf = load_or_init_weights(rc, weights_path);
        const TileSet set = crop_tiles(img, plan);
        const std::vector<Image> enc_inputs = set.encoder_inputs(rc.thumbnail);
        const TensorF f_hr = rc.verify_mode ? run_encoder<double>(enc_inputs, wf, rc) : run_encoder<float>(enc_inputs, wf, rc);

        TensorArchive archive;
        archive.add("f_hr", f_hr);
        if (rc.project) {
            ProjectorWeights<float> pw;
            bool loaded = false;
            if (!weights_path.empty()) {
                try {
                    loaded = projector_from_archive(read_weight_archive(weights_path), cfg.width, pw);
                } catch (const ConfigError& e) {
                    throw CommandError(kConfigError, e.what());
                }
            }
            if (!loaded) pw = init_projector_weights<float>(cfg.width, rc.llm_width, rc.seed + 1);
            archive.add("projected", mlp_project(f_hr, pw));
        }
        try {
            archive.save(rc.out);
        } catch (const IoError& e) {
            throw CommandError(kInputError, e.what());
        }
        summary["out"] = rc.out;
    }
    out << summary.dump() << "\n";
    return kOk;
}

int cmd_attn_map(const RunConfig& rc, const std::string& image_path, const std::string& weights_path,
                 std::size_t layer, std::size_t head, std::size_t reg, std::ostream& out) {
    const auto& cfg = rc.encoder;
    if (layer >= cfg.layers || head >= cfg.heads || reg >= cfg.registers) {
        throw CommandError(kBadIndices, "index out of range: layer " + std::to_string(layer) + "/" +
                                            std::to_string(cfg.layers) + ", head " + std::to_string(head) + "/" +
                                            std::to_string(cfg.heads) + ", register " + std::to_string(reg) + "/" +
                                            std::to_string(cfg.registers));
    }
    const Image img = read_image(image_path);
    const CropPlan plan = plan_crop(img.height, img.width, cfg.tile, cfg.max_tiles);
    const EncoderWeights<float> wf = load_or_init_weights(rc, weights_path);
    const TileSet set = crop_tiles(img, plan);
    const std::vector<Image> inputs = set.encoder_inputs(rc.thumbnail);

    EncodeOptions opts;
    opts.threads = rc.threads;
    opts.record_trace = true;
    const AttentionTrace trace = rc.verify_mode ? *encode<double>(inputs, wf.cast<double>(), cfg, opts).trace
                                                : *encode<float>(inputs, wf, cfg, opts).trace;
    const TensorD heat = extract_register_attention(trace, layer, head, reg, plan);

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : heat.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Degenerate range (min == max) maps to all zeros.
    std::vector<std::uint8_t> gray(heat.size(), 0);
    if (hi > lo) {
        for (std::size_t i = 0; i < heat.size(); ++i)
            gray[i] = static_cast<std::uint8_t>(std::lround((heat[i] - lo) / (hi - lo) * 255.0));
    }
    try {
        write_file_bytes(rc.out, encode_pgm(heat.rows(), heat.cols(), gray));
    } catch (const IoError& e) {
        throw CommandError(kInputError, e.what());
    }
    out << json{{"out", rc.out}, {"height", heat.rows()}, {"width", heat.cols()}, {"layer", layer},
                {"head", head},  {"register", reg},       {"min", lo},           {"max", hi}}
               .dump()
        << "\n";
    return kOk;
}

int cmd_compare(const RunConfig& rc, const std::string& only, std::ostream& out) {
    const auto& cfg = rc.encoder;
    std::vector<CompressorKind> kinds = all_compressor_kinds();
    if (!only.empty()) kinds = {parse_compressor_kind(only)};
    json rows = json::array();
    for (auto kind : kinds) {
        json row{{"compressor", to_string(kind)},
                 {"tokens_per_tile", kind == CompressorKind::registers ? cfg.registers : kTargetTokens},
                 {"params", oracle::compressor_parameter_count(kind, cfg)},
                 {"flops_per_tile", oracle::compressor_flops_per_tile(kind, cfg)}};
        if (kind == CompressorKind::registers) {
            row["reatten_flops_per_tile"] = oracle::reatten_flops_per_tile(cfg, cfg.max_tiles, rc.thumbnail);
        }
        rows.push_back(row);
    }
    out << json{{"preset", rc.preset},
                {"image_tokens_per_tile", cfg.image_tokens()},
                {"n_tiles", cfg.max_tiles},
                {"thumbnail", rc.thumbnail},
                {"compressors", rows}}
               .dump()
        << "\n";
    return kOk;
}

int cmd_selftest(const RunConfig& rc, const std::string& weights_path, std::ostream& out) {
    SelftestOptions opts;
    opts.config = rc.encoder;
    opts.seed = rc.seed;
    opts.verify_mode = rc.verify_mode;
    opts.threads = std::max<std::size_t>(2, rc.threads);
    // Weight problems must surface before any check runs.
    if (!weights_path.empty()) opts.weights = load_or_init_weights(rc, weights_path);

    const auto start = std::chrono::steady_clock::now();
    SelftestReport report;
    try {
        report = run_selftest(opts);
    } catch (const RefusalError& e) {
        throw CommandError(kConfigError, e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json checks = json::array();
    for (const auto& c : report.checks) {
        checks.push_back(json{{"name", c.name},
                              {"pass", c.pass},
                              {"skipped", c.skipped},
                              {"value", c.value},
                              {"threshold", c.threshold},
                              {"detail", c.detail}});
    }
    const bool grad_skipped = !rc.verify_mode;
    out << json{{"preset", rc.preset},
                {"verify_mode", rc.verify_mode},
                {"gradient_check", grad_skipped ? "skipped (verify-mode off)" : "run"},
                {"seconds", seconds},
                {"checks", checks},
                {"pass", report.pass()}}
               .dump()
        << "\n";
    return report.pass() ? kOk : kSelftestFailed;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Register-based high-resolution vision encoder toolkit", "falcon"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string preset, config_path, seed, thumbnail, reatten, verify_mode, out_path, weights_path;
    std::size_t max_tiles = 0, tile = 0, registers = 0, layers = 0, width = 0, heads = 0, patch = 0, threads = 0,
                llm_width = 0;
    bool project = false;

    auto* o_preset = app.add_option("--preset", preset, "Model preset: paper or tiny");
    auto* o_config = app.add_option("--config", config_path, "JSON file mirroring the run configuration");
    auto* o_seed = app.add_option("--seed", seed, "Initialisation seed (FALCON_SEED overrides)");
    auto* o_max_tiles = app.add_option("--max-tiles", max_tiles, "Maximum number of sub-images");
    auto* o_tile = app.add_option("--tile", tile, "Sub-image side in pixels");
    auto* o_registers = app.add_option("--registers", registers, "Number of visual registers");
    auto* o_layers = app.add_option("--layers", layers, "Encoder depth");
    auto* o_width = app.add_option("--width", width, "Encoder width");
    auto* o_heads = app.add_option("--heads", heads, "Attention heads");
    auto* o_patch = app.add_option("--patch", patch, "Patch side in pixels");
    auto* o_thumbnail = app.add_option("--thumbnail", thumbnail, "Append the global thumbnail (on|off)");
    auto* o_reatten = app.add_option("--reatten", reatten, "Cross-tile register attention (on|off)");
    auto* o_project = app.add_flag("--project", project, "Also write projector outputs");
    auto* o_llm = app.add_option("--llm-width", llm_width, "Projector output width");
    auto* o_threads = app.add_option("--threads", threads, "Worker threads (output is identical for any value)");
    auto* o_verify = app.add_option("--verify-mode", verify_mode, "64-bit working precision (on|off)");
    auto* o_out = app.add_option("--out", out_path, "Output path");
    app.add_option("--weights", weights_path, "FALT weight archive (seeded init when absent)");

    std::string image_path, compressor;
    std::size_t layer = 0, head = 0, reg = 0;
    bool accounting_only = false;

    auto* plan_cmd = app.add_subcommand("plan-crop", "Print the sub-image grid chosen for an image");
    plan_cmd->add_option("image", image_path, "Binary PPM image")->required();

    auto* encode_cmd = app.add_subcommand("encode", "Encode an image into register tokens");
    encode_cmd->add_option("image", image_path, "Binary PPM image")->required();
    encode_cmd->add_flag("--accounting-only", accounting_only, "Report token and FLOP budgets without running");

    auto* attn_cmd = app.add_subcommand("attn-map", "Export one register's attention over the image as PGM");
    attn_cmd->add_option("image", image_path, "Binary PPM image")->required();
    attn_cmd->add_option("--layer", layer, "Layer index");
    attn_cmd->add_option("--head", head, "Head index");
    attn_cmd->add_option("--register", reg, "Register index");

    auto* compare_cmd = app.add_subcommand("compare", "Token, parameter and FLOP budgets of the compressors");
    compare_cmd->add_option("--compressor", compressor, "registers|pool|pixel_shuffle|abstractor");

    auto* selftest_cmd = app.add_subcommand("selftest", "Oracle, gradient and invariant checks");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    }

    try {
        json flags = json::object();
        if (o_preset->count()) flags["preset"] = preset;
        if (o_seed->count()) flags["seed"] = seed;
        if (o_max_tiles->count()) flags["max_tiles"] = max_tiles;
        if (o_tile->count()) flags["tile"] = tile;
        if (o_registers->count()) flags["registers"] = registers;
        if (o_layers->count()) flags["layers"] = layers;
        if (o_width->count()) flags["width"] = width;
        if (o_heads->count()) flags["heads"] = heads;
        if (o_patch->count()) flags["patch"] = patch;
        if (o_thumbnail->count()) flags["thumbnail"] = thumbnail;
        if (o_reatten->count()) flags["reatten"] = reatten;
        if (o_project->count()) flags["project"] = project;
        if (o_llm->count()) flags["llm_width"] = llm_width;
        if (o_threads->count()) flags["threads"] = threads;
        if (o_verify->count()) flags["verify_mode"] = verify_mode;
        if (o_out->count()) flags["out"] = out_path;
        (void)o_config;

        if (plan_cmd->parsed()) {
            return cmd_plan_crop(resolve(flags, config_path, {"paper", false, ""}), image_path, out);
        }
        if (encode_cmd->parsed()) {
            return cmd_encode(resolve(flags, config_path, {"paper", false, "falcon_encode.falt"}), image_path,
                              weights_path, accounting_only, out);
        }
        if (attn_cmd->parsed()) {
            return cmd_attn_map(resolve(flags, config_path, {"paper", false, "attention.pgm"}), image_path,
                                weights_path, layer, head, reg, out);
        }
        if (compare_cmd->parsed()) {
            return cmd_compare(resolve(flags, config_path, {"paper", false, ""}), compressor, out);
        }
        if (selftest_cmd->parsed()) {
            return cmd_selftest(resolve(flags, config_path, {"tiny", true, ""}), weights_path, out);
        }
        err << "error: no command\n";
        return kInputError;
    } catch (const CommandError& e) {
        err << "error: " << e.what() << "\n";
        return e.code;
    } catch (const BoundsError& e) {
        err << "error: " << e.what() << "\n";
        return kBadIndices;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    }
}

} // namespace falcon::cli
