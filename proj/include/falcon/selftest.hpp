#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "falcon/config.hpp"
#include "falcon/image.hpp"
#include "falcon/weights.hpp"

namespace falcon {

/// Deterministic RGB fixture: smooth gradients plus seeded noise, quantised to
/// 8-bit levels so it survives a PPM round trip unchanged.
Image make_fixture_image(std::size_t height, std::size_t width, std::uint64_t seed);

/// Grid tiles for a rows x cols plan of cfg.tile tiles plus the thumbnail,
/// cut from a seeded fixture.
TileSet make_fixture_tiles(const EncoderConfig& cfg, std::size_t rows, std::size_t cols, std::uint64_t seed);

struct CheckResult {
    std::string name;
    bool pass = false;
    bool skipped = false;
    double value = 0;      // measured quantity (error, count difference, ...)
    double threshold = 0;  // pass bound for value
    std::string detail;
};

struct SelftestOptions {
    EncoderConfig config = tiny_preset();
    std::uint64_t seed = 0;
    bool verify_mode = true;  // runs the 64-bit gradient check
    std::size_t threads = 4;
    std::optional<EncoderWeights<float>> weights;  // seeded init when empty
};

struct SelftestReport {
    std::vector<CheckResult> checks;
    bool pass() const;
};

/// Oracle equivalence, gradient check, invariants and FLOP accounting on a
/// two-tile-plus-thumbnail fixture.
SelftestReport run_selftest(const SelftestOptions& opts);

} // namespace falcon
