#pragma once

#include <cstddef>
#include <string>

namespace falcon {

/// Architecture hyperparameters of the register encoder.
struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t width = 8;      // model dimension D
    std::size_t heads = 2;
    std::size_t patch = 16;
    std::size_t tile = 32;
    std::size_t registers = 4;  // M, shared across all tiles
    std::size_t max_tiles = 16;
    std::size_t ffn_mult = 4;
    double ln_eps = 1e-6;
    bool reatten_enabled = true;

    std::size_t head_dim() const { return width / heads; }
    std::size_t grid_side() const { return tile / patch; }
    std::size_t image_tokens() const { return grid_side() * grid_side(); }
    std::size_t tokens_per_tile() const { return image_tokens() + registers; }
    std::size_t ffn_width() const { return width * ffn_mult; }
    std::size_t patch_dim() const { return 3 * patch * patch; }

    /// Throws ConfigError when an invariant does not hold.
    void validate() const;

    bool operator==(const EncoderConfig&) const = default;
};

/// tile 384, patch 16, D 1024, L 24, 16 heads, 64 registers, 16 tiles.
/// Only registers, tile, patch and max_tiles are published values; the
/// transformer dimensions follow SigLIP-L.
EncoderConfig paper_preset();

/// tile 32, patch 16, D 8, L 2, 2 heads, 4 registers. Used by oracle and
/// gradient checks.
EncoderConfig tiny_preset();

/// Throws ConfigError for unknown names.
EncoderConfig preset_by_name(const std::string& name);

} // namespace falcon
