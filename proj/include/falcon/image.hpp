#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "falcon/tensor.hpp"

namespace falcon {

/// RGB raster, channel-last, row-major. Values are f32; the PPM loader maps
/// 8-bit samples to [0, 1].
struct Image {
    static constexpr std::size_t kChannels = 3;

    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w);
    Image(std::size_t h, std::size_t w, std::vector<float> px);

    float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * kChannels + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * kChannels + c]; }

    bool operator==(const Image&) const = default;
};

Image load_ppm(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);

/// Binary P6 with maxval 255; samples are rounded from [0,1] and clamped.
std::vector<std::uint8_t> encode_ppm(const Image& img);
void save_ppm(const std::filesystem::path& path, const Image& img);

/// Binary P5 grayscale.
std::vector<std::uint8_t> encode_pgm(std::size_t height, std::size_t width, std::span<const std::uint8_t> gray);

/// Half-pixel-centre bilinear resampling with edge clamping.
Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w);

/// Sub-image grid chosen for an input.
struct CropPlan {
    std::size_t rows = 1;
    std::size_t cols = 1;
    std::size_t tile = 0;
    std::size_t resize_h = 0;
    std::size_t resize_w = 0;
    std::size_t n_tiles = 1;

    bool operator==(const CropPlan&) const = default;
};

/// Picks the (rows, cols) grid with rows*cols <= max_tiles minimising
/// |rows - h/tile| + |cols - w/tile|; ties go to the smaller rows*cols, then
/// to fewer rows. The cost is compared exactly (scaled by tile to integers).
CropPlan plan_crop(std::size_t h, std::size_t w, std::size_t tile, std::size_t max_tiles);

struct TileSet {
    CropPlan plan;
    std::vector<Image> tiles;  // row-major grid order
    Image global_thumb;        // whole image resized to tile x tile

    /// Encoder input sequence: grid tiles, then the thumbnail when requested.
    std::vector<Image> encoder_inputs(bool with_thumbnail) const;
};

TileSet crop_tiles(const Image& img, const CropPlan& plan);

/// Pixel normalisation applied before patch embedding: (v - 0.5) / 0.5.
Image normalize_pixels(const Image& img);

/// Splits a square tile into (side/p)^2 patches. Row k is patch k in
/// row-major patch order, flattened as (y, x, channel).
TensorF patchify(const Image& tile, std::size_t patch);

Image unpatchify(const TensorF& tokens, std::size_t side, std::size_t patch);

} // namespace falcon
