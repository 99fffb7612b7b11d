#include "falcon/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <string>

#include "falcon/archive.hpp"

namespace falcon {

Image::Image(std::size_t h, std::size_t w) : Image(h, w, std::vector<float>(h * w * kChannels, 0.0f)) {}

Image::Image(std::size_t h, std::size_t w, std::vector<float> px) : height(h), width(w), pixels(std::move(px)) {
    if (h == 0 || w == 0) throw ShapeError("image dimensions must be >= 1");
    if (pixels.size() != h * w * kChannels) throw ShapeError("image pixel count does not match H*W*3");
}

namespace {

class PnmHeader {
public:
    explicit PnmHeader(std::span<const std::uint8_t> bytes) : in_(bytes) {}

    std::string magic() {
        if (in_.size() < 2) throw ParseError("PPM header truncated");
        pos_ = 2;
        return std::string(in_.begin(), in_.begin() + 2);
    }

    std::size_t number() {
        skip_space_and_comments();
        std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < in_.size() && std::isdigit(in_[pos_])) {
            value = value * 10 + (in_[pos_] - '0');
            if (value > (1u << 24)) throw ParseError("PPM header value too large");
            ++pos_;
        }
        if (pos_ == start) throw ParseError("PPM header: expected a decimal number");
        return value;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t payload_offset() {
        if (pos_ >= in_.size() || !std::isspace(in_[pos_])) throw ParseError("PPM header: missing separator");
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < in_.size()) {
            if (std::isspace(in_[pos_])) {
                ++pos_;
            } else if (in_[pos_] == '#') {
                while (pos_ < in_.size() && in_[pos_] != '\n' && in_[pos_] != '\r') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint8_t quantize(float v) {
    const float s = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
    return static_cast<std::uint8_t>(s);
}

} // namespace

Image load_ppm(std::span<const std::uint8_t> bytes) {
    PnmHeader hdr(bytes);
    if (hdr.magic() != "P6") throw ParseError("not a binary PPM (expected P6 magic)");
    const auto width = hdr.number();
    const auto height = hdr.number();
    const auto maxval = hdr.number();
    if (width == 0 || height == 0) throw ParseError("PPM has zero width or height");
    if (maxval != 255) throw ParseError("PPM maxval must be 255, got " + std::to_string(maxval));
    const auto offset = hdr.payload_offset();
    const std::size_t need = width * height * Image::kChannels;
    if (bytes.size() < offset + need) {
        throw IoError("PPM payload truncated: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() > offset ? bytes.size() - offset : 0));
    }
    std::vector<float> px(need);
    for (std::size_t i = 0; i < need; ++i) px[i] = static_cast<float>(bytes[offset + i]) / 255.0f;
    return Image(height, width, std::move(px));
}

Image load_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return load_ppm(bytes);
    throw ParseError("unsupported image format in '" + path.string() + "' (binary PPM P6 required)");
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.pixels.size());
    for (float v : img.pixels) out.push_back(quantize(v));
    return out;
}

void save_ppm(const std::filesystem::path& path, const Image& img) { write_file_bytes(path, encode_ppm(img)); }

std::vector<std::uint8_t> encode_pgm(std::size_t height, std::size_t width, std::span<const std::uint8_t> gray) {
    if (gray.size() != height * width) throw ShapeError("PGM payload size mismatch");
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), gray.begin(), gray.end());
    return out;
}

Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) throw ShapeError("resize target must be >= 1");
    Image out(out_h, out_w);
    const float sy = static_cast<float>(img.height) / static_cast<float>(out_h);
    const float sx = static_cast<float>(img.width) / static_cast<float>(out_w);
    const float max_y = static_cast<float>(img.height - 1);
    const float max_x = static_cast<float>(img.width - 1);
    for (std::size_t y = 0; y < out_h; ++y) {
        const float fy = std::clamp((static_cast<float>(y) + 0.5f) * sy - 0.5f, 0.0f, max_y);
        const auto y0 = static_cast<std::size_t>(fy);
        const auto y1 = std::min(y0 + 1, img.height - 1);
        const float wy = fy - static_cast<float>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const float fx = std::clamp((static_cast<float>(x) + 0.5f) * sx - 0.5f, 0.0f, max_x);
            const auto x0 = static_cast<std::size_t>(fx);
            const auto x1 = std::min(x0 + 1, img.width - 1);
            const float wx = fx - static_cast<float>(x0);
            for (std::size_t c = 0; c < Image::kChannels; ++c) {
                const float top = img.at(y0, x0, c) * (1.0f - wx) + img.at(y0, x1, c) * wx;
                const float bot = img.at(y1, x0, c) * (1.0f - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1.0f - wy) + bot * wy;
            }
        }
    }
    return out;
}

CropPlan plan_crop(std::size_t h, std::size_t w, std::size_t tile, std::size_t max_tiles) {
    if (h == 0 || w == 0) throw ShapeError("plan_crop: image dimensions must be >= 1");
    if (tile == 0) throw ShapeError("plan_crop: tile must be >= 1");
    if (max_tiles == 0) throw ShapeError("plan_crop: max_tiles must be >= 1");

    const auto dist = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
    std::size_t best_r = 0, best_c = 0, best_cost = 0;
    for (std::size_t r = 1; r <= max_tiles; ++r) {
        for (std::size_t c = 1; r * c <= max_tiles; ++c) {
            const std::size_t cost = dist(r * tile, h) + dist(c * tile, w);
            const bool better = best_r == 0 || cost < best_cost ||
                                (cost == best_cost && (r * c < best_r * best_c ||
                                                       (r * c == best_r * best_c && r < best_r)));
            if (better) {
                best_r = r;
                best_c = c;
                best_cost = cost;
            }
        }
    }
    return CropPlan{best_r, best_c, tile, best_r * tile, best_c * tile, best_r * best_c};
}

std::vector<Image> TileSet::encoder_inputs(bool with_thumbnail) const {
    std::vector<Image> out = tiles;
    if (with_thumbnail) out.push_back(global_thumb);
    return out;
}

TileSet crop_tiles(const Image& img, const CropPlan& plan) {
    if (plan.n_tiles != plan.rows * plan.cols || plan.resize_h != plan.rows * plan.tile ||
        plan.resize_w != plan.cols * plan.tile || plan.n_tiles == 0) {
        throw ShapeError("crop_tiles: inconsistent crop plan");
    }
    TileSet set;
    set.plan = plan;
    const Image resized = resize_bilinear(img, plan.resize_h, plan.resize_w);
    const std::size_t t = plan.tile;
    for (std::size_t gr = 0; gr < plan.rows; ++gr) {
        for (std::size_t gc = 0; gc < plan.cols; ++gc) {
            Image tile(t, t);
            for (std::size_t y = 0; y < t; ++y) {
                const float* src = &resized.pixels[((gr * t + y) * resized.width + gc * t) * Image::kChannels];
                std::copy(src, src + t * Image::kChannels, &tile.pixels[y * t * Image::kChannels]);
            }
            set.tiles.push_back(std::move(tile));
        }
    }
    set.global_thumb = resize_bilinear(img, t, t);
    return set;
}

Image normalize_pixels(const Image& img) {
    Image out = img;
    for (auto& v : out.pixels) v = (v - 0.5f) / 0.5f;
    return out;
}

TensorF patchify(const Image& tile, std::size_t patch) {
    if (patch == 0 || tile.height != tile.width || tile.height % patch != 0) {
        throw ShapeError("patchify: tile " + std::to_string(tile.height) + "x" + std::to_string(tile.width) +
                         " is not a square multiple of patch " + std::to_string(patch));
    }
    const std::size_t g = tile.height / patch;
    const std::size_t row_len = patch * patch * Image::kChannels;
    TensorF out({g * g, row_len});
    for (std::size_t pr = 0; pr < g; ++pr) {
        for (std::size_t pc = 0; pc < g; ++pc) {
            auto dst = out.row(pr * g + pc);
            std::size_t i = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < Image::kChannels; ++c)
                        dst[i++] = tile.at(pr * patch + y, pc * patch + x, c);
        }
    }
    return out;
}

Image unpatchify(const TensorF& tokens, std::size_t side, std::size_t patch) {
    if (patch == 0 || side % patch != 0) throw ShapeError("unpatchify: side not divisible by patch");
    const std::size_t g = side / patch;
    if (tokens.rows() != g * g || tokens.cols() != patch * patch * Image::kChannels) {
        throw ShapeError("unpatchify: token matrix shape mismatch");
    }
    Image out(side, side);
    for (std::size_t pr = 0; pr < g; ++pr) {
        for (std::size_t pc = 0; pc < g; ++pc) {
            auto src = tokens.row(pr * g + pc);
            std::size_t i = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    for (std::size_t c = 0; c < Image::kChannels; ++c)
                        out.at(pr * patch + y, pc * patch + x, c) = src[i++];
        }
    }
    return out;
}

} // namespace falcon
