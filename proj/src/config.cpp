#include "falcon/config.hpp"

#include "falcon/errors.hpp"

namespace falcon {

void EncoderConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw ConfigError("invalid encoder config: " + msg); };
    if (layers == 0) fail("layers must be >= 1");
    if (width == 0) fail("width must be >= 1");
    if (heads == 0 || width % heads != 0) fail("width must be divisible by heads");
    if (patch == 0) fail("patch must be >= 1");
    if (tile == 0 || tile % patch != 0) fail("tile must be a positive multiple of patch");
    if (registers == 0) fail("registers must be >= 1");
    if (max_tiles == 0) fail("max_tiles must be >= 1");
    if (ffn_mult == 0) fail("ffn_mult must be >= 1");
    if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

EncoderConfig paper_preset() {
    EncoderConfig c;
    c.layers = 24;
    c.width = 1024;
    c.heads = 16;
    c.patch = 16;
    c.tile = 384;
    c.registers = 64;
    c.max_tiles = 16;
    return c;
}

EncoderConfig tiny_preset() { return EncoderConfig{}; }

EncoderConfig preset_by_name(const std::string& name) {
    if (name == "paper") return paper_preset();
    if (name == "tiny") return tiny_preset();
    throw ConfigError("unknown preset '" + name + "' (expected paper or tiny)");
}

} // namespace falcon
