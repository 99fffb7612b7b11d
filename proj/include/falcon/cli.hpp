#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "falcon/config.hpp"

namespace falcon::cli {

enum ExitCode : int {
    kOk = 0,
    kSelftestFailed = 1,
    kInputError = 2,
    kConfigError = 3,
    kBadIndices = 4,
};

/// Settings for one command after merging, lowest to highest precedence:
/// preset, --config file, command-line flags, FALCON_SEED.
struct RunConfig {
    std::string preset;
    EncoderConfig encoder;
    std::uint64_t seed = 0;
    bool thumbnail = true;
    bool verify_mode = false;
    bool project = false;
    std::size_t llm_width = 128;
    std::size_t threads = 1;
    std::string out;
};

/// Entry point shared by the falcon binary and the tests. args[0] is the
/// program name. Reports go to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace falcon::cli
