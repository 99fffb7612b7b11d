#pragma once

#include <stdexcept>
#include <string>

namespace falcon {

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Configuration or weight archive inconsistent with EncoderConfig.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Token states handed to an operation are not at a consistent layer.
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BoundsError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

// The reference forward refuses inputs above its size cap.
class RefusalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace falcon
