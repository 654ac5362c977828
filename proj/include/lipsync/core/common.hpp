#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lipsync {

// Error taxonomy. Every failure mode the pipeline can hit maps to one of
// these so the CLI can translate them into distinct exit codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct BoundsError : std::runtime_error {
    explicit BoundsError(const std::string& msg) : std::runtime_error("bounds error: " + msg) {}
};

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error("geometry error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct IngestError : std::runtime_error {
    explicit IngestError(const std::string& msg) : std::runtime_error("ingest error: " + msg) {}
};

struct QualityError : std::runtime_error {
    explicit QualityError(const std::string& msg) : std::runtime_error("quality error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

#define LIPSYNC_CHECK(cond, ErrorType, msg)   \
    do {                                      \
        if (!(cond)) throw ErrorType(msg);    \
    } while (0)

}  // namespace lipsync
