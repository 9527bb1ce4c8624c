#pragma once

#include <stdexcept>
#include <string>

namespace rave {

// All library errors carry a short machine-parsable class tag; the CLI prints
// "<tag>: <message>" on one line and maps the tag to a nonzero exit code.
class Error : public std::runtime_error {
public:
    Error(std::string tag, const std::string& message)
        : std::runtime_error(tag + ": " + message), tag_(std::move(tag)) {}
    const std::string& tag() const noexcept { return tag_; }

private:
    std::string tag_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config-error", m) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape-error", m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data-error", m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io-error", m) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric-error", m) {}
};
struct DesignError : Error {
    explicit DesignError(const std::string& m) : Error("design-error", m) {}
};

}  // namespace rave
