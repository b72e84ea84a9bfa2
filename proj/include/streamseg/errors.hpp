#pragma once

#include <stdexcept>
#include <string>

namespace streamseg {

// Bad dimensions, thresholds out of range, mismatched shapes.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk data. Carries the file name and, where known, the offset.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& file, const std::string& msg, long offset = -1)
        : std::runtime_error(offset >= 0
                                 ? file + " @" + std::to_string(offset) + ": " + msg
                                 : file + ": " + msg),
          file_(file),
          offset_(offset) {}

    const std::string& file() const { return file_; }
    long offset() const { return offset_; }

private:
    std::string file_;
    long offset_;
};

class EmptyInputError : public std::runtime_error {
public:
    explicit EmptyInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Cross-structure consistency violated (e.g. point ids outside the map's range).
class IntegrityError : public std::runtime_error {
public:
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bounded retries exhausted.
class CapacityError : public std::runtime_error {
public:
    CapacityError(const std::string& msg, int retries)
        : std::runtime_error(msg + " (after " + std::to_string(retries) + " retries)"),
          retries_(retries) {}

    int retries() const { return retries_; }

private:
    int retries_;
};

}  // namespace streamseg
