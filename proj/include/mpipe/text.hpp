#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mpipe {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input with a 1-based line number (0 when unknown).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

namespace text {

std::vector<std::string_view> split(std::string_view s, char sep);

std::string_view trim(std::string_view s);

bool starts_with_any(std::string_view s, std::string_view prefixes);

/// Shortest round-trip decimal form of `v` ("1", "0.25", "1e-30").
std::string format_double(double v);

/// Strict numeric parsing: the whole field must be consumed.
bool parse_double(std::string_view s, double& out);
bool parse_long(std::string_view s, long& out);

/// Quote for /bin/sh when `s` contains anything outside [A-Za-z0-9_./:=+-].
std::string shell_quote(std::string_view s);

/// 1-based line and column of byte `offset` in `doc`.
std::pair<std::size_t, std::size_t> line_col(std::string_view doc, std::size_t offset);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace text
}  // namespace mpipe
