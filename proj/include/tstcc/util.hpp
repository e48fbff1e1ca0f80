#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tstcc {

// Error taxonomy. The CLI maps these onto distinct exit codes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Round-trippable double formatting (17 significant digits).
std::string format_double(double v);

double parse_double(const std::string& s);
long long parse_int(const std::string& s);

std::string trim(const std::string& s);
std::vector<std::string> split_string(const std::string& s, char sep);
bool starts_with(const std::string& s, const std::string& prefix);

// FNV-1a 64-bit, used for artifact checksums in run manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace tstcc
