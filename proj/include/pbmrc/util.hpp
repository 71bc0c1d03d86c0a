#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pbmrc {

// Validation failures in user-supplied data or configuration.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / stream failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Reads PBMRC_LOG (error|info|debug), defaults to error.
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// UTF-8 <-> Unicode scalar values. Invalid bytes decode to U+FFFD.
std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);

// Number of Unicode scalar values in a UTF-8 string.
std::size_t utf8_length(std::string_view s);

// Substring by scalar-value offsets, end-exclusive, re-encoded as UTF-8.
std::string utf8_substr(std::string_view s, std::size_t start, std::size_t end);

// FNV-1a 64-bit, hex-encoded. Used for template digests in checkpoints.
std::string fnv1a_hex(std::string_view s);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace pbmrc
