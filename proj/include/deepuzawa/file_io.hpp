#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace deepuzawa {

/// Writes `content` to a sibling temp file and renames it over `path`.
/// Throws IoError with the path on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form (17 significant digits).
std::string format_double(double value);

}  // namespace deepuzawa
