#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace cembed {

/// Writes to a sibling temp file, then renames over `path`. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Throws IoError.
std::string read_file(const std::filesystem::path& path);

}  // namespace cembed
