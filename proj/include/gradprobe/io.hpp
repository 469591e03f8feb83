#pragma once

#include <filesystem>
#include <string>

namespace gradprobe {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// observe a partial file. Creates missing parent directories.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace gradprobe
