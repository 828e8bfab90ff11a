#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rtcav {

// Write-temp-then-rename so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace rtcav
