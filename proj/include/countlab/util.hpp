#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace countlab {

/// Writes atomically: data goes to a sibling temp file which is then renamed.
void write_file(const std::filesystem::path& path, std::string_view data);
std::string read_file(const std::filesystem::path& path);

std::string sha256_hex(std::string_view data);
std::string base64_encode(std::string_view data);
/// Throws ValidationError on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace countlab
