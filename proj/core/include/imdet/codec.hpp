#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "imdet/image.hpp"

namespace imdet {

/// 8-bit RGB PNG. Values are rounded to the nearest 1/255.
std::vector<std::uint8_t> encode_png(const Image& image);
/// Decodes any PNG libpng understands into RGB; throws ErrorKind::format.
Image decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Strict decoder: rejects bad characters, bad padding and truncated input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data);
/// fnv1a() rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace imdet
