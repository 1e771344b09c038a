#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace misclass::image_io {

/// Interleaved 8-bit image with 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> data;
};

std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(std::span<const std::uint8_t> bytes);

/// Binary PPM (P6) for RGB, PGM (P5) for gray.
std::vector<std::uint8_t> encode_pnm(const Image8& image);
Image8 decode_pnm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace misclass::image_io
