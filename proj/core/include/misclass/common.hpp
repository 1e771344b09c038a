#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace misclass {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPlanePixels = kImageSide * kImageSide;  // 1024
inline constexpr std::size_t kImageValues = kChannels * kPlanePixels; // 3072

// Index into a channel-major (c, row, col) grid.
constexpr std::size_t pixel_index(std::size_t channel, std::size_t row, std::size_t col) {
  return channel * kPlanePixels + row * kImageSide + col;
}

enum class Errc {
  invalid_argument,
  truncated_file,
  invalid_label,
  empty_input,
  degenerate_channel,
  shape_mismatch,
  diverged,
  schema,
  consistency,
  config,
  io,
  infinite_t,
  not_found,
};

const char* to_string(Errc code);

/// Error raised by every misclass operation. `code()` identifies the failure
/// class so callers (and the CLI exit-code mapping) can branch on it.
class Error : public std::runtime_error {
public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }
  /// The message without the error-class prefix that what() carries.
  const std::string& message() const noexcept { return message_; }

private:
  Errc code_;
  std::string message_;
};

/// 32x32 boolean grid, row-major. Used for object/spare masks and patch masks.
using PixelMask = std::array<bool, kPlanePixels>;

inline PixelMask empty_mask() {
  PixelMask m{};
  m.fill(false);
  return m;
}

}  // namespace misclass
