#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/common.hpp"

namespace misclass {

/// 3x32x32 image of 8-bit intensities, channel-major (R, G, B planes), each
/// plane row-major. This is the in-memory form of one CIFAR-10 record.
struct RawImage {
  std::array<std::uint8_t, kImageValues> pixels{};

  std::uint8_t& at(std::size_t channel, std::size_t row, std::size_t col) {
    return pixels[pixel_index(channel, row, col)];
  }
  std::uint8_t at(std::size_t channel, std::size_t row, std::size_t col) const {
    return pixels[pixel_index(channel, row, col)];
  }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

struct LabeledImage {
  RawImage image;
  std::uint8_t label = 0;
  std::string id;
};

struct ChannelStats {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> std{};
};

/// Channel-normalized image (pixel - mean_c) / std_c, 64-bit.
class NormalizedImage {
public:
  /// Wraps already-normalized values. Throws Errc::shape_mismatch unless
  /// exactly 3072 values are given, and Errc::invalid_argument on non-finite input.
  static NormalizedImage from_values(std::span<const double> values);

  std::span<const double> values() const { return values_; }
  double at(std::size_t channel, std::size_t row, std::size_t col) const {
    return values_[pixel_index(channel, row, col)];
  }

  friend bool operator==(const NormalizedImage&, const NormalizedImage&) = default;

private:
  friend NormalizedImage normalize_image(const RawImage&, const ChannelStats&);
  NormalizedImage() : values_(kImageValues, 0.0) {}
  std::vector<double> values_;
};

// ---- CIFAR-10 binary format ------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 1 + kImageValues;  // 3073
inline constexpr std::size_t kCifarClasses = 10;

/// Loads a CIFAR-10 binary batch (1 label byte + 3072 pixel bytes per
/// record). Ids are "<file stem>:<record index>".
std::vector<LabeledImage> load_cifar10(const std::filesystem::path& path,
                                       std::size_t num_classes = kCifarClasses);

/// Parses an in-memory CIFAR-10 byte stream; `id_prefix` names the records.
std::vector<LabeledImage> parse_cifar10(std::span<const std::uint8_t> bytes,
                                        const std::string& id_prefix,
                                        std::size_t num_classes = kCifarClasses);

/// Writes images in the CIFAR-10 binary record format.
void save_cifar10(std::span<const LabeledImage> images, const std::filesystem::path& path);

// ---- normalization ---------------------------------------------------------

/// Per-channel mean and population standard deviation over every pixel of
/// every image (divides by N*32*32). Exact integer accumulation, so the result
/// does not depend on image order.
///
/// A constant channel throws Errc::degenerate_channel unless `std_floor` > 0,
/// in which case every std component is raised to at least `std_floor`.
ChannelStats compute_channel_stats(std::span<const LabeledImage> images, double std_floor = 0.0);

NormalizedImage normalize_image(const RawImage& image, const ChannelStats& stats);

std::vector<NormalizedImage> normalize_all(std::span<const LabeledImage> images,
                                           const ChannelStats& stats);

nlohmann::json to_json(const ChannelStats& stats);
ChannelStats channel_stats_from_json(const nlohmann::json& j);

// ---- export ----------------------------------------------------------------

enum class ImageFormat { ppm, png };

ImageFormat image_format_from_path(const std::filesystem::path& path);

void export_image(const RawImage& image, const std::filesystem::path& path, ImageFormat format);

/// Normalized values are mapped per channel by an affine min-max transform to
/// [0,255]; a constant channel maps to 0.
void export_image(const NormalizedImage& image, const std::filesystem::path& path,
                  ImageFormat format);

/// Min-max remap used by the normalized export, exposed for testing.
RawImage to_displayable(const NormalizedImage& image);

/// Reads back an RGB PPM/PNG written by export_image.
RawImage read_image(const std::filesystem::path& path);

// ---- planted interference dataset -----------------------------------------

enum class Corner { top_left, top_right, bottom_left, bottom_right };

/// Synthetic testbed: the label is decided by a center glyph; a corner patch
/// (one channel at full intensity, channel = patch class) acts as a spurious
/// confound whose correlation with the label is configurable.
struct PlantedConfig {
  std::size_t num_classes = 3;  // 2 or 3: one glyph per class
  std::size_t train_size = 600;
  std::size_t test_size = 300;
  /// Fraction of (non-interference) images that carry a corner patch.
  double patch_fraction = 0.5;
  /// Probability that a patch shows the label's confound class rather than a
  /// uniformly random class. 0 makes the patch independent of the label.
  double correlation = 0.0;
  /// Confound class of label y is (y + confound_shift) mod num_classes.
  std::size_t confound_shift = 0;
  /// Fraction of the test split whose patch contradicts the glyph label.
  double interference_fraction = 0.0;
  Corner corner = Corner::top_left;
  std::size_t patch_size = 6;
  std::uint8_t patch_intensity = 255;
  std::size_t glyph_size = 8;
  std::uint8_t glyph_intensity = 200;
  std::uint8_t noise_amplitude = 40;
};

struct PlantedTruth {
  bool has_patch = false;
  int patch_class = -1;   // class encoded by the patch channel, -1 without patch
  bool interference = false;
  PixelMask object_mask{};  // glyph region
  PixelMask patch_mask{};   // patch region (all false without patch)
};

struct PlantedSplit {
  std::vector<LabeledImage> images;
  std::vector<PlantedTruth> truth;
};

struct PlantedDataset {
  PlantedConfig config;
  std::uint64_t seed = 0;
  PlantedSplit train;
  PlantedSplit test;
};

/// Preset with a fully correlated patch on 90% of training images and a 30%
/// interference subset in a 900-image test split. A model trained on it leans
/// on the patch often enough to misclassify interference images, while the
/// glyph alone still carries the label.
PlantedConfig confounded_planted_config();

/// Throws Errc::config for invalid settings (glyph/patch overlap, fractions
/// outside [0,1], unsupported class count, patch outside the image).
void validate(const PlantedConfig& cfg);

PlantedDataset generate_planted_dataset(const PlantedConfig& cfg, std::uint64_t seed);

/// 8x8 glyph pattern for a class (filled square, plus sign, main diagonal).
bool glyph_pixel(std::size_t cls, std::size_t row, std::size_t col, std::size_t glyph_size);

/// Persists `dir/train.bin`, `dir/test.bin` (CIFAR record format) and
/// `dir/manifest.json` (config, seed, per-image masks and confound truth).
void save_planted_dataset(const PlantedDataset& data, const std::filesystem::path& dir);
PlantedDataset load_planted_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const PlantedConfig& cfg);
PlantedConfig planted_config_from_json(const nlohmann::json& j);

}  // namespace misclass
