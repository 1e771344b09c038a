#include "misclass/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "misclass/image_io.hpp"

namespace misclass {

NormalizedImage NormalizedImage::from_values(std::span<const double> values) {
  if (values.size() != kImageValues) {
    throw Error(Errc::shape_mismatch, "normalized image needs 3072 values, got " +
                                          std::to_string(values.size()));
  }
  NormalizedImage out;
  for (std::size_t i = 0; i < kImageValues; ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(Errc::invalid_argument, "normalized image value " + std::to_string(i) + " is not finite");
    }
    out.values_[i] = values[i];
  }
  return out;
}

std::vector<LabeledImage> parse_cifar10(std::span<const std::uint8_t> bytes,
                                        const std::string& id_prefix, std::size_t num_classes) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error(Errc::truncated_file, "'" + id_prefix + "' has " + std::to_string(bytes.size()) +
                                          " bytes, not a multiple of 3073");
  }
  const std::size_t count = bytes.size() / kCifarRecordBytes;
  std::vector<LabeledImage> images(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto record = bytes.subspan(k * kCifarRecordBytes, kCifarRecordBytes);
    if (record[0] >= num_classes) {
      throw Error(Errc::invalid_label, "record " + std::to_string(k) + " of '" + id_prefix +
                                           "' has label " + std::to_string(record[0]));
    }
    images[k].label = record[0];
    std::copy(record.begin() + 1, record.end(), images[k].image.pixels.begin());
    images[k].id = id_prefix + ":" + std::to_string(k);
  }
  return images;
}

std::vector<LabeledImage> load_cifar10(const std::filesystem::path& path, std::size_t num_classes) {
  const auto bytes = image_io::read_file(path);
  return parse_cifar10(bytes, path.stem().string(), num_classes);
}

void save_cifar10(std::span<const LabeledImage> images, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(images.size() * kCifarRecordBytes);
  for (const auto& img : images) {
    bytes.push_back(img.label);
    bytes.insert(bytes.end(), img.image.pixels.begin(), img.image.pixels.end());
  }
  image_io::write_file(path, bytes);
}

ChannelStats compute_channel_stats(std::span<const LabeledImage> images, double std_floor) {
  if (std_floor < 0.0 || !std::isfinite(std_floor)) {
    throw Error(Errc::invalid_argument, "std floor must be a finite non-negative value");
  }
  if (images.empty()) throw Error(Errc::empty_input, "channel stats need at least one image");

  // Sums of 8-bit values and their squares are exact in 64-bit integers for
  // any realistic dataset size, so the result is independent of image order.
  std::array<std::uint64_t, kChannels> sum{};
  std::array<std::uint64_t, kChannels> sum_sq{};
  std::array<std::uint8_t, kChannels> lo;
  std::array<std::uint8_t, kChannels> hi{};
  lo.fill(255);
  for (const auto& img : images) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      std::uint64_t s = 0;
      std::uint64_t sq = 0;
      for (std::size_t i = 0; i < kPlanePixels; ++i) {
        const std::uint8_t v = img.image.pixels[c * kPlanePixels + i];
        s += v;
        sq += static_cast<std::uint64_t>(v) * v;
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
      }
      sum[c] += s;
      sum_sq[c] += sq;
    }
  }

  const long double n = static_cast<long double>(images.size()) * kPlanePixels;
  ChannelStats stats;
  for (std::size_t c = 0; c < kChannels; ++c) {
    const long double mean = static_cast<long double>(sum[c]) / n;
    const long double var = std::max(0.0L, static_cast<long double>(sum_sq[c]) / n - mean * mean);
    stats.mean[c] = static_cast<double>(mean);
    stats.std[c] = static_cast<double>(std::sqrt(var));
    if (std_floor > 0.0) {
      stats.std[c] = std::max(stats.std[c], std_floor);
    } else if (lo[c] == hi[c]) {
      throw Error(Errc::degenerate_channel,
                  "channel " + std::to_string(c) + " is constant (std = 0)");
    }
  }
  return stats;
}

NormalizedImage normalize_image(const RawImage& image, const ChannelStats& stats) {
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!(stats.std[c] > 0.0) || !std::isfinite(stats.std[c]) || !std::isfinite(stats.mean[c])) {
      throw Error(Errc::degenerate_channel, "channel " + std::to_string(c) + " has non-positive std");
    }
  }
  NormalizedImage out;
  for (std::size_t c = 0; c < kChannels; ++c) {
    for (std::size_t i = 0; i < kPlanePixels; ++i) {
      const std::size_t k = c * kPlanePixels + i;
      out.values_[k] = (static_cast<double>(image.pixels[k]) - stats.mean[c]) / stats.std[c];
    }
  }
  return out;
}

std::vector<NormalizedImage> normalize_all(std::span<const LabeledImage> images,
                                           const ChannelStats& stats) {
  std::vector<NormalizedImage> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(normalize_image(img.image, stats));
  return out;
}

nlohmann::json to_json(const ChannelStats& stats) {
  return {{"mean", stats.mean}, {"std", stats.std}};
}

ChannelStats channel_stats_from_json(const nlohmann::json& j) {
  ChannelStats s;
  try {
    s.mean = j.at("mean").get<std::array<double, kChannels>>();
    s.std = j.at("std").get<std::array<double, kChannels>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("channel stats: ") + e.what());
  }
  return s;
}

// ---- export ----------------------------------------------------------------

ImageFormat image_format_from_path(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (ext == ".png") return ImageFormat::png;
  if (ext == ".ppm" || ext == ".pnm") return ImageFormat::ppm;
  throw Error(Errc::invalid_argument, "unknown image extension '" + ext + "'");
}

namespace {

image_io::Image8 to_interleaved(const RawImage& image) {
  image_io::Image8 out{kImageSide, kImageSide, kChannels, std::vector<std::uint8_t>(kImageValues)};
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      out.data[i * kChannels + c] = image.pixels[c * kPlanePixels + i];
    }
  }
  return out;
}

}  // namespace

void export_image(const RawImage& image, const std::filesystem::path& path, ImageFormat format) {
  const auto interleaved = to_interleaved(image);
  const auto bytes = format == ImageFormat::png ? image_io::encode_png(interleaved)
                                                : image_io::encode_pnm(interleaved);
  image_io::write_file(path, bytes);
}

RawImage to_displayable(const NormalizedImage& image) {
  RawImage out;
  const auto values = image.values();
  for (std::size_t c = 0; c < kChannels; ++c) {
    const auto plane = values.subspan(c * kPlanePixels, kPlanePixels);
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < kPlanePixels; ++i) {
      const double scaled = range > 0.0 ? (plane[i] - *lo) / range * 255.0 : 0.0;
      out.pixels[c * kPlanePixels + i] = static_cast<std::uint8_t>(std::lround(std::clamp(scaled, 0.0, 255.0)));
    }
  }
  return out;
}

void export_image(const NormalizedImage& image, const std::filesystem::path& path,
                  ImageFormat format) {
  export_image(to_displayable(image), path, format);
}

RawImage read_image(const std::filesystem::path& path) {
  const auto bytes = image_io::read_file(path);
  const auto decoded = image_format_from_path(path) == ImageFormat::png ? image_io::decode_png(bytes)
                                                                        : image_io::decode_pnm(bytes);
  if (decoded.width != kImageSide || decoded.height != kImageSide || decoded.channels != kChannels) {
    throw Error(Errc::shape_mismatch, "'" + path.string() + "' is not a 32x32 RGB image");
  }
  RawImage out;
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) {
      out.pixels[c * kPlanePixels + i] = decoded.data[i * kChannels + c];
    }
  }
  return out;
}

}  // namespace misclass
