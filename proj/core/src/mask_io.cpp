#include "misclass/mask_io.hpp"

#include <algorithm>

#include "misclass/image_io.hpp"

namespace misclass {

nlohmann::json mask_to_rle(const PixelMask& mask) {
  nlohmann::json runs = nlohmann::json::array();
  std::size_t i = 0;
  while (i < kPlanePixels) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < kPlanePixels && mask[i]) ++i;
    runs.push_back({start, i - start});
  }
  return {{"width", kImageSide}, {"height", kImageSide}, {"runs", runs}};
}

PixelMask mask_from_rle(const nlohmann::json& j) {
  PixelMask mask = empty_mask();
  try {
    if (j.at("width").get<std::size_t>() != kImageSide || j.at("height").get<std::size_t>() != kImageSide) {
      throw Error(Errc::shape_mismatch, "mask must be 32x32");
    }
    for (const auto& run : j.at("runs")) {
      const auto start = run.at(0).get<std::size_t>();
      const auto length = run.at(1).get<std::size_t>();
      if (start > kPlanePixels || length > kPlanePixels - start) {
        throw Error(Errc::schema, "mask run [" + std::to_string(start) + ", " +
                                      std::to_string(length) + "] exceeds 1024 pixels");
      }
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(start), length, true);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("mask json: ") + e.what());
  }
  return mask;
}

PixelMask load_mask(const std::filesystem::path& path) {
  const auto bytes = image_io::read_file(path);
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::schema, "mask '" + path.string() + "': " + e.what());
    }
    return mask_from_rle(j);
  }
  const auto png = image_io::decode_png(bytes);
  if (png.width != kImageSide || png.height != kImageSide) {
    throw Error(Errc::shape_mismatch, "mask '" + path.string() + "' must be 32x32");
  }
  PixelMask mask = empty_mask();
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    for (std::size_t c = 0; c < png.channels; ++c) {
      if (png.data[i * png.channels + c] != 0) mask[i] = true;
    }
  }
  return mask;
}

void save_mask_png(const PixelMask& mask, const std::filesystem::path& path) {
  image_io::Image8 img{kImageSide, kImageSide, 1, std::vector<std::uint8_t>(kPlanePixels)};
  for (std::size_t i = 0; i < kPlanePixels; ++i) img.data[i] = mask[i] ? 255 : 0;
  image_io::write_file(path, image_io::encode_png(img));
}

std::size_t mask_count(const PixelMask& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

}  // namespace misclass
