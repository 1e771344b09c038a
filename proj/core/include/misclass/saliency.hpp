#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "misclass/classifier.hpp"

namespace misclass {

enum class SaliencySource { gradient, occlusion };

const char* to_string(SaliencySource s);
SaliencySource saliency_source_from_string(const std::string& s);

/// Nonnegative 32x32 attribution map, row-major.
struct SaliencyMap {
  std::array<double, kPlanePixels> values{};
  SaliencySource source = SaliencySource::gradient;
  std::size_t target_class = 0;

  double at(std::size_t row, std::size_t col) const { return values[row * kImageSide + col]; }
};

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// The selected pixels, sorted by descending saliency, ties in row-major order.
struct PixelSet {
  std::vector<Pixel> pixels;
  double fraction = 0.0;
};

struct OcclusionConfig {
  std::size_t patch_size = 3;  // odd
  std::size_t stride = 1;
  std::uint8_t fill = 0;       // raw intensity written into the patch
};

/// Target = predicted class; value = max over channels of |d score / d pixel|.
SaliencyMap gradient_saliency(const ModelParams& params, const NormalizedImage& image);

/// Map derived from an already computed input gradient (channel-max of |g|).
SaliencyMap saliency_from_gradient(std::span<const double> gradient, std::size_t target_class);

using ScoreFunction = std::function<ScoreVector(const NormalizedImage&)>;

/// Model-agnostic saliency: for each patch centre on the stride grid, fill the
/// (clipped) patch in raw space, renormalize and rescore. A pixel's value is the
/// largest drop of the base predicted-class score over the patches covering it,
/// floored at 0.
SaliencyMap occlusion_saliency(const ScoreFunction& scorer, const RawImage& image, const ChannelStats& stats,
                               const OcclusionConfig& cfg = {});

/// ceil(p * 1024) highest pixels. Throws Errc::invalid_argument unless 0 < p <= 1.
PixelSet top_fraction(const SaliencyMap& map, double p);

std::size_t top_count(double p);

std::string saliency_to_csv(const SaliencyMap& map);
/// Grayscale PNG bytes, min-max scaled (constant maps render black).
std::vector<std::uint8_t> saliency_to_png(const SaliencyMap& map);
nlohmann::json to_json(const SaliencyMap& map);

}  // namespace misclass
