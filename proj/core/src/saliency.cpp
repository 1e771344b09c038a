#include "misclass/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "format.hpp"
#include "misclass/image_io.hpp"

namespace misclass {

const char* to_string(SaliencySource s) { return s == SaliencySource::gradient ? "gradient" : "occlusion"; }

SaliencySource saliency_source_from_string(const std::string& s) {
  if (s == "gradient") return SaliencySource::gradient;
  if (s == "occlusion") return SaliencySource::occlusion;
  throw Error(Errc::invalid_argument, "saliency method must be 'gradient' or 'occlusion', got '" + s + "'");
}

SaliencyMap saliency_from_gradient(std::span<const double> gradient, std::size_t target_class) {
  if (gradient.size() != kImageValues) throw Error(Errc::shape_mismatch, "gradient must hold 3072 values");
  SaliencyMap map;
  map.source = SaliencySource::gradient;
  map.target_class = target_class;
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    double m = 0.0;
    for (std::size_t c = 0; c < kChannels; ++c) m = std::max(m, std::abs(gradient[c * kPlanePixels + i]));
    map.values[i] = m;
  }
  return map;
}

SaliencyMap gradient_saliency(const ModelParams& params, const NormalizedImage& image) {
  const auto pred = predict(params, image);
  return saliency_from_gradient(input_gradient(params, image, pred.label), pred.label);
}

SaliencyMap occlusion_saliency(const ScoreFunction& scorer, const RawImage& image, const ChannelStats& stats,
                               const OcclusionConfig& cfg) {
  if (cfg.patch_size == 0 || cfg.patch_size % 2 == 0 || cfg.patch_size > kImageSide) {
    throw Error(Errc::invalid_argument, "occlusion patch size must be odd and at most 32");
  }
  if (cfg.stride == 0) throw Error(Errc::invalid_argument, "occlusion stride must be at least 1");

  const auto base = scorer(normalize_image(image, stats));
  const std::size_t target = argmax(base.values);
  const double base_score = base.values[target];
  const std::size_t half = cfg.patch_size / 2;

  SaliencyMap map;
  map.source = SaliencySource::occlusion;
  map.target_class = target;
  map.values.fill(0.0);
  for (std::size_t r = 0; r < kImageSide; r += cfg.stride) {
    for (std::size_t c = 0; c < kImageSide; c += cfg.stride) {
      const std::size_t r0 = r >= half ? r - half : 0;
      const std::size_t c0 = c >= half ? c - half : 0;
      const std::size_t r1 = std::min(kImageSide, r + half + 1);
      const std::size_t c1 = std::min(kImageSide, c + half + 1);
      RawImage occluded = image;
      for (std::size_t rr = r0; rr < r1; ++rr) {
        for (std::size_t cc = c0; cc < c1; ++cc) {
          for (std::size_t ch = 0; ch < kChannels; ++ch) occluded.at(ch, rr, cc) = cfg.fill;
        }
      }
      const double drop = base_score - scorer(normalize_image(occluded, stats)).values.at(target);
      const double effect = std::max(0.0, drop);
      for (std::size_t rr = r0; rr < r1; ++rr) {
        for (std::size_t cc = c0; cc < c1; ++cc) {
          auto& v = map.values[rr * kImageSide + cc];
          v = std::max(v, effect);
        }
      }
    }
  }
  return map;
}

std::size_t top_count(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(Errc::invalid_argument, "top fraction must lie in (0,1]");
  // Guard against p*1024 landing a rounding error above an integer.
  const double raw = p * static_cast<double>(kPlanePixels);
  const double nearest = std::round(raw);
  const auto n = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
  return std::clamp<std::size_t>(static_cast<std::size_t>(n), 1, kPlanePixels);
}

PixelSet top_fraction(const SaliencyMap& map, double p) {
  const std::size_t n = top_count(p);
  std::vector<std::size_t> order(kPlanePixels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.values[a] > map.values[b]; });
  PixelSet out;
  out.fraction = p;
  out.pixels.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.pixels.push_back({order[k] / kImageSide, order[k] % kImageSide});
  return out;
}

std::string saliency_to_csv(const SaliencyMap& map) {
  std::ostringstream out;
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t c = 0; c < kImageSide; ++c) {
      if (c) out << ",";
      out << detail::fmt_double(map.at(r, c));
    }
    out << "\n";
  }
  return out.str();
}

std::vector<std::uint8_t> saliency_to_png(const SaliencyMap& map) {
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  image_io::Image8 img{kImageSide, kImageSide, 1, std::vector<std::uint8_t>(kPlanePixels)};
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    const double s = range > 0.0 ? (map.values[i] - *lo) / range * 255.0 : 0.0;
    img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s, 0.0, 255.0)));
  }
  return image_io::encode_png(img);
}

nlohmann::json to_json(const SaliencyMap& map) {
  nlohmann::json grid = nlohmann::json::array();
  for (std::size_t r = 0; r < kImageSide; ++r) {
    grid.push_back(std::vector<double>(map.values.begin() + static_cast<std::ptrdiff_t>(r * kImageSide),
                                       map.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * kImageSide)));
  }
  return {{"source", to_string(map.source)}, {"target_class", map.target_class}, {"grid", grid}};
}

}  // namespace misclass
