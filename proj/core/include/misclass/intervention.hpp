#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/saliency.hpp"

namespace misclass {

/// Box of width x height (columns x rows) centred on an anchor pixel and
/// clipped to the image. Even sizes extend one extra pixel right/down.
/// The extent is half-open: rows [row0, row1), cols [col0, col1).
struct BoundingBox {
  Pixel center;
  std::size_t width = 1;
  std::size_t height = 1;
  std::size_t row0 = 0, row1 = 0, col0 = 0, col1 = 0;

  bool contains(std::size_t row, std::size_t col) const {
    return row >= row0 && row < row1 && col >= col0 && col < col1;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Where erased pixels are zeroed: raw intensities (then renormalized with
/// the training stats) or directly in normalized space.
enum class ErasureSpace { raw, normalized };

const char* to_string(ErasureSpace s);
ErasureSpace erasure_space_from_string(const std::string& s);

struct InterventionSpec {
  double top_p = 0.05;
  std::size_t box_width = 7;   // dx
  std::size_t box_height = 7;  // dy
  std::optional<PixelMask> spare_mask;
  ErasureSpace space = ErasureSpace::raw;
};

/// Throws Errc::invalid_argument for box sizes < 1 or p outside (0,1].
void validate(const InterventionSpec& spec);

struct InterventionResult {
  ClassificationRecord before;
  ClassificationRecord after;
  PixelSet anchors;
  std::vector<BoundingBox> boxes;
  std::size_t erased_pixel_count = 0;
  bool flipped_to_true = false;
};

BoundingBox make_box(Pixel anchor, std::size_t width, std::size_t height);

/// One box per anchor; anchors inside the spare mask yield no box.
std::vector<BoundingBox> anchor_boxes(const PixelSet& anchors, std::size_t width, std::size_t height,
                                      const std::optional<PixelMask>& spare_mask);

/// Pixels that erasure zeroes: union of box extents minus the spare mask.
PixelMask erasure_mask(std::span<const BoundingBox> boxes, const std::optional<PixelMask>& spare_mask);

/// Zeroes (all channels) every pixel in the union of boxes that is not spared.
RawImage apply_erasure(const RawImage& image, std::span<const BoundingBox> boxes,
                       const std::optional<PixelMask>& spare_mask);

/// Model output and gradient saliency for the unmodified image; shared by
/// every spec evaluated on the same image.
struct InterventionBaseline {
  LabeledImage image;
  ClassificationRecord before;
  SaliencyMap saliency;
};

InterventionBaseline prepare_intervention(const ModelParams& params, const ChannelStats& stats,
                                          const LabeledImage& image, const std::string& model_id = "builtin");

InterventionResult complete_intervention(const ModelParams& params, const ChannelStats& stats,
                                         const InterventionBaseline& baseline, const InterventionSpec& spec);

/// predict -> gradient saliency -> top fraction -> boxes -> erase -> renormalize -> predict.
InterventionResult do_intervention(const ModelParams& params, const ChannelStats& stats,
                                   const LabeledImage& image, const InterventionSpec& spec,
                                   const std::string& model_id = "builtin");

struct InterventionSubject {
  LabeledImage image;
  std::optional<PixelMask> spare_mask;
};

struct SweepGrid {
  std::vector<double> top_p = {0.05};
  std::vector<std::size_t> widths = {7};
  std::vector<std::size_t> heights = {7};
  ErasureSpace space = ErasureSpace::raw;
};

struct SweepRow {
  double top_p = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;
  double flip_rate = 0.0;        // misclassified subset flipped to the true class
  double collateral_rate = 0.0;  // control subset newly misclassified
  double mean_erased_pixels = 0.0;  // over the misclassified subset
  std::size_t misclassified = 0;
  std::size_t flipped = 0;
  std::size_t controls = 0;
  std::size_t collateral = 0;
};

/// Rows ordered by p, then width, then height. Empty subsets give rate 0.
std::vector<SweepRow> sweep(const ModelParams& params, const ChannelStats& stats,
                            std::span<const InterventionSubject> misclassified,
                            std::span<const InterventionSubject> controls, const SweepGrid& grid,
                            const std::string& model_id = "builtin");

nlohmann::json to_json(const BoundingBox& box);
nlohmann::json to_json(const InterventionResult& result);
std::string sweep_to_csv(std::span<const SweepRow> rows);

}  // namespace misclass
