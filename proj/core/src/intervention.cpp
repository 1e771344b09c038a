#include "misclass/intervention.hpp"

#include <algorithm>
#include <sstream>

#include "format.hpp"
#include "misclass/mask_io.hpp"

namespace misclass {

const char* to_string(ErasureSpace s) { return s == ErasureSpace::raw ? "raw" : "normalized"; }

ErasureSpace erasure_space_from_string(const std::string& s) {
  if (s == "raw") return ErasureSpace::raw;
  if (s == "normalized") return ErasureSpace::normalized;
  throw Error(Errc::invalid_argument, "erasure space must be 'raw' or 'normalized', got '" + s + "'");
}

void validate(const InterventionSpec& spec) {
  if (spec.box_width < 1 || spec.box_height < 1) throw Error(Errc::invalid_argument, "box sizes must be >= 1");
  top_count(spec.top_p);
}

BoundingBox make_box(Pixel anchor, std::size_t width, std::size_t height) {
  if (width < 1 || height < 1) throw Error(Errc::invalid_argument, "box sizes must be >= 1");
  if (anchor.row >= kImageSide || anchor.col >= kImageSide) throw Error(Errc::invalid_argument, "anchor outside the image");
  BoundingBox b;
  b.center = anchor;
  b.width = width;
  b.height = height;
  const std::size_t up = (height - 1) / 2;
  const std::size_t left = (width - 1) / 2;
  b.row0 = anchor.row >= up ? anchor.row - up : 0;
  b.col0 = anchor.col >= left ? anchor.col - left : 0;
  b.row1 = std::min(kImageSide, anchor.row + height / 2 + 1);
  b.col1 = std::min(kImageSide, anchor.col + width / 2 + 1);
  return b;
}

std::vector<BoundingBox> anchor_boxes(const PixelSet& anchors, std::size_t width, std::size_t height,
                                      const std::optional<PixelMask>& spare_mask) {
  std::vector<BoundingBox> boxes;
  boxes.reserve(anchors.pixels.size());
  for (const auto& a : anchors.pixels) {
    if (spare_mask && (*spare_mask)[a.row * kImageSide + a.col]) continue;
    boxes.push_back(make_box(a, width, height));
  }
  return boxes;
}

PixelMask erasure_mask(std::span<const BoundingBox> boxes, const std::optional<PixelMask>& spare_mask) {
  PixelMask m = empty_mask();
  for (const auto& b : boxes) {
    for (std::size_t r = b.row0; r < b.row1; ++r) {
      for (std::size_t c = b.col0; c < b.col1; ++c) m[r * kImageSide + c] = true;
    }
  }
  if (spare_mask) {
    for (std::size_t i = 0; i < kPlanePixels; ++i) m[i] = m[i] && !(*spare_mask)[i];
  }
  return m;
}

RawImage apply_erasure(const RawImage& image, std::span<const BoundingBox> boxes,
                       const std::optional<PixelMask>& spare_mask) {
  const PixelMask erase = erasure_mask(boxes, spare_mask);
  RawImage out = image;
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    if (!erase[i]) continue;
    for (std::size_t c = 0; c < kChannels; ++c) out.pixels[c * kPlanePixels + i] = 0;
  }
  return out;
}

InterventionBaseline prepare_intervention(const ModelParams& params, const ChannelStats& stats,
                                          const LabeledImage& image, const std::string& model_id) {
  if (image.label >= params.num_classes) {
    throw Error(Errc::invalid_label, "image '" + image.id + "' has a label outside the model's classes");
  }
  const auto x = normalize_image(image.image, stats);
  auto pred = predict(params, x);
  auto saliency = saliency_from_gradient(input_gradient(params, x, pred.label), pred.label);
  ClassificationRecord before{image.id, image.label, pred.label, std::move(pred.scores), model_id};
  return {image, std::move(before), saliency};
}

InterventionResult complete_intervention(const ModelParams& params, const ChannelStats& stats,
                                         const InterventionBaseline& baseline, const InterventionSpec& spec) {
  validate(spec);
  InterventionResult r;
  r.before = baseline.before;
  r.anchors = top_fraction(baseline.saliency, spec.top_p);
  r.boxes = anchor_boxes(r.anchors, spec.box_width, spec.box_height, spec.spare_mask);
  const PixelMask erase = erasure_mask(r.boxes, spec.spare_mask);
  r.erased_pixel_count = mask_count(erase);

  Prediction after;
  if (spec.space == ErasureSpace::raw) {
    const RawImage erased = apply_erasure(baseline.image.image, r.boxes, spec.spare_mask);
    after = predict(params, normalize_image(erased, stats));
  } else {
    const auto x = normalize_image(baseline.image.image, stats);
    std::vector<double> values(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < kPlanePixels; ++i) {
      if (!erase[i]) continue;
      for (std::size_t c = 0; c < kChannels; ++c) values[c * kPlanePixels + i] = 0.0;
    }
    after = predict(params, NormalizedImage::from_values(values));
  }
  r.after = {baseline.before.image_id, baseline.before.true_label, after.label, std::move(after.scores),
             baseline.before.model_id};
  r.flipped_to_true = r.after.predicted_label == r.after.true_label;
  return r;
}

InterventionResult do_intervention(const ModelParams& params, const ChannelStats& stats, const LabeledImage& image,
                                   const InterventionSpec& spec, const std::string& model_id) {
  validate(spec);
  return complete_intervention(params, stats, prepare_intervention(params, stats, image, model_id), spec);
}

std::vector<SweepRow> sweep(const ModelParams& params, const ChannelStats& stats,
                            std::span<const InterventionSubject> misclassified,
                            std::span<const InterventionSubject> controls, const SweepGrid& grid,
                            const std::string& model_id) {
  if (grid.top_p.empty() || grid.widths.empty() || grid.heights.empty()) {
    throw Error(Errc::invalid_argument, "sweep grid must have at least one value per axis");
  }
  auto baselines = [&](std::span<const InterventionSubject> subjects) {
    std::vector<InterventionBaseline> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) out.push_back(prepare_intervention(params, stats, s.image, model_id));
    return out;
  };
  const auto mis_base = baselines(misclassified);
  const auto ctl_base = baselines(controls);

  std::vector<SweepRow> rows;
  for (double p : grid.top_p) {
    for (std::size_t w : grid.widths) {
      for (std::size_t h : grid.heights) {
        SweepRow row;
        row.top_p = p;
        row.width = w;
        row.height = h;
        row.misclassified = misclassified.size();
        row.controls = controls.size();
        double erased = 0.0;
        for (std::size_t k = 0; k < misclassified.size(); ++k) {
          const InterventionSpec spec{p, w, h, misclassified[k].spare_mask, grid.space};
          const auto res = complete_intervention(params, stats, mis_base[k], spec);
          if (res.flipped_to_true) ++row.flipped;
          erased += static_cast<double>(res.erased_pixel_count);
        }
        for (std::size_t k = 0; k < controls.size(); ++k) {
          const InterventionSpec spec{p, w, h, controls[k].spare_mask, grid.space};
          const auto res = complete_intervention(params, stats, ctl_base[k], spec);
          if (res.after.predicted_label != res.after.true_label) ++row.collateral;
        }
        if (row.misclassified > 0) {
          row.flip_rate = static_cast<double>(row.flipped) / static_cast<double>(row.misclassified);
          row.mean_erased_pixels = erased / static_cast<double>(row.misclassified);
        }
        if (row.controls > 0) {
          row.collateral_rate = static_cast<double>(row.collateral) / static_cast<double>(row.controls);
        }
        rows.push_back(row);
      }
    }
  }
  return rows;
}

nlohmann::json to_json(const BoundingBox& box) {
  return {{"center", {box.center.row, box.center.col}},
          {"width", box.width},
          {"height", box.height},
          {"rows", {box.row0, box.row1}},
          {"cols", {box.col0, box.col1}}};
}

nlohmann::json to_json(const InterventionResult& result) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const auto& a : result.anchors.pixels) anchors.push_back({a.row, a.col});
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : result.boxes) boxes.push_back(to_json(b));
  return {{"image_id", result.before.image_id},
          {"before", to_json(result.before)},
          {"after", to_json(result.after)},
          {"top_p", result.anchors.fraction},
          {"anchors", anchors},
          {"boxes", boxes},
          {"erased_pixel_count", result.erased_pixel_count},
          {"flipped_to_true", result.flipped_to_true}};
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "p,dx,dy,flip_rate,collateral_rate,mean_erased_pixels,misclassified,flipped,controls,collateral\n";
  for (const auto& r : rows) {
    out << detail::fmt_double(r.top_p) << "," << r.width << "," << r.height << "," << detail::fmt_double(r.flip_rate)
        << "," << detail::fmt_double(r.collateral_rate) << "," << detail::fmt_double(r.mean_erased_pixels) << ","
        << r.misclassified << "," << r.flipped << "," << r.controls << "," << r.collateral << "\n";
  }
  return out.str();
}

}  // namespace misclass
