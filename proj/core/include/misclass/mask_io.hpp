#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "misclass/common.hpp"

namespace misclass {

/// Run-length mask encoding: {"width":32,"height":32,"runs":[[start,length],...]}
/// where start indexes row-major pixels that are set.
nlohmann::json mask_to_rle(const PixelMask& mask);
PixelMask mask_from_rle(const nlohmann::json& j);

/// Loads a spare mask from a 32x32 PNG (nonzero = set) or a run-length JSON
/// file, chosen by extension.
PixelMask load_mask(const std::filesystem::path& path);
void save_mask_png(const PixelMask& mask, const std::filesystem::path& path);

std::size_t mask_count(const PixelMask& mask);

}  // namespace misclass
