#include <algorithm>
#include <fstream>

#include "misclass/dataset.hpp"
#include "misclass/image_io.hpp"
#include "misclass/mask_io.hpp"
#include "rng.hpp"

namespace misclass {

namespace {

struct Region {
  std::size_t row0, col0, size;
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row0 && r < row0 + size && c >= col0 && c < col0 + size;
  }
};

Region glyph_region(const PlantedConfig& cfg) {
  const std::size_t offset = (kImageSide - cfg.glyph_size) / 2;
  return {offset, offset, cfg.glyph_size};
}

Region patch_region(const PlantedConfig& cfg) {
  const std::size_t far = kImageSide - cfg.patch_size;
  switch (cfg.corner) {
    case Corner::top_left: return {0, 0, cfg.patch_size};
    case Corner::top_right: return {0, far, cfg.patch_size};
    case Corner::bottom_left: return {far, 0, cfg.patch_size};
    case Corner::bottom_right: return {far, far, cfg.patch_size};
  }
  return {0, 0, cfg.patch_size};
}

PixelMask region_mask(const Region& region) {
  PixelMask m = empty_mask();
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t c = 0; c < kImageSide; ++c) m[r * kImageSide + c] = region.contains(r, c);
  }
  return m;
}

const char* corner_name(Corner c) {
  switch (c) {
    case Corner::top_left: return "top_left";
    case Corner::top_right: return "top_right";
    case Corner::bottom_left: return "bottom_left";
    case Corner::bottom_right: return "bottom_right";
  }
  return "top_left";
}

Corner corner_from_name(const std::string& name) {
  for (Corner c : {Corner::top_left, Corner::top_right, Corner::bottom_left, Corner::bottom_right}) {
    if (name == corner_name(c)) return c;
  }
  throw Error(Errc::config, "unknown corner '" + name + "'");
}

void check_fraction(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(Errc::config, std::string(name) + " must lie in [0,1]");
  }
}

class Generator {
public:
  Generator(const PlantedConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), rng_(seed), glyph_(glyph_region(cfg)), patch_(patch_region(cfg)),
        object_mask_(region_mask(glyph_)), patch_mask_(region_mask(patch_)) {}

  PlantedSplit split(std::size_t count, const std::string& prefix, bool allow_interference) {
    PlantedSplit out;
    out.images.reserve(count);
    out.truth.reserve(count);
    const auto classes = cfg_.num_classes;
    for (std::size_t k = 0; k < count; ++k) {
      const auto label = static_cast<std::uint8_t>(k % classes);
      PlantedTruth truth;
      truth.object_mask = object_mask_;
      truth.patch_mask = empty_mask();

      if (allow_interference && rng_.bernoulli(cfg_.interference_fraction)) {
        // Patch shows any class other than the glyph's.
        const auto offset = 1 + rng_.below(classes - 1);
        truth.has_patch = true;
        truth.interference = true;
        truth.patch_class = static_cast<int>((label + offset) % classes);
      } else if (rng_.bernoulli(cfg_.patch_fraction)) {
        truth.has_patch = true;
        truth.patch_class = rng_.bernoulli(cfg_.correlation)
                                ? static_cast<int>((label + cfg_.confound_shift) % classes)
                                : static_cast<int>(rng_.below(classes));
      }
      if (truth.has_patch) truth.patch_mask = patch_mask_;

      LabeledImage img;
      img.label = label;
      img.id = prefix + ":" + std::to_string(k);
      paint(img.image, label, truth);
      out.images.push_back(std::move(img));
      out.truth.push_back(truth);
    }
    return out;
  }

private:
  void paint(RawImage& image, std::size_t label, const PlantedTruth& truth) {
    const auto noise = static_cast<std::uint64_t>(cfg_.noise_amplitude) + 1;
    for (auto& v : image.pixels) v = static_cast<std::uint8_t>(rng_.below(noise));
    for (std::size_t r = 0; r < glyph_.size; ++r) {
      for (std::size_t c = 0; c < glyph_.size; ++c) {
        if (!glyph_pixel(label, r, c, glyph_.size)) continue;
        for (std::size_t ch = 0; ch < kChannels; ++ch) {
          auto& px = image.at(ch, glyph_.row0 + r, glyph_.col0 + c);
          px = static_cast<std::uint8_t>(std::min<unsigned>(255u, cfg_.glyph_intensity + px));
        }
      }
    }
    if (truth.has_patch) {
      const auto channel = static_cast<std::size_t>(truth.patch_class) % kChannels;
      for (std::size_t r = 0; r < patch_.size; ++r) {
        for (std::size_t c = 0; c < patch_.size; ++c) {
          image.at(channel, patch_.row0 + r, patch_.col0 + c) = cfg_.patch_intensity;
        }
      }
    }
  }

  const PlantedConfig& cfg_;
  detail::Rng rng_;
  Region glyph_;
  Region patch_;
  PixelMask object_mask_;
  PixelMask patch_mask_;
};

nlohmann::json truth_to_json(const LabeledImage& img, const PlantedTruth& t) {
  return {{"id", img.id},
          {"label", img.label},
          {"has_patch", t.has_patch},
          {"patch_class", t.patch_class},
          {"interference", t.interference},
          {"object_mask", mask_to_rle(t.object_mask)},
          {"patch_mask", mask_to_rle(t.patch_mask)}};
}

PlantedSplit load_split(const std::filesystem::path& bin, const nlohmann::json& entries,
                        std::size_t num_classes) {
  PlantedSplit split;
  split.images = load_cifar10(bin, num_classes);
  if (entries.size() != split.images.size()) {
    throw Error(Errc::consistency, "manifest lists " + std::to_string(entries.size()) +
                                       " images but '" + bin.string() + "' holds " +
                                       std::to_string(split.images.size()));
  }
  split.truth.reserve(entries.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (e.at("id").get<std::string>() != split.images[k].id ||
        e.at("label").get<int>() != split.images[k].label) {
      throw Error(Errc::consistency, "manifest entry " + std::to_string(k) + " does not match '" +
                                         bin.string() + "'");
    }
    PlantedTruth t;
    t.has_patch = e.at("has_patch").get<bool>();
    t.patch_class = e.at("patch_class").get<int>();
    t.interference = e.at("interference").get<bool>();
    t.object_mask = mask_from_rle(e.at("object_mask"));
    t.patch_mask = mask_from_rle(e.at("patch_mask"));
    split.truth.push_back(t);
  }
  return split;
}

}  // namespace

bool glyph_pixel(std::size_t cls, std::size_t row, std::size_t col, std::size_t glyph_size) {
  const std::size_t mid = glyph_size / 2;
  switch (cls) {
    case 0: return true;                                            // filled square
    case 1: return row + 1 == mid || row == mid || col + 1 == mid || col == mid;  // plus sign
    case 2: return row == col || row == col + 1 || col == row + 1;  // main diagonal band
    default: return false;
  }
}

PlantedConfig confounded_planted_config() {
  PlantedConfig cfg;
  cfg.test_size = 900;
  cfg.patch_fraction = 0.9;
  cfg.correlation = 1.0;
  cfg.interference_fraction = 0.3;
  return cfg;
}

void validate(const PlantedConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.num_classes > 3) {
    throw Error(Errc::config, "planted datasets support 2 or 3 classes (one glyph each)");
  }
  check_fraction(cfg.patch_fraction, "patch_fraction");
  check_fraction(cfg.correlation, "correlation");
  check_fraction(cfg.interference_fraction, "interference_fraction");
  if (cfg.patch_size == 0 || cfg.patch_size > kImageSide) throw Error(Errc::config, "patch does not fit inside 32x32");
  if (cfg.glyph_size < 2 || cfg.glyph_size > kImageSide) throw Error(Errc::config, "glyph does not fit inside 32x32");
  const Region g = glyph_region(cfg);
  const Region p = patch_region(cfg);
  const bool rows_overlap = g.row0 < p.row0 + p.size && p.row0 < g.row0 + g.size;
  const bool cols_overlap = g.col0 < p.col0 + p.size && p.col0 < g.col0 + g.size;
  if (rows_overlap && cols_overlap) throw Error(Errc::config, "glyph and patch regions overlap");
}

PlantedDataset generate_planted_dataset(const PlantedConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  PlantedDataset data;
  data.config = cfg;
  data.seed = seed;
  Generator gen(data.config, seed);
  data.train = gen.split(cfg.train_size, "train", false);
  data.test = gen.split(cfg.test_size, "test", true);
  return data;
}

nlohmann::json to_json(const PlantedConfig& cfg) {
  return {{"num_classes", cfg.num_classes},
          {"train_size", cfg.train_size},
          {"test_size", cfg.test_size},
          {"patch_fraction", cfg.patch_fraction},
          {"correlation", cfg.correlation},
          {"confound_shift", cfg.confound_shift},
          {"interference_fraction", cfg.interference_fraction},
          {"corner", corner_name(cfg.corner)},
          {"patch_size", cfg.patch_size},
          {"patch_intensity", cfg.patch_intensity},
          {"glyph_size", cfg.glyph_size},
          {"glyph_intensity", cfg.glyph_intensity},
          {"noise_amplitude", cfg.noise_amplitude}};
}

PlantedConfig planted_config_from_json(const nlohmann::json& j) {
  PlantedConfig cfg;
  try {
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.train_size = j.value("train_size", cfg.train_size);
    cfg.test_size = j.value("test_size", cfg.test_size);
    cfg.patch_fraction = j.value("patch_fraction", cfg.patch_fraction);
    cfg.correlation = j.value("correlation", cfg.correlation);
    cfg.confound_shift = j.value("confound_shift", cfg.confound_shift);
    cfg.interference_fraction = j.value("interference_fraction", cfg.interference_fraction);
    cfg.corner = corner_from_name(j.value("corner", std::string(corner_name(cfg.corner))));
    cfg.patch_size = j.value("patch_size", cfg.patch_size);
    cfg.patch_intensity = j.value("patch_intensity", cfg.patch_intensity);
    cfg.glyph_size = j.value("glyph_size", cfg.glyph_size);
    cfg.glyph_intensity = j.value("glyph_intensity", cfg.glyph_intensity);
    cfg.noise_amplitude = j.value("noise_amplitude", cfg.noise_amplitude);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("planted config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

void save_planted_dataset(const PlantedDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create '" + dir.string() + "': " + ec.message());

  save_cifar10(data.train.images, dir / "train.bin");
  save_cifar10(data.test.images, dir / "test.bin");

  nlohmann::json manifest;
  manifest["format"] = "misclass-planted-v1";
  manifest["seed"] = data.seed;
  manifest["config"] = to_json(data.config);
  for (const auto* split : {&data.train, &data.test}) {
    auto& arr = manifest[split == &data.train ? "train" : "test"];
    arr = nlohmann::json::array();
    for (std::size_t k = 0; k < split->images.size(); ++k) {
      arr.push_back(truth_to_json(split->images[k], split->truth[k]));
    }
  }
  image_io::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

PlantedDataset load_planted_dataset(const std::filesystem::path& dir) {
  const auto bytes = image_io::read_file(dir / "manifest.json");
  PlantedDataset data;
  try {
    const auto manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    data.config = planted_config_from_json(manifest.at("config"));
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.train = load_split(dir / "train.bin", manifest.at("train"), data.config.num_classes);
    data.test = load_split(dir / "test.bin", manifest.at("test"), data.config.num_classes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, "planted manifest '" + dir.string() + "': " + e.what());
  }
  return data;
}

}  // namespace misclass
