#include <random>

#include <doctest.h>

#include "misclass/intervention.hpp"
#include "misclass/mask_io.hpp"
#include "support/test_util.hpp"

using namespace misclass;

namespace {

// Independent box extent: rows [r - (h-1)/2, r + h/2], clipped.
bool in_box(Pixel a, std::size_t w, std::size_t h, std::size_t r, std::size_t c) {
  const long top = static_cast<long>(a.row) - static_cast<long>((h - 1) / 2);
  const long bottom = static_cast<long>(a.row) + static_cast<long>(h / 2);
  const long left = static_cast<long>(a.col) - static_cast<long>((w - 1) / 2);
  const long right = static_cast<long>(a.col) + static_cast<long>(w / 2);
  const long rr = static_cast<long>(r), cc = static_cast<long>(c);
  return rr >= top && rr <= bottom && cc >= left && cc <= right;
}

PixelMask random_mask(std::mt19937_64& rng, double density) {
  std::bernoulli_distribution b(density);
  PixelMask m;
  for (auto& x : m) x = b(rng);
  return m;
}

PixelSet random_anchors(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> p(0, 31);
  PixelSet s;
  for (std::size_t k = 0; k < n; ++k) s.pixels.push_back({p(rng), p(rng)});
  return s;
}

struct Fixture {
  std::vector<LabeledImage> images = testutil::random_images(30, 3, 44);
  ChannelStats stats = compute_channel_stats(images);
  ModelParams params = init_model(8, 3);
};

}  // namespace

TEST_SUITE("intervention") {

TEST_CASE("boxes are centred, clipped and extend right/down for even sizes") {
  const auto corner = make_box({0, 0}, 7, 7);
  CHECK(corner.row0 == 0);
  CHECK(corner.row1 == 4);
  CHECK(corner.col1 == 4);
  const auto far = make_box({31, 31}, 7, 7);
  CHECK(far.row0 == 28);
  CHECK(far.row1 == 32);
  const auto even = make_box({10, 10}, 4, 2);
  CHECK(even.col0 == 9);
  CHECK(even.col1 == 13);
  CHECK(even.row0 == 10);
  CHECK(even.row1 == 12);
  CHECK(make_box({5, 5}, 1, 1).row1 == 6);
  CHECK_THROWS_AS(make_box({0, 0}, 0, 3), Error);
  CHECK_THROWS_AS(make_box({32, 0}, 3, 3), Error);

  for (std::size_t w = 1; w <= 9; ++w) {
    for (std::size_t h = 1; h <= 9; h += 2) {
      for (Pixel a : {Pixel{0, 0}, Pixel{15, 3}, Pixel{31, 30}}) {
        const auto b = make_box(a, w, h);
        for (std::size_t r = 0; r < 32; ++r) {
          for (std::size_t c = 0; c < 32; ++c) CHECK(b.contains(r, c) == in_box(a, w, h, r, c));
        }
      }
    }
  }
}

TEST_CASE("erasure mask is the union of boxes minus the spare mask") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const auto anchors = random_anchors(rng, 1 + trial % 30);
    const std::size_t w = 1 + trial % 8, h = 1 + (trial * 3) % 8;
    const std::optional<PixelMask> spare = trial % 3 ? std::optional(random_mask(rng, 0.3)) : std::nullopt;
    const auto boxes = anchor_boxes(anchors, w, h, spare);
    std::size_t kept = 0;
    for (const auto& a : anchors.pixels) kept += !(spare && (*spare)[a.row * 32 + a.col]);
    CHECK(boxes.size() == kept);

    const auto mask = erasure_mask(boxes, spare);
    for (std::size_t r = 0; r < 32; ++r) {
      for (std::size_t c = 0; c < 32; ++c) {
        bool covered = false;
        for (const auto& a : anchors.pixels) {
          if (spare && (*spare)[a.row * 32 + a.col]) continue;
          covered = covered || in_box(a, w, h, r, c);
        }
        const bool spared = spare && (*spare)[r * 32 + c];
        CHECK(mask[r * 32 + c] == (covered && !spared));
      }
    }

    const auto raw = testutil::random_raw(rng);
    const auto erased = apply_erasure(raw, boxes, spare);
    for (std::size_t i = 0; i < kPlanePixels; ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto v = erased.pixels[ch * kPlanePixels + i];
        CHECK(v == (mask[i] ? 0 : raw.pixels[ch * kPlanePixels + i]));
      }
    }
    CHECK(apply_erasure(erased, boxes, spare) == erased);
  }
}

TEST_CASE("intervention results are consistent with their parts") {
  Fixture f;
  std::mt19937_64 rng(9);
  for (std::size_t k = 0; k < 6; ++k) {
    InterventionSpec spec;
    spec.top_p = 0.02 + 0.01 * static_cast<double>(k);
    spec.box_width = 3 + k;
    spec.box_height = 7 - k;
    if (k % 2) spec.spare_mask = random_mask(rng, 0.4);
    const auto& im = f.images[k];
    const auto res = do_intervention(f.params, f.stats, im, spec, "m");
    const auto x = normalize_image(im.image, f.stats);
    CHECK(res.before.predicted_label == predict(f.params, x).label);
    CHECK(res.anchors.pixels == top_fraction(gradient_saliency(f.params, x), spec.top_p).pixels);
    const auto mask = erasure_mask(res.boxes, spec.spare_mask);
    CHECK(res.erased_pixel_count == mask_count(mask));
    const auto erased = apply_erasure(im.image, res.boxes, spec.spare_mask);
    CHECK(res.after.predicted_label == predict(f.params, normalize_image(erased, f.stats)).label);
    CHECK(res.flipped_to_true == (res.after.predicted_label == im.label));
    if (spec.spare_mask) {
      for (std::size_t i = 0; i < kPlanePixels; ++i) {
        if (!(*spec.spare_mask)[i]) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) CHECK(erased.pixels[ch * kPlanePixels + i] == im.image.pixels[ch * kPlanePixels + i]);
      }
    }
    const auto j = to_json(res);
    CHECK(j["erased_pixel_count"] == res.erased_pixel_count);
    CHECK(j["anchors"].size() == res.anchors.pixels.size());
  }
}

TEST_CASE("erasing the whole image equals classifying a black image") {
  Fixture f;
  InterventionSpec spec;
  spec.box_width = 63;
  spec.box_height = 63;
  const auto res = do_intervention(f.params, f.stats, f.images[0], spec);
  CHECK(res.erased_pixel_count == kPlanePixels);
  const auto black = predict(f.params, normalize_image(RawImage{}, f.stats));
  CHECK(res.after.scores == black.scores);
}

TEST_CASE("fully spared anchors leave the prediction unchanged") {
  Fixture f;
  PixelMask everything;
  everything.fill(true);
  InterventionSpec spec;
  spec.spare_mask = everything;
  const auto res = do_intervention(f.params, f.stats, f.images[1], spec);
  CHECK(res.boxes.empty());
  CHECK(res.erased_pixel_count == 0);
  CHECK(res.after.scores == res.before.scores);
}

TEST_CASE("normalized-space erasure zeroes normalized values") {
  Fixture f;
  InterventionSpec spec;
  spec.space = ErasureSpace::normalized;
  const auto& im = f.images[2];
  const auto res = do_intervention(f.params, f.stats, im, spec);
  const auto mask = erasure_mask(res.boxes, std::nullopt);
  const auto x = normalize_image(im.image, f.stats);
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    if (mask[i]) v[i] = v[kPlanePixels + i] = v[2 * kPlanePixels + i] = 0.0;
  }
  CHECK(res.after.scores == predict(f.params, NormalizedImage::from_values(v)).scores);
  CHECK(erasure_space_from_string("normalized") == ErasureSpace::normalized);
  CHECK_THROWS_AS(erasure_space_from_string("latent"), Error);
}

TEST_CASE("invalid specs are rejected") {
  Fixture f;
  InterventionSpec spec;
  spec.box_width = 0;
  CHECK_THROWS_AS(do_intervention(f.params, f.stats, f.images[0], spec), Error);
  spec = {};
  spec.top_p = 0.0;
  CHECK_THROWS_AS(do_intervention(f.params, f.stats, f.images[0], spec), Error);
  auto bad = f.images[0];
  bad.label = 7;
  CHECK_THROWS_AS(do_intervention(f.params, f.stats, bad, {}), Error);
}

TEST_CASE("sweep rows aggregate individual interventions") {
  Fixture f;
  std::vector<InterventionSubject> mis, ctl;
  std::mt19937_64 rng(2);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto x = normalize_image(f.images[k].image, f.stats);
    InterventionSubject s{f.images[k], k % 4 == 0 ? std::optional(random_mask(rng, 0.2)) : std::nullopt};
    (predict(f.params, x).label == f.images[k].label ? ctl : mis).push_back(s);
  }
  REQUIRE(!mis.empty());
  REQUIRE(!ctl.empty());

  SweepGrid single;
  single.top_p = {0.03};
  single.widths = {5};
  single.heights = {3};
  const auto rows = sweep(f.params, f.stats, mis, ctl, single);
  REQUIRE(rows.size() == 1);
  std::size_t flipped = 0, collateral = 0;
  double erased = 0.0;
  for (const auto& s : mis) {
    const auto r = do_intervention(f.params, f.stats, s.image, {0.03, 5, 3, s.spare_mask, ErasureSpace::raw});
    flipped += r.flipped_to_true;
    erased += static_cast<double>(r.erased_pixel_count);
  }
  for (const auto& s : ctl) {
    const auto r = do_intervention(f.params, f.stats, s.image, {0.03, 5, 3, s.spare_mask, ErasureSpace::raw});
    collateral += r.after.predicted_label != r.after.true_label;
  }
  CHECK(rows[0].flipped == flipped);
  CHECK(rows[0].collateral == collateral);
  CHECK(rows[0].flip_rate == static_cast<double>(flipped) / static_cast<double>(mis.size()));
  CHECK(rows[0].collateral_rate == static_cast<double>(collateral) / static_cast<double>(ctl.size()));
  CHECK(rows[0].mean_erased_pixels == doctest::Approx(erased / static_cast<double>(mis.size())).epsilon(1e-15));

  SweepGrid grid;
  grid.top_p = {0.02, 0.05};
  grid.widths = {1, 3, 5, 9};
  grid.heights = {1, 3, 5, 9};
  const auto all = sweep(f.params, f.stats, mis, ctl, grid);
  REQUIRE(all.size() == 32);
  CHECK(all[0].top_p == 0.02);
  CHECK(all[1].height == 3);
  CHECK(all[4].width == 3);
  // Larger square boxes cover a superset of pixels.
  for (std::size_t pi = 0; pi < 2; ++pi) {
    for (std::size_t k = 1; k < 4; ++k) {
      CHECK(all[pi * 16 + k * 4 + k].mean_erased_pixels >= all[pi * 16 + (k - 1) * 4 + (k - 1)].mean_erased_pixels);
    }
  }

  const auto empty = sweep(f.params, f.stats, {}, {}, single);
  CHECK(empty[0].flip_rate == 0.0);
  CHECK(empty[0].collateral_rate == 0.0);
  SweepGrid none;
  none.widths.clear();
  CHECK_THROWS_AS(sweep(f.params, f.stats, mis, ctl, none), Error);
  const auto csv = sweep_to_csv(all);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 33);
}

}
