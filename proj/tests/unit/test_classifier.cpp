#include <cmath>
#include <random>

#include <doctest.h>

#include "misclass/classifier.hpp"
#include "misclass/image_io.hpp"
#include "support/test_util.hpp"

using namespace misclass;
using testutil::TempDir;

namespace {

// Straightforward re-implementation of the forward pass with explicit bounds
// checks, used as an oracle for the optimized kernels.
std::vector<double> conv_naive(const std::vector<double>& in, std::size_t in_ch, std::size_t side,
                               const std::vector<double>& w, const std::vector<double>& b, std::size_t out_ch) {
  std::vector<double> out(out_ch * side * side);
  for (std::size_t o = 0; o < out_ch; ++o) {
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) {
        double s = b[o];
        for (std::size_t i = 0; i < in_ch; ++i) {
          for (int kr = -1; kr <= 1; ++kr) {
            for (int kc = -1; kc <= 1; ++kc) {
              const int rr = static_cast<int>(r) + kr;
              const int cc = static_cast<int>(c) + kc;
              if (rr < 0 || cc < 0 || rr >= static_cast<int>(side) || cc >= static_cast<int>(side)) continue;
              s += w[((o * in_ch + i) * 3 + (kr + 1)) * 3 + (kc + 1)] * in[(i * side + rr) * side + cc];
            }
          }
        }
        out[(o * side + r) * side + c] = std::max(0.0, s);
      }
    }
  }
  return out;
}

std::vector<double> pool_naive(const std::vector<double>& in, std::size_t ch, std::size_t side) {
  const std::size_t h = side / 2;
  std::vector<double> out(ch * h * h);
  for (std::size_t k = 0; k < ch; ++k) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < h; ++c) {
        double m = -INFINITY;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dc = 0; dc < 2; ++dc) m = std::max(m, in[(k * side + 2 * r + dr) * side + 2 * c + dc]);
        }
        out[(k * h + r) * h + c] = m;
      }
    }
  }
  return out;
}

std::vector<double> logits_naive(const ModelParams& p, const NormalizedImage& x) {
  std::vector<double> in(x.values().begin(), x.values().end());
  auto a = pool_naive(conv_naive(in, 3, 32, p.conv1_w, p.conv1_b, 8), 8, 32);
  a = pool_naive(conv_naive(a, 8, 16, p.conv2_w, p.conv2_b, 16), 16, 16);
  std::vector<double> out(p.num_classes);
  for (std::size_t k = 0; k < p.num_classes; ++k) {
    out[k] = p.fc_b[k];
    for (std::size_t f = 0; f < kFeatures; ++f) out[k] += p.fc_w[k * kFeatures + f] * a[f];
  }
  return out;
}

ModelParams random_biases(ModelParams p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto* v : {&p.conv1_b, &p.conv2_b, &p.fc_b}) {
    for (auto& x : *v) x = u(rng);
  }
  return p;
}

}  // namespace

TEST_SUITE("classifier") {

TEST_CASE("parameter shapes and Glorot bounds") {
  const auto p = init_model(3, 10);
  CHECK(p.conv1_w.size() == 8 * 3 * 9);
  CHECK(p.conv2_w.size() == 16 * 8 * 9);
  CHECK(p.fc_w.size() == 10 * 1024);
  CHECK(p.fc_b.size() == 10);
  const double b1 = std::sqrt(6.0 / (27.0 + 72.0));
  for (double w : p.conv1_w) CHECK(std::abs(w) <= b1);
  for (double b : p.conv1_b) CHECK(b == 0.0);
  CHECK(init_model(3, 10) == p);
  CHECK_FALSE(init_model(4, 10) == p);
  auto broken = p;
  broken.fc_b.pop_back();
  CHECK_THROWS_AS(broken.check_shapes(), Error);
}

TEST_CASE("forward pass matches the naive oracle") {
  std::mt19937_64 rng(21);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto p = random_biases(init_model(seed, 3 + seed), seed + 50);
    const auto x = testutil::random_normalized(rng);
    const auto fast = forward_logits(p, x);
    const auto slow = logits_naive(p, x);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t k = 0; k < fast.size(); ++k) CHECK(fast[k] == doctest::Approx(slow[k]).epsilon(1e-12));
    const auto scores = forward(p, x);
    double total = 0.0;
    for (double s : scores.values) {
      CHECK(s >= 0.0);
      total += s;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(predict(p, x).label == argmax(scores.values));
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(argmax(std::vector<double>{0.1, 0.2, 0.7}) == 2);
}

TEST_CASE("batch prediction equals mapped single prediction bit-exactly") {
  std::mt19937_64 rng(4);
  const auto p = init_model(9, 4);
  std::vector<NormalizedImage> xs;
  for (int k = 0; k < 100; ++k) xs.push_back(testutil::random_normalized(rng));
  const auto batch = predict_batch(p, xs);
  REQUIRE(batch.size() == xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) CHECK(batch[k] == predict(p, xs[k]));
}

TEST_CASE("input gradient agrees with central differences") {
  std::mt19937_64 rng(8);
  const auto p = random_biases(init_model(17, 3), 3);
  const auto x = testutil::random_normalized(rng);
  for (std::size_t target = 0; target < 3; ++target) {
    const auto g = input_gradient(p, x, target);
    const auto fd = finite_diff_gradient(p, x, target, 1e-5);
    double max_g = 0.0, max_err = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      max_g = std::max(max_g, std::abs(g[i]));
      max_err = std::max(max_err, std::abs(g[i] - fd[i]));
    }
    CHECK(max_g > 0.0);
    CHECK(max_err <= 1e-6 * max_g);
  }
}

TEST_CASE("finite differences of a linear scorer recover its weights") {
  std::vector<double> w(kImageValues);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.1 * static_cast<double>(i));
  const ImageScorer scorer = [&](const NormalizedImage& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.values()[i];
    return s;
  };
  std::mt19937_64 rng(1);
  const auto g = finite_diff_gradient(scorer, testutil::random_normalized(rng), 1e-3);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(g[i] == doctest::Approx(w[i]).epsilon(1e-8).scale(1.0));
}

TEST_CASE("training is deterministic and a zero learning rate changes nothing") {
  const auto images = testutil::random_images(40, 3, 6);
  const auto stats = compute_channel_stats(images);
  const auto xs = normalize_all(images, stats);
  std::vector<std::size_t> labels;
  for (const auto& im : images) labels.push_back(im.label);

  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.seed = 5;
  const auto init = init_model(1, 3);
  const auto a = train(init, xs, labels, cfg);
  const auto b = train(init, xs, labels, cfg);
  CHECK(a.params == b.params);
  REQUIRE(a.trace.size() == 2);
  CHECK(a.trace[0].mean_loss == b.trace[0].mean_loss);
  CHECK_FALSE(a.params == init);

  cfg.learning_rate = 0.0;
  CHECK(train(init, xs, labels, cfg).params == init);
}

TEST_CASE("a non-finite loss reports divergence") {
  const auto images = testutil::random_images(16, 2, 3);
  const auto xs = normalize_all(images, compute_channel_stats(images));
  std::vector<std::size_t> labels;
  for (const auto& im : images) labels.push_back(im.label);
  TrainConfig cfg;
  cfg.learning_rate = 1e300;
  cfg.batch_size = 4;
  cfg.epochs = 5;
  try {
    train(init_model(0, 2), xs, labels, cfg);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::diverged);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("model files round trip bit-exactly and reject corruption") {
  TempDir dir;
  const auto p = random_biases(init_model(2, 5), 9);
  const nlohmann::json cfg = {{"note", "x"}};
  save_model(p, dir / "m.bin", cfg);
  nlohmann::json back_cfg;
  CHECK(load_model(dir / "m.bin", &back_cfg) == p);
  CHECK(back_cfg == cfg);

  auto bytes = encode_model(p);
  CHECK(decode_model(bytes) == p);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(decode_model(truncated), Error);
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_model(bytes), Error);
  CHECK_THROWS_AS(load_model(dir / "missing.bin"), Error);
}

TEST_CASE("classify builds complete records") {
  const auto images = testutil::random_images(5, 3, 2);
  const auto stats = compute_channel_stats(images);
  const auto p = init_model(0, 3);
  const auto records = classify(p, stats, images, "m0");
  REQUIRE(records.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(records[k].image_id == images[k].id);
    CHECK(records[k].true_label == images[k].label);
    CHECK(records[k].model_id == "m0");
    CHECK(records[k].predicted_label == argmax(records[k].scores.values));
  }
}

}
