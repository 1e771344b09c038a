#include "misclass/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "misclass/image_io.hpp"
#include "rng.hpp"

namespace misclass {

namespace {

constexpr std::size_t kSide1 = kImageSide;   // 32
constexpr std::size_t kSide2 = kSide1 / 2;   // 16
constexpr std::size_t kTaps = kKernel * kKernel;

constexpr std::size_t conv1_weights = kConv1Out * kChannels * kTaps;
constexpr std::size_t conv2_weights = kConv2Out * kConv1Out * kTaps;

// 3x3 same-padding convolution. `out` is overwritten.
void conv3x3_forward(const double* in, std::size_t in_ch, std::size_t side, const double* w,
                     const double* b, std::size_t out_ch, double* out) {
  const std::size_t plane = side * side;
  for (std::size_t o = 0; o < out_ch; ++o) {
    double* dst = out + o * plane;
    std::fill(dst, dst + plane, b[o]);
    for (std::size_t i = 0; i < in_ch; ++i) {
      const double* src = in + i * plane;
      for (std::size_t kr = 0; kr < kKernel; ++kr) {
        for (std::size_t kc = 0; kc < kKernel; ++kc) {
          const double wt = w[((o * in_ch + i) * kKernel + kr) * kKernel + kc];
          const std::size_t r0 = kr == 0 ? 1 : 0;
          const std::size_t r1 = kr == 2 ? side - 1 : side;
          const std::size_t c0 = kc == 0 ? 1 : 0;
          const std::size_t c1 = kc == 2 ? side - 1 : side;
          for (std::size_t r = r0; r < r1; ++r) {
            const double* srow = src + (r + kr - 1) * side;
            double* drow = dst + r * side;
            for (std::size_t c = c0; c < c1; ++c) drow[c] += wt * srow[c + kc - 1];
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients (when dw/db are non-null) and the input
// gradient (when din is non-null) of a 3x3 same-padding convolution.
void conv3x3_backward(const double* in, const double* dout, const double* w, std::size_t in_ch,
                      std::size_t side, std::size_t out_ch, double* dw, double* db, double* din) {
  const std::size_t plane = side * side;
  for (std::size_t o = 0; o < out_ch; ++o) {
    const double* g = dout + o * plane;
    if (db != nullptr) {
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += g[k];
      db[o] += s;
    }
    for (std::size_t i = 0; i < in_ch; ++i) {
      const double* src = in + i * plane;
      for (std::size_t kr = 0; kr < kKernel; ++kr) {
        for (std::size_t kc = 0; kc < kKernel; ++kc) {
          const std::size_t widx = ((o * in_ch + i) * kKernel + kr) * kKernel + kc;
          const std::size_t r0 = kr == 0 ? 1 : 0;
          const std::size_t r1 = kr == 2 ? side - 1 : side;
          const std::size_t c0 = kc == 0 ? 1 : 0;
          const std::size_t c1 = kc == 2 ? side - 1 : side;
          if (dw != nullptr) {
            double s = 0.0;
            for (std::size_t r = r0; r < r1; ++r) {
              const double* srow = src + (r + kr - 1) * side;
              const double* grow = g + r * side;
              for (std::size_t c = c0; c < c1; ++c) s += grow[c] * srow[c + kc - 1];
            }
            dw[widx] += s;
          }
          if (din != nullptr) {
            const double wt = w[widx];
            double* dsrc = din + i * plane;
            for (std::size_t r = r0; r < r1; ++r) {
              double* drow = dsrc + (r + kr - 1) * side;
              const double* grow = g + r * side;
              for (std::size_t c = c0; c < c1; ++c) drow[c + kc - 1] += wt * grow[c];
            }
          }
        }
      }
    }
  }
}

void relu_inplace(std::vector<double>& v) {
  for (auto& x : v) x = x > 0.0 ? x : 0.0;
}

// 2x2 max pool, stride 2. Ties go to the first maximum in scan order.
void maxpool2_forward(const std::vector<double>& in, std::size_t channels, std::size_t side,
                      std::vector<double>& out, std::vector<std::size_t>& idx) {
  const std::size_t half = side / 2;
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t r = 0; r < half; ++r) {
      for (std::size_t c = 0; c < half; ++c) {
        std::size_t best = (ch * side + 2 * r) * side + 2 * c;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t k = (ch * side + 2 * r + dr) * side + 2 * c + dc;
            if (in[k] > in[best]) best = k;
          }
        }
        const std::size_t o = (ch * half + r) * half + c;
        out[o] = in[best];
        idx[o] = best;
      }
    }
  }
}

void softmax(std::span<const double> logits, std::vector<double>& probs) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  probs.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - m);
    z += probs[k];
  }
  for (auto& p : probs) p /= z;
}

struct Activations {
  std::vector<double> a1 = std::vector<double>(kConv1Out * kSide1 * kSide1);  // relu(conv1)
  std::vector<double> p1 = std::vector<double>(kConv1Out * kSide2 * kSide2);
  std::vector<std::size_t> p1_idx = std::vector<std::size_t>(kConv1Out * kSide2 * kSide2);
  std::vector<double> a2 = std::vector<double>(kConv2Out * kSide2 * kSide2);  // relu(conv2)
  std::vector<double> p2 = std::vector<double>(kFeatures);
  std::vector<std::size_t> p2_idx = std::vector<std::size_t>(kFeatures);
  std::vector<double> logits;
  std::vector<double> probs;
};

void run_forward(const ModelParams& m, std::span<const double> x, Activations& act) {
  conv3x3_forward(x.data(), kChannels, kSide1, m.conv1_w.data(), m.conv1_b.data(), kConv1Out, act.a1.data());
  relu_inplace(act.a1);
  maxpool2_forward(act.a1, kConv1Out, kSide1, act.p1, act.p1_idx);
  conv3x3_forward(act.p1.data(), kConv1Out, kSide2, m.conv2_w.data(), m.conv2_b.data(), kConv2Out, act.a2.data());
  relu_inplace(act.a2);
  maxpool2_forward(act.a2, kConv2Out, kSide2, act.p2, act.p2_idx);

  act.logits.assign(m.num_classes, 0.0);
  for (std::size_t k = 0; k < m.num_classes; ++k) {
    const double* row = m.fc_w.data() + k * kFeatures;
    double s = m.fc_b[k];
    for (std::size_t f = 0; f < kFeatures; ++f) s += row[f] * act.p2[f];
    act.logits[k] = s;
  }
  softmax(act.logits, act.probs);
}

// Parameter gradients accumulated over a batch (same layout as ModelParams).
struct Gradients {
  explicit Gradients(std::size_t classes)
      : conv1_w(conv1_weights), conv1_b(kConv1Out), conv2_w(conv2_weights), conv2_b(kConv2Out),
        fc_w(classes * kFeatures), fc_b(classes) {}
  std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;
};

// Back-propagates d(objective)/d(logits) through the network. Parameter
// gradients are accumulated into `grads` when non-null; the input gradient
// is written into `dx` when non-null.
void run_backward(const ModelParams& m, std::span<const double> x, const Activations& act,
                  std::span<const double> dlogits, Gradients* grads, double* dx) {
  std::vector<double> dp2(kFeatures, 0.0);
  for (std::size_t k = 0; k < m.num_classes; ++k) {
    const double g = dlogits[k];
    const double* row = m.fc_w.data() + k * kFeatures;
    if (grads != nullptr) {
      double* grow = grads->fc_w.data() + k * kFeatures;
      for (std::size_t f = 0; f < kFeatures; ++f) grow[f] += g * act.p2[f];
      grads->fc_b[k] += g;
    }
    for (std::size_t f = 0; f < kFeatures; ++f) dp2[f] += g * row[f];
  }

  std::vector<double> dz2(act.a2.size(), 0.0);
  for (std::size_t f = 0; f < kFeatures; ++f) {
    const std::size_t src = act.p2_idx[f];
    if (act.a2[src] > 0.0) dz2[src] += dp2[f];
  }

  std::vector<double> dp1(act.p1.size(), 0.0);
  conv3x3_backward(act.p1.data(), dz2.data(), m.conv2_w.data(), kConv1Out, kSide2, kConv2Out,
                   grads ? grads->conv2_w.data() : nullptr, grads ? grads->conv2_b.data() : nullptr,
                   dp1.data());

  std::vector<double> dz1(act.a1.size(), 0.0);
  for (std::size_t k = 0; k < act.p1.size(); ++k) {
    const std::size_t src = act.p1_idx[k];
    if (act.a1[src] > 0.0) dz1[src] += dp1[k];
  }

  conv3x3_backward(x.data(), dz1.data(), m.conv1_w.data(), kChannels, kSide1, kConv1Out,
                   grads ? grads->conv1_w.data() : nullptr, grads ? grads->conv1_b.data() : nullptr, dx);
}

void check_image(const NormalizedImage& image) {
  if (image.values().size() != kImageValues) {
    throw Error(Errc::shape_mismatch, "classifier input must be 3x32x32");
  }
}

void fill_glorot(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out, detail::Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w) v = rng.uniform(-bound, bound);
}

// little-endian f64 (de)serialization
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw Error(Errc::truncated_file, "model file ends early");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

constexpr char kModelMagic[8] = {'M', 'C', 'L', 'S', 'P', 'R', 'M', '1'};

}  // namespace

ModelParams ModelParams::zeros(std::size_t num_classes) {
  ModelParams p;
  p.num_classes = num_classes;
  p.conv1_w.assign(conv1_weights, 0.0);
  p.conv1_b.assign(kConv1Out, 0.0);
  p.conv2_w.assign(conv2_weights, 0.0);
  p.conv2_b.assign(kConv2Out, 0.0);
  p.fc_w.assign(num_classes * kFeatures, 0.0);
  p.fc_b.assign(num_classes, 0.0);
  return p;
}

void ModelParams::check_shapes() const {
  if (num_classes < 2 || conv1_w.size() != conv1_weights || conv1_b.size() != kConv1Out ||
      conv2_w.size() != conv2_weights || conv2_b.size() != kConv2Out ||
      fc_w.size() != num_classes * kFeatures || fc_b.size() != num_classes) {
    throw Error(Errc::shape_mismatch, "model parameter shapes do not match the architecture");
  }
}

ModelParams init_model(std::uint64_t seed, std::size_t num_classes) {
  if (num_classes < 2) throw Error(Errc::invalid_argument, "a classifier needs at least 2 classes");
  ModelParams p = ModelParams::zeros(num_classes);
  p.seed = seed;
  detail::Rng rng(seed);
  fill_glorot(p.conv1_w, kChannels * kTaps, kConv1Out * kTaps, rng);
  fill_glorot(p.conv2_w, kConv1Out * kTaps, kConv2Out * kTaps, rng);
  fill_glorot(p.fc_w, kFeatures, num_classes, rng);
  return p;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::empty_input, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

std::vector<double> forward_logits(const ModelParams& params, const NormalizedImage& image) {
  params.check_shapes();
  check_image(image);
  Activations act;
  run_forward(params, image.values(), act);
  return act.logits;
}

ScoreVector forward(const ModelParams& params, const NormalizedImage& image) {
  params.check_shapes();
  check_image(image);
  Activations act;
  run_forward(params, image.values(), act);
  return {std::move(act.probs)};
}

Prediction predict(const ModelParams& params, const NormalizedImage& image) {
  ScoreVector s = forward(params, image);
  const std::size_t label = argmax(s.values);
  return {label, std::move(s)};
}

std::vector<Prediction> predict_batch(const ModelParams& params, std::span<const NormalizedImage> images) {
  params.check_shapes();
  std::vector<Prediction> out;
  out.reserve(images.size());
  Activations act;
  for (const auto& img : images) {
    check_image(img);
    run_forward(params, img.values(), act);
    out.push_back({argmax(act.probs), ScoreVector{act.probs}});
  }
  return out;
}

std::vector<ClassificationRecord> classify(const ModelParams& params, const ChannelStats& stats,
                                           std::span<const LabeledImage> images,
                                           const std::string& model_id) {
  std::vector<ClassificationRecord> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    auto pred = predict(params, normalize_image(img.image, stats));
    out.push_back({img.id, img.label, pred.label, std::move(pred.scores), model_id});
  }
  return out;
}

TrainResult train(const ModelParams& params, std::span<const NormalizedImage> images,
                  std::span<const std::size_t> labels, const TrainConfig& cfg) {
  params.check_shapes();
  if (images.empty()) throw Error(Errc::empty_input, "training set is empty");
  if (images.size() != labels.size()) throw Error(Errc::shape_mismatch, "images and labels differ in length");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error(Errc::invalid_argument, "learning rate must be a finite non-negative value");
  }
  if (cfg.batch_size == 0) throw Error(Errc::invalid_argument, "batch size must be at least 1");
  for (std::size_t k = 0; k < labels.size(); ++k) {
    if (labels[k] >= params.num_classes) {
      throw Error(Errc::invalid_label, "training label " + std::to_string(labels[k]) + " at index " +
                                           std::to_string(k) + " exceeds the class count");
    }
  }

  TrainResult result{params, {}};
  ModelParams& m = result.params;
  detail::Rng rng(cfg.seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Activations act;
  std::vector<double> dlogits(m.num_classes);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      Gradients grads(m.num_classes);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto x = images[idx].values();
        run_forward(m, x, act);
        const std::size_t y = labels[idx];
        const double mx = *std::max_element(act.logits.begin(), act.logits.end());
        double z = 0.0;
        for (double l : act.logits) z += std::exp(l - mx);
        const double loss = mx + std::log(z) - act.logits[y];
        if (!std::isfinite(loss)) {
          throw Error(Errc::diverged, "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                          ", batch " + std::to_string(batch_index + 1));
        }
        loss_sum += loss;
        if (argmax(act.probs) == y) ++correct;
        for (std::size_t k = 0; k < m.num_classes; ++k) {
          dlogits[k] = (act.probs[k] - (k == y ? 1.0 : 0.0)) * scale;
        }
        run_backward(m, x, act, dlogits, &grads, nullptr);
      }
      auto step = [&](std::vector<double>& w, const std::vector<double>& g) {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= cfg.learning_rate * g[k];
      };
      step(m.conv1_w, grads.conv1_w);
      step(m.conv1_b, grads.conv1_b);
      step(m.conv2_w, grads.conv2_w);
      step(m.conv2_b, grads.conv2_b);
      step(m.fc_w, grads.fc_w);
      step(m.fc_b, grads.fc_b);
    }
    const auto n = static_cast<double>(order.size());
    result.trace.push_back({epoch + 1, loss_sum / n, static_cast<double>(correct) / n});
  }
  return result;
}

std::vector<double> input_gradient(const ModelParams& params, const NormalizedImage& image,
                                   std::size_t target_class) {
  params.check_shapes();
  check_image(image);
  if (target_class >= params.num_classes) {
    throw Error(Errc::invalid_argument, "target class " + std::to_string(target_class) +
                                            " is out of range for " + std::to_string(params.num_classes) +
                                            " classes");
  }
  Activations act;
  run_forward(params, image.values(), act);
  // d p_t / d logit_k = p_t (delta_tk - p_k)
  std::vector<double> dlogits(params.num_classes);
  const double pt = act.probs[target_class];
  for (std::size_t k = 0; k < params.num_classes; ++k) {
    dlogits[k] = pt * ((k == target_class ? 1.0 : 0.0) - act.probs[k]);
  }
  std::vector<double> dx(kImageValues, 0.0);
  run_backward(params, image.values(), act, dlogits, nullptr, dx.data());
  return dx;
}

std::vector<double> finite_diff_gradient(const ImageScorer& scorer, const NormalizedImage& image, double h) {
  if (!(h > 0.0)) throw Error(Errc::invalid_argument, "finite-difference step must be positive");
  check_image(image);
  std::vector<double> x(image.values().begin(), image.values().end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = scorer(NormalizedImage::from_values(x));
    x[i] = orig - h;
    const double down = scorer(NormalizedImage::from_values(x));
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

std::vector<double> finite_diff_gradient(const ModelParams& params, const NormalizedImage& image,
                                         std::size_t target_class, double h) {
  params.check_shapes();
  if (target_class >= params.num_classes) throw Error(Errc::invalid_argument, "target class out of range");
  Activations act;
  return finite_diff_gradient(
      [&](const NormalizedImage& img) {
        run_forward(params, img.values(), act);
        return act.probs[target_class];
      },
      image, h);
}

// ---- persistence -----------------------------------------------------------

std::vector<std::uint8_t> encode_model(const ModelParams& params, const nlohmann::json& config) {
  params.check_shapes();
  nlohmann::json header = {
      {"format", "misclass-model-v1"},
      {"num_classes", params.num_classes},
      {"seed", params.seed},
      {"shapes",
       {{"conv1_w", {kConv1Out, kChannels, kKernel, kKernel}},
        {"conv1_b", {kConv1Out}},
        {"conv2_w", {kConv2Out, kConv1Out, kKernel, kKernel}},
        {"conv2_b", {kConv2Out}},
        {"fc_w", {params.num_classes, kFeatures}},
        {"fc_b", {params.num_classes}}}},
      {"config", config}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto* t : {&params.conv1_w, &params.conv1_b, &params.conv2_w, &params.conv2_b,
                        &params.fc_w, &params.fc_b}) {
    for (double v : *t) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

void save_model(const ModelParams& params, const std::filesystem::path& path, const nlohmann::json& config) {
  image_io::write_file(path, encode_model(params, config));
}

ModelParams decode_model(std::span<const std::uint8_t> bytes, nlohmann::json* config) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kModelMagic, 8) != 0) {
    throw Error(Errc::schema, "not a misclass model file");
  }
  std::size_t pos = 8;
  const auto header_len = get_u64(bytes, pos);
  if (header_len > bytes.size() - pos) throw Error(Errc::truncated_file, "model header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("model header: ") + e.what());
  }
  pos += header_len;
  ModelParams p;
  try {
    const auto classes = header.at("num_classes").get<std::size_t>();
    if (classes < 2) throw Error(Errc::schema, "model must have at least 2 classes");
    p = ModelParams::zeros(classes);
    p.seed = header.value("seed", std::uint64_t{0});
    if (config) *config = header.value("config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("model header: ") + e.what());
  }
  std::size_t values = 0;
  for (auto* t : {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.fc_w, &p.fc_b}) values += t->size();
  if (bytes.size() - pos != values * 8) throw Error(Errc::truncated_file, "model tensor data has the wrong length");
  for (auto* t : {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.fc_w, &p.fc_b}) {
    for (double& v : *t) v = std::bit_cast<double>(get_u64(bytes, pos));
  }
  p.check_shapes();
  return p;
}

ModelParams load_model(const std::filesystem::path& path, nlohmann::json* config) {
  const auto bytes = image_io::read_file(path);
  try {
    return decode_model(bytes, config);
  } catch (const Error& e) {
    throw Error(e.code(), "'" + path.string() + "': " + e.message());
  }
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"shuffle", cfg.shuffle}};
}

std::string trace_to_csv(std::span<const EpochStats> trace) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_loss,train_accuracy\n";
  for (const auto& e : trace) out << e.epoch << "," << e.mean_loss << "," << e.accuracy << "\n";
  return out.str();
}

}  // namespace misclass
