#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/dataset.hpp"

namespace misclass {

// Fixed architecture:
//   conv(3->8, 3x3, pad 1) + ReLU + maxpool 2
//   conv(8->16, 3x3, pad 1) + ReLU + maxpool 2
//   flatten(16*8*8 = 1024) -> affine(C) -> softmax
inline constexpr std::size_t kConv1Out = 8;
inline constexpr std::size_t kConv2Out = 16;
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kFeatures = kConv2Out * 8 * 8;  // 1024

struct ModelParams {
  std::size_t num_classes = 0;
  std::vector<double> conv1_w;  // [8][3][3][3]
  std::vector<double> conv1_b;  // [8]
  std::vector<double> conv2_w;  // [16][8][3][3]
  std::vector<double> conv2_b;  // [16]
  std::vector<double> fc_w;     // [C][1024]
  std::vector<double> fc_b;     // [C]
  std::uint64_t seed = 0;

  /// Zero-valued parameters with the shapes implied by `num_classes`.
  static ModelParams zeros(std::size_t num_classes);

  /// Throws Errc::shape_mismatch if any tensor has the wrong size.
  void check_shapes() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // on the training batches, measured before each update
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> trace;
};

/// Post-softmax class probabilities.
struct ScoreVector {
  std::vector<double> values;
  friend bool operator==(const ScoreVector&, const ScoreVector&) = default;
};

struct Prediction {
  std::size_t label = 0;
  ScoreVector scores;
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct ClassificationRecord {
  std::string image_id;
  std::size_t true_label = 0;
  std::size_t predicted_label = 0;
  ScoreVector scores;
  std::string model_id;
  friend bool operator==(const ClassificationRecord&, const ClassificationRecord&) = default;
};

/// Glorot-uniform kernels (bound sqrt(6/(fan_in+fan_out)) per layer), zero biases.
ModelParams init_model(std::uint64_t seed, std::size_t num_classes);

/// Plain mini-batch SGD on mean softmax cross-entropy. Deterministic for a
/// fixed config. Throws Errc::diverged on a non-finite loss.
TrainResult train(const ModelParams& params, std::span<const NormalizedImage> images,
                  std::span<const std::size_t> labels, const TrainConfig& cfg);

std::vector<double> forward_logits(const ModelParams& params, const NormalizedImage& image);
ScoreVector forward(const ModelParams& params, const NormalizedImage& image);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

Prediction predict(const ModelParams& params, const NormalizedImage& image);
std::vector<Prediction> predict_batch(const ModelParams& params, std::span<const NormalizedImage> images);

/// Normalizes and classifies labelled images into full records.
std::vector<ClassificationRecord> classify(const ModelParams& params, const ChannelStats& stats,
                                           std::span<const LabeledImage> images,
                                           const std::string& model_id);

/// Exact d score[target] / d pixel over the 3x32x32 input (channel-major).
std::vector<double> input_gradient(const ModelParams& params, const NormalizedImage& image,
                                   std::size_t target_class);

using ImageScorer = std::function<double(const NormalizedImage&)>;

/// Central differences (f(x+h) - f(x-h)) / 2h for every input value.
std::vector<double> finite_diff_gradient(const ImageScorer& scorer, const NormalizedImage& image, double h);

std::vector<double> finite_diff_gradient(const ModelParams& params, const NormalizedImage& image,
                                         std::size_t target_class, double h);

// ---- persistence -----------------------------------------------------------

/// Binary layout: 8-byte magic "MCLSPRM1", u64 little-endian header length,
/// JSON header (shapes, seed, config), then every tensor as little-endian f64
/// in the order conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b.
void save_model(const ModelParams& params, const std::filesystem::path& path,
                const nlohmann::json& config = nlohmann::json::object());
/// `config`, when given, receives the header's config object.
ModelParams load_model(const std::filesystem::path& path, nlohmann::json* config = nullptr);
std::vector<std::uint8_t> encode_model(const ModelParams& params,
                                       const nlohmann::json& config = nlohmann::json::object());
ModelParams decode_model(std::span<const std::uint8_t> bytes, nlohmann::json* config = nullptr);

nlohmann::json to_json(const TrainConfig& cfg);
std::string trace_to_csv(std::span<const EpochStats> trace);

// ---- prediction logs (JSONL) ------------------------------------------------

nlohmann::json to_json(const ClassificationRecord& record);

/// Parses one JSONL record and checks predicted_label == argmax(scores).
/// `expected_classes` = 0 accepts any score length.
ClassificationRecord record_from_json(const nlohmann::json& j, std::size_t expected_classes = 0);

std::string format_prediction_log(std::span<const ClassificationRecord> records);
void save_prediction_log(std::span<const ClassificationRecord> records, const std::filesystem::path& path);

/// Throws Errc::schema (with the 1-based line number) on malformed lines or a
/// score count that differs from the first record's, Errc::consistency when a
/// predicted label disagrees with argmax(scores).
std::vector<ClassificationRecord> parse_prediction_log(const std::string& text, std::size_t expected_classes = 0);
std::vector<ClassificationRecord> load_prediction_log(const std::filesystem::path& path,
                                                      std::size_t expected_classes = 0);

}  // namespace misclass
