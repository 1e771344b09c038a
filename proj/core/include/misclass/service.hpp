#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/intervention.hpp"
#include "misclass/netgraph.hpp"
#include "misclass/pipeline.hpp"
#include "misclass/stats.hpp"

namespace misclass {

/// One model and one dataset, frozen at construction. Everything the CLI
/// and the HTTP service report about an image is derived from this snapshot.
class SessionState {
public:
  SessionState(std::string model_id, ModelParams params, ChannelStats stats, std::vector<LabeledImage> images,
               std::vector<std::optional<PixelMask>> spare_masks, double theta = kDefaultTheta);

  const std::string& model_id() const { return model_id_; }
  const ModelParams& params() const { return params_; }
  const ChannelStats& stats() const { return stats_; }
  const std::vector<LabeledImage>& images() const { return images_; }
  const std::vector<ClassificationRecord>& records() const { return records_; }
  const ConfusionCounts& counts() const { return counts_; }
  const RateTable& rates() const { return rates_; }
  const MisclassNetwork& network() const { return network_; }
  /// Ground-truth spare mask for image `index`, if the dataset carries one.
  const std::optional<PixelMask>& spare_mask(std::size_t index) const { return spare_masks_[index]; }

  /// Index of the image with this id. Throws Errc::not_found.
  std::size_t find(const std::string& id) const;

private:
  std::string model_id_;
  ModelParams params_;
  ChannelStats stats_;
  std::vector<LabeledImage> images_;
  std::vector<std::optional<PixelMask>> spare_masks_;
  std::vector<ClassificationRecord> records_;
  std::map<std::string, std::size_t> index_;
  ConfusionCounts counts_;
  RateTable rates_;
  MisclassNetwork network_;
};

struct SessionConfig {
  std::filesystem::path model;
  DatasetSpec data;
  bool use_train_split = false;  // default: serve the test split
  double theta = kDefaultTheta;
  double std_epsilon = 0.0;
  /// Spare mask applied to every image when the dataset has no ground truth.
  std::optional<std::filesystem::path> spare_mask;
};

/// Loads model and data. Stats come from the model file's header when present,
/// otherwise from the training split.
std::shared_ptr<const SessionState> load_session(const SessionConfig& cfg);

// ---- request handlers shared by the CLI and the HTTP service ---------------

inline constexpr std::size_t kDefaultPageSize = 50;

nlohmann::json image_list_json(const SessionState& s, std::size_t page, std::size_t page_size = kDefaultPageSize);
nlohmann::json image_json(const SessionState& s, std::size_t index);
nlohmann::json saliency_json(const SessionState& s, std::size_t index, SaliencySource method);
nlohmann::json stats_json(const SessionState& s);

struct InterventionRequest {
  std::size_t index = 0;
  InterventionSpec spec;
};

/// Parses {id, p?, dx?, dy?, spare_mask?, space?}. spare_mask is a run-length
/// mask object or the string "ground_truth". Throws Errc::invalid_argument on a
/// malformed body and Errc::not_found on an unknown id.
InterventionRequest parse_intervention_request(const SessionState& s, const nlohmann::json& body);
nlohmann::json intervene_json(const SessionState& s, const InterventionRequest& request);

/// Pretty-printed JSON text used for every CLI and HTTP response body.
std::string render_json(const nlohmann::json& j);

// ---- HTTP ---------------------------------------------------------------------

struct ApiRequest {
  std::string method;  // "GET" or "POST"
  std::string path;    // e.g. "/api/image/test:3"
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Routes one request. Malformed requests give 400, unknown ids or routes
/// 404, each with {"error": {"code", "message"}}.
ApiResponse handle_request(const SessionState& s, const ApiRequest& request);

/// Blocking HTTP server over a shared session. Requests are served
/// concurrently; none of them mutates the session.
class HttpService {
public:
  explicit HttpService(std::shared_ptr<const SessionState> session);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  /// Binds to host:port (port 0 picks a free port) and returns the port.
  /// Throws Errc::io when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called.
  void listen();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace misclass
