#include "misclass/service.hpp"

#include <charconv>

#include <httplib.h>

#include "misclass/image_io.hpp"
#include "misclass/mask_io.hpp"

namespace misclass {

SessionState::SessionState(std::string model_id, ModelParams params, ChannelStats stats,
                           std::vector<LabeledImage> images, std::vector<std::optional<PixelMask>> spare_masks,
                           double theta)
    : model_id_(std::move(model_id)),
      params_(std::move(params)),
      stats_(stats),
      images_(std::move(images)),
      spare_masks_(std::move(spare_masks)) {
  params_.check_shapes();
  if (spare_masks_.empty()) spare_masks_.resize(images_.size());
  if (spare_masks_.size() != images_.size()) {
    throw Error(Errc::shape_mismatch, "spare masks do not match the image list");
  }
  for (std::size_t k = 0; k < images_.size(); ++k) {
    if (!index_.emplace(images_[k].id, k).second) {
      throw Error(Errc::invalid_argument, "duplicate image id '" + images_[k].id + "'");
    }
  }
  records_ = classify(params_, stats_, images_, model_id_);
  counts_ = tally(records_, params_.num_classes);
  rates_ = rate_table(counts_);
  network_ = build_network(rates_, theta, model_id_);
}

std::size_t SessionState::find(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error(Errc::not_found, "unknown image id '" + id + "'");
  return it->second;
}

std::shared_ptr<const SessionState> load_session(const SessionConfig& cfg) {
  nlohmann::json header;
  auto params = load_model(cfg.model, &header);
  auto data = load_data(cfg.data);
  if (params.num_classes != data.num_classes) {
    throw Error(Errc::shape_mismatch, "model has " + std::to_string(params.num_classes) + " classes, the dataset has " +
                                          std::to_string(data.num_classes));
  }
  const ChannelStats stats = header.contains("stats") ? channel_stats_from_json(header.at("stats"))
                                                      : compute_channel_stats(data.train, cfg.std_epsilon);
  auto& images = cfg.use_train_split ? data.train : data.test;
  const auto& truth = cfg.use_train_split ? data.train_truth : data.test_truth;

  std::vector<std::optional<PixelMask>> masks(images.size());
  if (!truth.empty()) {
    for (std::size_t k = 0; k < images.size(); ++k) masks[k] = truth[k].object_mask;
  } else if (cfg.spare_mask) {
    const auto mask = load_mask(*cfg.spare_mask);
    for (auto& m : masks) m = mask;
  }
  const std::string model_id = header.value("model_id", cfg.model.stem().string());
  return std::make_shared<const SessionState>(model_id, std::move(params), stats, std::move(images), std::move(masks),
                                              cfg.theta);
}

nlohmann::json image_list_json(const SessionState& s, std::size_t page, std::size_t page_size) {
  if (page_size == 0) throw Error(Errc::invalid_argument, "page_size must be positive");
  const auto& records = s.records();
  const std::size_t pages = (records.size() + page_size - 1) / page_size;
  nlohmann::json items = nlohmann::json::array();
  if (page < pages) {
    const std::size_t end = std::min(records.size(), (page + 1) * page_size);
    for (std::size_t k = page * page_size; k < end; ++k) {
      const auto& r = records[k];
      items.push_back({{"id", r.image_id},
                       {"label", r.true_label},
                       {"prediction", r.predicted_label},
                       {"misclassified", r.true_label != r.predicted_label}});
    }
  }
  return {{"page", page}, {"page_size", page_size}, {"pages", pages}, {"total", records.size()}, {"images", items}};
}

nlohmann::json image_json(const SessionState& s, std::size_t index) {
  const auto& im = s.images().at(index);
  const auto& r = s.records().at(index);
  image_io::Image8 rgb{kImageSide, kImageSide, kChannels, std::vector<std::uint8_t>(kImageValues)};
  for (std::size_t i = 0; i < kPlanePixels; ++i) {
    for (std::size_t c = 0; c < kChannels; ++c) rgb.data[i * kChannels + c] = im.image.pixels[c * kPlanePixels + i];
  }
  nlohmann::json out = {{"id", im.id},
                        {"label", r.true_label},
                        {"prediction", r.predicted_label},
                        {"scores", r.scores.values},
                        {"class_names", class_names(s.params().num_classes)},
                        {"png_base64", image_io::base64_encode(image_io::encode_png(rgb))}};
  const auto& mask = s.spare_mask(index);
  out["spare_mask"] = mask ? mask_to_rle(*mask) : nlohmann::json();
  return out;
}

nlohmann::json saliency_json(const SessionState& s, std::size_t index, SaliencySource method) {
  const auto& im = s.images().at(index);
  SaliencyMap map;
  if (method == SaliencySource::gradient) {
    map = gradient_saliency(s.params(), normalize_image(im.image, s.stats()));
  } else {
    const auto& params = s.params();
    map = occlusion_saliency([&params](const NormalizedImage& x) { return forward(params, x); }, im.image,
                             s.stats());
  }
  auto out = to_json(map);
  out["id"] = im.id;
  return out;
}

nlohmann::json stats_json(const SessionState& s) {
  const auto& counts = s.counts();
  const auto& rates = s.rates();
  const std::size_t c = counts.num_classes;
  nlohmann::json count_rows = nlohmann::json::array();
  nlohmann::json v_rows = nlohmann::json::array();
  for (std::size_t i = 0; i < c; ++i) {
    std::vector<std::uint64_t> crow;
    std::vector<double> vrow;
    for (std::size_t j = 0; j < c; ++j) {
      crow.push_back(counts.at(i, j));
      vrow.push_back(rates.cond(i, j));
    }
    count_rows.push_back(crow);
    v_rows.push_back(vrow);
  }
  return {{"model_id", s.model_id()},
          {"num_classes", c},
          {"class_names", class_names(c)},
          {"total", s.records().size()},
          {"counts", count_rows},
          {"u", rates.u},
          {"u_defined", rates.u_defined},
          {"v", v_rows},
          {"v_row_defined", rates.row_defined},
          {"network", to_json(s.network())}};
}

InterventionRequest parse_intervention_request(const SessionState& s, const nlohmann::json& body) {
  if (!body.is_object()) throw Error(Errc::invalid_argument, "request body must be a JSON object");
  if (!body.contains("id") || !body["id"].is_string()) {
    throw Error(Errc::invalid_argument, "field 'id' (string) is required");
  }
  InterventionRequest req;
  req.index = s.find(body["id"].get<std::string>());

  auto positive_int = [&](const char* key, std::size_t fallback) -> std::size_t {
    if (!body.contains(key)) return fallback;
    const auto& v = body[key];
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      throw Error(Errc::invalid_argument, std::string("field '") + key + "' must be a positive integer");
    }
    return v.get<std::size_t>();
  };
  if (body.contains("p")) {
    if (!body["p"].is_number()) throw Error(Errc::invalid_argument, "field 'p' must be a number");
    req.spec.top_p = body["p"].get<double>();
  }
  req.spec.box_width = positive_int("dx", req.spec.box_width);
  req.spec.box_height = positive_int("dy", req.spec.box_height);
  if (body.contains("space")) {
    if (!body["space"].is_string()) throw Error(Errc::invalid_argument, "field 'space' must be a string");
    req.spec.space = erasure_space_from_string(body["space"].get<std::string>());
  }
  if (body.contains("spare_mask") && !body["spare_mask"].is_null()) {
    const auto& m = body["spare_mask"];
    if (m.is_string()) {
      if (m.get<std::string>() != "ground_truth") {
        throw Error(Errc::invalid_argument, "spare_mask string must be 'ground_truth'");
      }
      const auto& truth = s.spare_mask(req.index);
      if (!truth) throw Error(Errc::invalid_argument, "this dataset has no ground-truth mask");
      req.spec.spare_mask = truth;
    } else {
      try {
        req.spec.spare_mask = mask_from_rle(m);
      } catch (const Error& e) {
        throw Error(Errc::invalid_argument, "spare_mask: " + e.message());
      }
    }
  }
  validate(req.spec);
  return req;
}

nlohmann::json intervene_json(const SessionState& s, const InterventionRequest& request) {
  return to_json(do_intervention(s.params(), s.stats(), s.images().at(request.index), request.spec, s.model_id()));
}

std::string render_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

namespace {

ApiResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

std::size_t parse_count(const std::map<std::string, std::string>& query, const std::string& key,
                        std::size_t fallback) {
  const auto it = query.find(key);
  if (it == query.end()) return fallback;
  std::size_t v = 0;
  const auto& s = it->second;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::invalid_argument, "query parameter '" + key + "' must be a non-negative integer");
  }
  return v;
}

bool starts_with(const std::string& s, const std::string& prefix, std::string& rest) {
  if (s.rfind(prefix, 0) != 0) return false;
  rest = s.substr(prefix.size());
  return true;
}

ApiResponse route(const SessionState& s, const ApiRequest& req) {
  std::string rest;
  const bool get = req.method == "GET";
  if (req.path == "/api/images") {
    if (!get) return error_response(405, "method_not_allowed", "use GET");
    const auto page_size = parse_count(req.query, "page_size", kDefaultPageSize);
    if (page_size == 0 || page_size > 1000) throw Error(Errc::invalid_argument, "page_size must be in [1,1000]");
    return {200, image_list_json(s, parse_count(req.query, "page", 0), page_size)};
  }
  if (starts_with(req.path, "/api/image/", rest)) {
    if (!get) return error_response(405, "method_not_allowed", "use GET");
    return {200, image_json(s, s.find(rest))};
  }
  if (starts_with(req.path, "/api/saliency/", rest)) {
    if (!get) return error_response(405, "method_not_allowed", "use GET");
    const auto it = req.query.find("method");
    SaliencySource method = SaliencySource::gradient;
    if (it != req.query.end()) method = saliency_source_from_string(it->second);
    return {200, saliency_json(s, s.find(rest), method)};
  }
  if (req.path == "/api/intervene") {
    if (req.method != "POST") return error_response(405, "method_not_allowed", "use POST");
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::invalid_argument, std::string("body is not valid JSON: ") + e.what());
    }
    return {200, intervene_json(s, parse_intervention_request(s, body))};
  }
  if (req.path == "/api/stats") {
    if (!get) return error_response(405, "method_not_allowed", "use GET");
    return {200, stats_json(s)};
  }
  return error_response(404, "not_found", "no route for " + req.method + " " + req.path);
}

}  // namespace

ApiResponse handle_request(const SessionState& s, const ApiRequest& request) {
  try {
    return route(s, request);
  } catch (const Error& e) {
    const int status = e.code() == Errc::not_found ? 404 : 400;
    return error_response(status, to_string(e.code()), e.message());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

struct HttpService::Impl {
  std::shared_ptr<const SessionState> session;
  httplib::Server server;
};

HttpService::HttpService(std::shared_ptr<const SessionState> session) : impl_(std::make_unique<Impl>()) {
  if (!session) throw Error(Errc::invalid_argument, "no session");
  impl_->session = std::move(session);
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest api{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) api.query.emplace(k, v);
    const auto out = handle_request(*impl_->session, api);
    res.status = out.status;
    res.set_content(render_json(out.body), "application/json");
  };
  impl_->server.Get(R"(/.*)", handler);
  impl_->server.Post(R"(/.*)", handler);
}

HttpService::~HttpService() = default;

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(Errc::io, "cannot bind to " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error(Errc::io, "cannot bind to " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::stop() { impl_->server.stop(); }

}  // namespace misclass
