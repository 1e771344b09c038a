#include <chrono>
#include <random>
#include <thread>

#include <doctest.h>
#include <httplib.h>

#include "misclass/mask_io.hpp"
#include "misclass/service.hpp"
#include "support/test_util.hpp"

using namespace misclass;
using testutil::TempDir;

namespace {

// Small planted session with a briefly trained model, shared by the cases.
const SessionState& session() {
  static const auto state = [] {
    auto cfg = confounded_planted_config();
    cfg.train_size = 150;
    cfg.test_size = 120;
    const auto data = generate_planted_dataset(cfg, 6);
    const auto stats = compute_channel_stats(data.train.images);
    const auto xs = normalize_all(data.train.images, stats);
    std::vector<std::size_t> labels;
    for (const auto& im : data.train.images) labels.push_back(im.label);
    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.batch_size = 16;
    tc.epochs = 2;
    auto params = train(init_model(1, 3), xs, labels, tc).params;
    std::vector<std::optional<PixelMask>> masks;
    for (const auto& t : data.test.truth) masks.emplace_back(t.object_mask);
    return std::make_shared<const SessionState>("svc", std::move(params), stats, data.test.images, std::move(masks));
  }();
  return *state;
}

ApiResponse get(const std::string& path, std::map<std::string, std::string> query = {}) {
  return handle_request(session(), {"GET", path, std::move(query), ""});
}

ApiResponse post(const std::string& path, const std::string& body) {
  return handle_request(session(), {"POST", path, {}, body});
}

void check_error(const ApiResponse& r, int status) {
  CHECK(r.status == status);
  REQUIRE(r.body.contains("error"));
  CHECK(r.body["error"]["code"].is_string());
  CHECK(r.body["error"]["message"].is_string());
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("image list pages through every record") {
  const auto& s = session();
  std::size_t seen = 0, misclassified = 0;
  for (std::size_t page = 0;; ++page) {
    const auto r = get("/api/images", {{"page", std::to_string(page)}, {"page_size", "25"}});
    REQUIRE(r.status == 200);
    CHECK(r.body["total"] == s.records().size());
    CHECK(r.body["pages"] == 5);
    if (r.body["images"].empty()) break;
    for (const auto& item : r.body["images"]) {
      CHECK(item["id"] == s.records()[seen].image_id);
      misclassified += item["misclassified"].get<bool>();
      ++seen;
    }
  }
  CHECK(seen == 120);

  // Gallery counts agree with the tallies behind /api/stats.
  const auto stats = get("/api/stats");
  REQUIRE(stats.status == 200);
  std::uint64_t off_diagonal = 0, total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto n = stats.body["counts"][i][j].get<std::uint64_t>();
      total += n;
      if (i != j) off_diagonal += n;
    }
  }
  CHECK(total == seen);
  CHECK(off_diagonal == misclassified);
  CHECK(stats.body["model_id"] == "svc");
  CHECK(stats.body["network"]["theta"] == 0.3);

  check_error(get("/api/images", {{"page", "x"}}), 400);
  check_error(get("/api/images", {{"page_size", "0"}}), 400);
  check_error(get("/api/images", {{"page_size", "1001"}}), 400);
  CHECK(get("/api/images", {{"page", "99"}}).body["images"].empty());
}

TEST_CASE("single image and saliency endpoints") {
  const auto& s = session();
  const auto r = get("/api/image/test:4");
  REQUIRE(r.status == 200);
  CHECK(r.body["label"] == s.records()[4].true_label);
  CHECK(r.body["scores"].size() == 3);
  CHECK(r.body["png_base64"].get<std::string>().rfind("iVBORw0KGgo", 0) == 0);
  CHECK(mask_from_rle(r.body["spare_mask"]) == *s.spare_mask(4));

  const auto g = get("/api/saliency/test:4");
  REQUIRE(g.status == 200);
  CHECK(g.body["source"] == "gradient");
  CHECK(g.body["grid"].size() == 32);
  const auto o = get("/api/saliency/test:4", {{"method", "occlusion"}});
  REQUIRE(o.status == 200);
  CHECK(o.body["source"] == "occlusion");

  check_error(get("/api/image/test:9999"), 404);
  check_error(get("/api/saliency/nope"), 404);
  check_error(get("/api/saliency/test:4", {{"method", "lime"}}), 400);
  check_error(get("/api/unknown"), 404);
  check_error(post("/api/stats", "{}"), 405);
  check_error(get("/api/intervene"), 405);
}

TEST_CASE("intervention requests: validation") {
  check_error(post("/api/intervene", "not json"), 400);
  check_error(post("/api/intervene", "[]"), 400);
  check_error(post("/api/intervene", R"({"p":0.05})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","p":0})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","p":1.5})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","dx":0})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","dy":2.5})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","spare_mask":"everything"})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","spare_mask":{"width":32,"height":32,"runs":[[0,2000]]}})"), 400);
  check_error(post("/api/intervene", R"({"id":"test:0","space":"hidden"})"), 400);
  check_error(post("/api/intervene", R"({"id":"missing"})"), 404);
  const auto ok = post("/api/intervene", R"({"id":"test:0"})");
  REQUIRE(ok.status == 200);
  CHECK(ok.body["top_p"] == 0.05);
  CHECK(ok.body["boxes"].size() <= 52);
}

TEST_CASE("HTTP and CLI code paths give identical intervention JSON") {
  const auto& s = session();
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> img(0, s.images().size() - 1), box(1, 11);
  std::uniform_real_distribution<double> p(0.01, 0.2);
  for (int k = 0; k < 20; ++k) {
    nlohmann::json body = {{"id", s.images()[img(rng)].id}, {"p", p(rng)}, {"dx", box(rng)}, {"dy", box(rng)}};
    if (k % 2) body["spare_mask"] = "ground_truth";
    if (k % 5 == 0) body["space"] = "normalized";
    const auto http = post("/api/intervene", body.dump());
    REQUIRE(http.status == 200);
    const auto direct = intervene_json(s, parse_intervention_request(s, body));
    CHECK(render_json(http.body) == render_json(direct));
  }
}

TEST_CASE("the HTTP server answers over a real socket") {
  auto state = std::shared_ptr<const SessionState>(&session(), [](const SessionState*) {});
  HttpService service(state);
  const int port = service.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread server([&] { service.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_connection_timeout(5);
  httplib::Result res;
  for (int attempt = 0; attempt < 50 && !res; ++attempt) {
    res = client.Get("/api/stats");
    if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  CHECK(nlohmann::json::parse(res->body) == get("/api/stats").body);

  const auto missing = client.Get("/api/image/absent");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  const std::string body = R"({"id":"test:3","p":0.05,"dx":7,"dy":7,"spare_mask":"ground_truth"})";
  const auto posted = client.Post("/api/intervene", body, "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 200);
  CHECK(posted->body == render_json(post("/api/intervene", body).body));

  const auto bad = client.Post("/api/intervene", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(nlohmann::json::parse(bad->body).contains("error"));

  const auto paged = client.Get("/api/images?page=1&page_size=10");
  REQUIRE(paged);
  CHECK(nlohmann::json::parse(paged->body)["images"][0]["id"] == session().records()[10].image_id);

  service.stop();
  server.join();
}

TEST_CASE("session construction rejects inconsistent inputs") {
  const auto images = testutil::random_images(4, 3, 1);
  const auto stats = compute_channel_stats(images);
  auto dup = images;
  dup[1].id = dup[0].id;
  CHECK_THROWS_AS(SessionState("m", init_model(0, 3), stats, dup, {}), Error);
  CHECK_THROWS_AS(SessionState("m", init_model(0, 3), stats, images, std::vector<std::optional<PixelMask>>(2)), Error);
  const SessionState ok("m", init_model(0, 3), stats, images, {});
  CHECK_FALSE(ok.spare_mask(0).has_value());
  CHECK_THROWS_AS(parse_intervention_request(ok, nlohmann::json{{"id", images[0].id}, {"spare_mask", "ground_truth"}}),
                  Error);
}

TEST_CASE("load_session reads a saved model and planted data") {
  TempDir dir;
  auto cfg = confounded_planted_config();
  cfg.train_size = 30;
  cfg.test_size = 12;
  save_planted_dataset(generate_planted_dataset(cfg, 2), dir / "data");
  const auto params = init_model(3, 3);
  save_model(params, dir / "m.bin");
  SessionConfig sc;
  sc.model = dir / "m.bin";
  sc.data.planted_dir = dir / "data";
  const auto s = load_session(sc);
  CHECK(s->model_id() == "m");
  CHECK(s->images().size() == 12);
  CHECK(s->spare_mask(0).has_value());
  sc.use_train_split = true;
  CHECK(load_session(sc)->images().size() == 30);

  save_model(init_model(3, 2), dir / "two.bin");
  sc.model = dir / "two.bin";
  CHECK_THROWS_AS(load_session(sc), Error);
}

}
