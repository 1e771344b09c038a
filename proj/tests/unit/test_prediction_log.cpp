#include <random>

#include <doctest.h>

#include "misclass/classifier.hpp"
#include "support/test_util.hpp"

using namespace misclass;

TEST_SUITE("prediction_log") {

TEST_CASE("JSONL round trip preserves every record") {
  std::mt19937_64 rng(3);
  std::vector<ClassificationRecord> records;
  for (std::size_t k = 0; k < 50; ++k) records.push_back(testutil::random_record(rng, 10, k));
  const auto text = format_prediction_log(records);
  CHECK(std::count(text.begin(), text.end(), '\n') == 50);
  CHECK(parse_prediction_log(text) == records);
}

TEST_CASE("malformed lines name the line number") {
  const std::string good =
      R"({"image_id":"a","true_label":0,"predicted_label":1,"scores":[0.2,0.8],"model_id":"m"})";
  const std::string cases[] = {
      "not json",
      R"({"image_id":"a","true_label":0,"scores":[0.2,0.8],"model_id":"m"})",
      R"({"image_id":"a","true_label":-1,"predicted_label":1,"scores":[0.2,0.8],"model_id":"m"})",
      R"({"image_id":"a","true_label":0,"predicted_label":1,"scores":[0.2,1.8],"model_id":"m"})",
      R"({"image_id":"a","true_label":5,"predicted_label":1,"scores":[0.2,0.8],"model_id":"m"})",
      R"({"image_id":"a","true_label":0,"predicted_label":1,"scores":[0.1,0.8,0.1],"model_id":"m"})",
  };
  for (const auto& bad : cases) {
    try {
      parse_prediction_log(good + "\n" + bad + "\n");
      FAIL("expected an error for " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::schema);
      CHECK(e.message().rfind("line 2:", 0) == 0);
    }
  }
}

TEST_CASE("a predicted label that is not the argmax is a consistency error") {
  const std::string line =
      R"({"image_id":"a","true_label":0,"predicted_label":0,"scores":[0.2,0.8],"model_id":"m"})";
  try {
    parse_prediction_log(line);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::consistency);
  }
}

TEST_CASE("blank lines are skipped and an expected class count is enforced") {
  const std::string line =
      R"({"image_id":"a","true_label":0,"predicted_label":1,"scores":[0.2,0.8],"model_id":"m"})";
  CHECK(parse_prediction_log("\n" + line + "\n\n").size() == 1);
  CHECK_THROWS_AS(parse_prediction_log(line, 3), Error);
  CHECK(parse_prediction_log("").empty());
}

}
