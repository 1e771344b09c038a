#include <sstream>

#include "misclass/classifier.hpp"
#include "misclass/image_io.hpp"

namespace misclass {

nlohmann::json to_json(const ClassificationRecord& record) {
  return {{"image_id", record.image_id},
          {"true_label", record.true_label},
          {"predicted_label", record.predicted_label},
          {"scores", record.scores.values},
          {"model_id", record.model_id}};
}

ClassificationRecord record_from_json(const nlohmann::json& j, std::size_t expected_classes) {
  ClassificationRecord r;
  try {
    if (!j.is_object()) throw Error(Errc::schema, "record is not a JSON object");
    r.image_id = j.at("image_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    const auto& t = j.at("true_label");
    const auto& p = j.at("predicted_label");
    if (!t.is_number_integer() || !p.is_number_integer() || t.get<long long>() < 0 || p.get<long long>() < 0) {
      throw Error(Errc::schema, "labels must be non-negative integers");
    }
    r.true_label = t.get<std::size_t>();
    r.predicted_label = p.get<std::size_t>();
    r.scores.values = j.at("scores").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, e.what());
  }

  const std::size_t classes = r.scores.values.size();
  if (classes < 2) throw Error(Errc::schema, "scores must hold at least 2 classes");
  if (expected_classes != 0 && classes != expected_classes) {
    throw Error(Errc::schema, "expected " + std::to_string(expected_classes) + " scores, got " +
                                  std::to_string(classes));
  }
  for (double s : r.scores.values) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error(Errc::schema, "score outside [0,1]");
  }
  if (r.true_label >= classes || r.predicted_label >= classes) {
    throw Error(Errc::schema, "label exceeds the score vector length");
  }
  if (argmax(r.scores.values) != r.predicted_label) {
    throw Error(Errc::consistency, "predicted_label " + std::to_string(r.predicted_label) +
                                       " is not argmax(scores) = " + std::to_string(argmax(r.scores.values)) +
                                       " for image '" + r.image_id + "'");
  }
  return r;
}

std::string format_prediction_log(std::span<const ClassificationRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

void save_prediction_log(std::span<const ClassificationRecord> records, const std::filesystem::path& path) {
  image_io::write_text(path, format_prediction_log(records));
}

std::vector<ClassificationRecord> parse_prediction_log(const std::string& text, std::size_t expected_classes) {
  std::vector<ClassificationRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t classes = expected_classes;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::schema, e.what());
      }
      out.push_back(record_from_json(j, classes));
      classes = out.back().scores.values.size();
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.message());
    }
  }
  return out;
}

std::vector<ClassificationRecord> load_prediction_log(const std::filesystem::path& path,
                                                      std::size_t expected_classes) {
  const auto bytes = image_io::read_file(path);
  return parse_prediction_log(std::string(bytes.begin(), bytes.end()), expected_classes);
}

}  // namespace misclass
