#include "misclass/stats.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "format.hpp"
#include "misclass/special.hpp"

namespace misclass {

using detail::fmt_double;

std::vector<std::string> class_names(std::size_t num_classes) {
  static const std::vector<std::string> cifar = {"plane", "car",  "bird",  "cat",  "deer",
                                                 "dog",   "frog", "horse", "ship", "truck"};
  if (num_classes == cifar.size()) return cifar;
  std::vector<std::string> out;
  for (std::size_t k = 0; k < num_classes; ++k) out.push_back("class" + std::to_string(k));
  return out;
}

ConfusionCounts ConfusionCounts::zeros(std::size_t num_classes) {
  return {num_classes, std::vector<std::uint64_t>(num_classes * num_classes, 0)};
}

std::uint64_t ConfusionCounts::class_total(std::size_t truth) const {
  const auto row = counts.begin() + static_cast<std::ptrdiff_t>(truth * num_classes);
  return std::accumulate(row, row + static_cast<std::ptrdiff_t>(num_classes), std::uint64_t{0});
}

std::uint64_t ConfusionCounts::misclassified(std::size_t truth) const {
  return class_total(truth) - at(truth, truth);
}

std::vector<std::uint64_t> ConfusionCounts::misclassified_per_class() const {
  std::vector<std::uint64_t> out(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) out[i] = misclassified(i);
  return out;
}

ConfusionCounts tally(std::span<const ClassificationRecord> records, std::optional<std::size_t> num_classes) {
  std::size_t classes = 0;
  if (num_classes) {
    classes = *num_classes;
  } else if (!records.empty()) {
    classes = records.front().scores.values.size();
  }
  if (classes == 0) throw Error(Errc::invalid_argument, "class count unknown for an empty log");

  ConfusionCounts out = ConfusionCounts::zeros(classes);
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (r.scores.values.size() != classes) {
      throw Error(Errc::shape_mismatch, "record " + std::to_string(k) + " has " +
                                            std::to_string(r.scores.values.size()) + " scores, expected " +
                                            std::to_string(classes));
    }
    if (r.true_label >= classes || r.predicted_label >= classes) {
      throw Error(Errc::invalid_label, "record " + std::to_string(k) + " has a label outside [0," +
                                           std::to_string(classes) + ")");
    }
    ++out.at(r.true_label, r.predicted_label);
  }
  return out;
}

MisclassRates misclass_rates(const ConfusionCounts& counts) {
  MisclassRates out{std::vector<double>(counts.num_classes, 0.0), std::vector<bool>(counts.num_classes, false)};
  for (std::size_t i = 0; i < counts.num_classes; ++i) {
    const auto n = counts.class_total(i);
    if (n == 0) continue;
    out.u[i] = static_cast<double>(counts.misclassified(i)) / static_cast<double>(n);
    out.defined[i] = true;
  }
  return out;
}

ConditionalRates conditional_rates(const ConfusionCounts& counts) {
  const std::size_t c = counts.num_classes;
  ConditionalRates out{std::vector<double>(c * c, 0.0), std::vector<bool>(c, false)};
  for (std::size_t i = 0; i < c; ++i) {
    const auto wrong = counts.misclassified(i);
    if (wrong == 0) continue;
    out.row_defined[i] = true;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == i) continue;
      out.v[i * c + j] = static_cast<double>(counts.at(i, j)) / static_cast<double>(wrong);
    }
  }
  return out;
}

RateTable rate_table(const ConfusionCounts& counts) {
  auto u = misclass_rates(counts);
  auto v = conditional_rates(counts);
  return {counts.num_classes, std::move(u.u), std::move(u.defined), std::move(v.v), std::move(v.row_defined)};
}

HomogeneityResult chi_squared_homogeneity(std::span<const std::vector<std::uint64_t>> tables) {
  if (tables.size() < 2) throw Error(Errc::invalid_argument, "homogeneity needs at least two models");
  const std::size_t classes = tables.front().size();
  for (const auto& row : tables) {
    if (row.size() != classes) throw Error(Errc::shape_mismatch, "per-model count vectors differ in length");
  }

  HomogeneityResult out;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  std::vector<double> row_sum(tables.size(), 0.0);
  std::vector<double> col_sum(classes, 0.0);
  for (std::size_t m = 0; m < tables.size(); ++m) {
    for (std::size_t c = 0; c < classes; ++c) {
      row_sum[m] += static_cast<double>(tables[m][c]);
      col_sum[c] += static_cast<double>(tables[m][c]);
    }
  }
  const double total = std::accumulate(row_sum.begin(), row_sum.end(), 0.0);
  if (total <= 0.0) throw Error(Errc::empty_input, "homogeneity table has no misclassifications");

  for (std::size_t m = 0; m < tables.size(); ++m) {
    if (row_sum[m] > 0.0) {
      rows.push_back(m);
    } else {
      out.dropped_rows.push_back(m);
      out.warnings.push_back("model " + std::to_string(m) + " has no misclassifications; row dropped");
    }
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (col_sum[c] > 0.0) {
      cols.push_back(c);
    } else {
      out.dropped_columns.push_back(c);
      out.warnings.push_back("class " + std::to_string(c) + " has zero expected count; column dropped");
    }
  }

  double stat = 0.0;
  for (std::size_t m : rows) {
    for (std::size_t c : cols) {
      const double expected = row_sum[m] * col_sum[c] / total;
      const double diff = static_cast<double>(tables[m][c]) - expected;
      stat += diff * diff / expected;
    }
  }
  out.statistic = stat;
  out.degrees_of_freedom = rows.size() >= 1 && cols.size() >= 1 ? (rows.size() - 1) * (cols.size() - 1) : 0;
  out.p_value = out.degrees_of_freedom == 0
                    ? 1.0
                    : std::clamp(special::chi_squared_sf(stat, static_cast<double>(out.degrees_of_freedom)), 0.0, 1.0);
  return out;
}

const char* to_string(MisclassCategory c) {
  return c == MisclassCategory::morphology ? "morphology" : "interference";
}

MisclassCategory category_from_string(const std::string& s) {
  if (s == "morphology") return MisclassCategory::morphology;
  if (s == "interference") return MisclassCategory::interference;
  throw Error(Errc::schema, "unknown misclassification category '" + s + "'");
}

const char* to_string(ScoreMeasure m) { return m == ScoreMeasure::ratio ? "ratio" : "difference"; }

CategoryMap default_category_map() {
  constexpr std::size_t plane = 0, car = 1, cat = 3, dog = 5, frog = 6, ship = 8, truck = 9;
  return {{{cat, dog}, MisclassCategory::morphology},   {{dog, cat}, MisclassCategory::morphology},
          {{car, truck}, MisclassCategory::morphology}, {{truck, car}, MisclassCategory::morphology},
          {{frog, cat}, MisclassCategory::interference}, {{ship, plane}, MisclassCategory::interference}};
}

nlohmann::json to_json(const CategoryMap& map) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [pair, cat] : map) {
    pairs.push_back({{"from", pair.first}, {"to", pair.second}, {"category", to_string(cat)}});
  }
  return {{"pairs", pairs}};
}

CategoryMap category_map_from_json(const nlohmann::json& j) {
  CategoryMap out;
  try {
    for (const auto& p : j.at("pairs")) {
      const auto from = p.at("from").get<std::size_t>();
      const auto to = p.at("to").get<std::size_t>();
      if (from == to) throw Error(Errc::schema, "category pair maps a class onto itself");
      out[{from, to}] = category_from_string(p.at("category").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::schema, std::string("category map: ") + e.what());
  }
  return out;
}

std::map<MisclassCategory, ScoreSample> score_samples(std::span<const ClassificationRecord> records,
                                                      const CategoryMap& categories, ScoreMeasure measure) {
  std::map<MisclassCategory, ScoreSample> out;
  for (auto c : {MisclassCategory::morphology, MisclassCategory::interference}) {
    out[c].category = c;
    out[c].measure = measure;
  }
  for (const auto& r : records) {
    if (r.true_label == r.predicted_label) continue;
    const auto it = categories.find({r.true_label, r.predicted_label});
    if (it == categories.end()) continue;
    const double truth = r.scores.values.at(r.true_label);
    const double pred = r.scores.values.at(r.predicted_label);
    double value = 0.0;
    if (measure == ScoreMeasure::ratio) {
      if (!(pred > 0.0)) {
        throw Error(Errc::consistency, "predicted-class score is zero for image '" + r.image_id + "'");
      }
      value = truth / pred;
    } else {
      value = truth - pred;
    }
    auto& sample = out[it->second];
    sample.values.push_back(value);
    sample.image_ids.push_back(r.image_id);
  }
  return out;
}

std::map<MisclassCategory, ScoreSample> score_ratios(std::span<const ClassificationRecord> records,
                                                     const CategoryMap& categories) {
  return score_samples(records, categories, ScoreMeasure::ratio);
}

std::string counts_to_csv(const ConfusionCounts& counts) {
  std::ostringstream out;
  const auto names = class_names(counts.num_classes);
  out << "true\\predicted";
  for (const auto& n : names) out << "," << n;
  out << "\n";
  for (std::size_t i = 0; i < counts.num_classes; ++i) {
    out << names[i];
    for (std::size_t j = 0; j < counts.num_classes; ++j) out << "," << counts.at(i, j);
    out << "\n";
  }
  return out.str();
}

std::string u_to_csv(const ConfusionCounts& counts, const RateTable& rates) {
  std::ostringstream out;
  const auto names = class_names(rates.num_classes);
  out << "class,name,n_i,misclassified,u,defined\n";
  for (std::size_t i = 0; i < rates.num_classes; ++i) {
    out << i << "," << names[i] << "," << counts.class_total(i) << "," << counts.misclassified(i) << ","
        << fmt_double(rates.u[i]) << "," << (rates.u_defined[i] ? 1 : 0) << "\n";
  }
  return out.str();
}

std::string v_to_csv(const RateTable& rates) {
  std::ostringstream out;
  const auto names = class_names(rates.num_classes);
  out << "true\\misclassified";
  for (const auto& n : names) out << "," << n;
  out << ",row_defined\n";
  for (std::size_t i = 0; i < rates.num_classes; ++i) {
    out << names[i];
    for (std::size_t j = 0; j < rates.num_classes; ++j) out << "," << fmt_double(rates.cond(i, j));
    out << "," << (rates.row_defined[i] ? 1 : 0) << "\n";
  }
  return out.str();
}

nlohmann::json to_json(const HomogeneityResult& result) {
  return {{"test", "pearson_chi_squared_homogeneity"},
          {"statistic", result.statistic},
          {"degrees_of_freedom", result.degrees_of_freedom},
          {"p_value", result.p_value},
          {"dropped_columns", result.dropped_columns},
          {"dropped_rows", result.dropped_rows},
          {"warnings", result.warnings}};
}

std::string samples_to_csv(const std::map<MisclassCategory, ScoreSample>& samples) {
  std::ostringstream out;
  out << "category,measure,image_id,value\n";
  for (const auto& [cat, sample] : samples) {
    for (std::size_t k = 0; k < sample.values.size(); ++k) {
      out << to_string(cat) << "," << to_string(sample.measure) << "," << sample.image_ids[k] << ","
          << fmt_double(sample.values[k]) << "\n";
    }
  }
  return out.str();
}

}  // namespace misclass
