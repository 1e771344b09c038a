#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/classifier.hpp"

namespace misclass {

/// CIFAR-10 names for 10 classes, "class<k>" otherwise.
std::vector<std::string> class_names(std::size_t num_classes);

/// counts[i][j] = number of images of true class i predicted as j.
struct ConfusionCounts {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // row-major C x C

  static ConfusionCounts zeros(std::size_t num_classes);

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * num_classes + predicted]; }
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * num_classes + predicted]; }

  /// n_i
  std::uint64_t class_total(std::size_t truth) const;
  /// n_{i->j, j!=i}
  std::uint64_t misclassified(std::size_t truth) const;
  /// n_{i->j, j!=i} for every class.
  std::vector<std::uint64_t> misclassified_per_class() const;

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Class-wise misclassification rates u and conditional rates V, V[i][j] = v_{j|i}.
/// Classes without images (u) or without misclassifications (rows of V) are
/// flagged undefined and stored as 0.
struct RateTable {
  std::size_t num_classes = 0;
  std::vector<double> u;
  std::vector<bool> u_defined;
  std::vector<double> v;  // row-major C x C, zero diagonal
  std::vector<bool> row_defined;

  double cond(std::size_t truth, std::size_t predicted) const { return v[truth * num_classes + predicted]; }
};

/// `num_classes` is required for an empty log; otherwise it is taken from
/// the records' score vectors. Throws Errc::shape_mismatch on mixed C.
ConfusionCounts tally(std::span<const ClassificationRecord> records,
                      std::optional<std::size_t> num_classes = std::nullopt);

struct MisclassRates {
  std::vector<double> u;
  std::vector<bool> defined;
};

struct ConditionalRates {
  std::vector<double> v;  // row-major
  std::vector<bool> row_defined;
};

MisclassRates misclass_rates(const ConfusionCounts& counts);
ConditionalRates conditional_rates(const ConfusionCounts& counts);
RateTable rate_table(const ConfusionCounts& counts);

// ---- chi-squared homogeneity ------------------------------------------------

struct HomogeneityResult {
  double statistic = 0.0;
  std::size_t degrees_of_freedom = 0;
  double p_value = 1.0;
  std::vector<std::size_t> dropped_columns;  // classes with zero expected count
  std::vector<std::size_t> dropped_rows;     // models with no misclassifications
  std::vector<std::string> warnings;
};

/// Pearson chi-squared test on the M x C table of per-model misclassified
/// counts. df = (M'-1)(C'-1) after dropping all-zero columns/rows; p is the
/// upper chi-squared tail (1 when df = 0).
HomogeneityResult chi_squared_homogeneity(std::span<const std::vector<std::uint64_t>> tables);

// ---- score samples ---------------------------------------------------------

enum class MisclassCategory { morphology, interference };

const char* to_string(MisclassCategory c);
MisclassCategory category_from_string(const std::string& s);

/// Ordered (true -> predicted) pair to category.
using CategoryMap = std::map<std::pair<std::size_t, std::size_t>, MisclassCategory>;

/// cat<->dog and car<->truck as morphology; frog->cat and ship->plane as
/// interference (CIFAR-10 class indices).
CategoryMap default_category_map();

/// {"pairs": [{"from": 3, "to": 5, "category": "morphology"}, ...]}
nlohmann::json to_json(const CategoryMap& map);
CategoryMap category_map_from_json(const nlohmann::json& j);

enum class ScoreMeasure { ratio, difference };

const char* to_string(ScoreMeasure m);

struct ScoreSample {
  MisclassCategory category = MisclassCategory::morphology;
  ScoreMeasure measure = ScoreMeasure::ratio;
  std::vector<double> values;
  std::vector<std::string> image_ids;
};

/// One sample per category. For each misclassified record whose pair is
/// mapped: ratio = scores[true] / scores[pred], difference = scores[true] - scores[pred].
/// Unmapped pairs and correct predictions are skipped.
std::map<MisclassCategory, ScoreSample> score_samples(std::span<const ClassificationRecord> records,
                                                      const CategoryMap& categories,
                                                      ScoreMeasure measure = ScoreMeasure::ratio);

std::map<MisclassCategory, ScoreSample> score_ratios(std::span<const ClassificationRecord> records,
                                                     const CategoryMap& categories);

// ---- exports ----------------------------------------------------------------

std::string counts_to_csv(const ConfusionCounts& counts);
/// class,name,n_i,misclassified,u,defined
std::string u_to_csv(const ConfusionCounts& counts, const RateTable& rates);
/// Heatmap grid: rows = correct class, columns = misclassified class.
std::string v_to_csv(const RateTable& rates);
nlohmann::json to_json(const HomogeneityResult& result);
/// category,measure,image_id,value
std::string samples_to_csv(const std::map<MisclassCategory, ScoreSample>& samples);

}  // namespace misclass
