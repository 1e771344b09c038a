#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "misclass/causal_test.hpp"
#include "misclass/classifier.hpp"
#include "misclass/dataset.hpp"
#include "misclass/intervention.hpp"
#include "misclass/netgraph.hpp"

namespace misclass {

/// Where images come from: a planted dataset directory, or CIFAR-10 binary
/// batch files. CIFAR records with labels >= num_classes are dropped, so
/// num_classes = 2 selects plane vs car.
struct DatasetSpec {
  std::optional<std::filesystem::path> planted_dir;
  std::vector<std::filesystem::path> train_files;
  std::vector<std::filesystem::path> test_files;
  std::size_t num_classes = kCifarClasses;
  std::size_t train_limit = 0;  // 0 keeps everything
  std::size_t test_limit = 0;
};

struct LoadedData {
  std::size_t num_classes = 0;
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> test;
  /// Planted ground truth, parallel to `train` / `test`; empty for CIFAR.
  std::vector<PlantedTruth> train_truth;
  std::vector<PlantedTruth> test_truth;
};

/// Throws Errc::not_found for a missing path, Errc::config for an empty or
/// contradictory spec.
void check_paths(const DatasetSpec& spec);
LoadedData load_data(const DatasetSpec& spec);

/// Keeps images with label < num_classes, then truncates to `limit` (0 = all).
std::vector<LabeledImage> select_classes(std::vector<LabeledImage> images, std::size_t num_classes,
                                         std::size_t limit);

struct RunConfig {
  DatasetSpec data;
  /// Pretrained models to analyze. When empty, `num_models` models are
  /// trained with seeds seed, seed + 1, ...
  std::vector<std::filesystem::path> model_paths;
  std::size_t num_models = 2;
  TrainConfig train;
  std::filesystem::path output_dir;
  double theta = kDefaultTheta;
  SweepGrid sweep;
  DfRule df_rule = DfRule::minus_one;
  std::optional<std::filesystem::path> category_map;
  /// Spare mask used for every image when the dataset has no ground truth.
  std::optional<std::filesystem::path> spare_mask;
  std::uint64_t seed = 0;
  double std_epsilon = 0.0;
  std::size_t controls = 200;
};

nlohmann::json to_json(const RunConfig& cfg);

/// A stage failure; `stage()` names the pipeline step that threw.
class PipelineError : public Error {
public:
  PipelineError(std::string stage, const Error& cause);
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

/// Report files keyed by path relative to the output directory.
struct ReportBundle {
  std::map<std::string, std::vector<std::uint8_t>> files;
};

/// Runs every stage in memory. Throws PipelineError.
ReportBundle build_report(const RunConfig& cfg, std::ostream* progress = nullptr);

void write_bundle(const ReportBundle& bundle, const std::filesystem::path& dir);

/// build_report + write_bundle. Returns 0 on success, 2 when an input path
/// is missing or the config is invalid (nothing is written), 1 when a later
/// stage fails. Failures are reported on `err` with the stage name.
int run_pipeline(const RunConfig& cfg, std::ostream& err, std::ostream* progress = nullptr);

}  // namespace misclass
