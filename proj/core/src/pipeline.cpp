#include "misclass/pipeline.hpp"

#include <ostream>

#include "misclass/image_io.hpp"
#include "misclass/mask_io.hpp"
#include "misclass/stats.hpp"

namespace misclass {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> text_bytes(const std::string& s) { return {s.begin(), s.end()}; }

std::vector<std::uint8_t> json_bytes(const nlohmann::json& j) { return text_bytes(j.dump(2) + "\n"); }

void require_file(const fs::path& path, const std::string& what) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw Error(Errc::not_found, what + " '" + path.string() + "' does not exist");
}

template <typename T>
std::vector<T> truncate(std::vector<T> v, std::size_t limit) {
  if (limit != 0 && v.size() > limit) v.resize(limit);
  return v;
}

struct ModelEntry {
  std::string id;
  std::string source;  // "trained" or the file it was loaded from
  ModelParams params;
  ChannelStats stats;
  std::vector<EpochStats> trace;
  std::vector<ClassificationRecord> records;
  ConfusionCounts counts;
  RateTable rates;
  MisclassNetwork network;
};

// Runs `fn`, tagging any library error with the stage name.
template <typename Fn>
auto stage(const std::string& name, std::ostream* progress, Fn&& fn) {
  if (progress) *progress << "[" << name << "]\n";
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    throw PipelineError(name, e);
  } catch (const nlohmann::json::exception& e) {
    throw PipelineError(name, Error(Errc::schema, e.what()));
  } catch (const std::exception& e) {
    throw PipelineError(name, Error(Errc::io, e.what()));
  }
}

void validate_config(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) throw Error(Errc::config, "no output directory given");
  if (!(cfg.theta >= 0.0 && cfg.theta <= 1.0)) throw Error(Errc::config, "theta must lie in [0,1]");
  if (cfg.model_paths.empty()) {
    if (cfg.num_models == 0) throw Error(Errc::config, "need at least one model");
    if (!(cfg.train.learning_rate > 0.0)) throw Error(Errc::config, "learning rate must be positive");
    if (cfg.train.batch_size == 0 || cfg.train.epochs == 0) {
      throw Error(Errc::config, "batch size and epochs must be positive");
    }
  }
  if (cfg.std_epsilon < 0.0) throw Error(Errc::config, "std epsilon must be non-negative");
  if (cfg.sweep.top_p.empty() || cfg.sweep.widths.empty() || cfg.sweep.heights.empty()) {
    throw Error(Errc::config, "sweep grid must have at least one value per axis");
  }
  for (double p : cfg.sweep.top_p) {
    for (auto w : cfg.sweep.widths) {
      for (auto h : cfg.sweep.heights) validate(InterventionSpec{p, w, h, std::nullopt, cfg.sweep.space});
    }
  }
  check_paths(cfg.data);
  for (const auto& p : cfg.model_paths) require_file(p, "model");
  if (cfg.category_map) require_file(*cfg.category_map, "category map");
  if (cfg.spare_mask) require_file(*cfg.spare_mask, "spare mask");
}

CategoryMap resolve_categories(const RunConfig& cfg, std::size_t num_classes) {
  CategoryMap map;
  if (cfg.category_map) {
    const auto bytes = image_io::read_file(*cfg.category_map);
    map = category_map_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
  } else if (num_classes == kCifarClasses) {
    map = default_category_map();
  }
  for (const auto& [pair, cat] : map) {
    if (pair.first >= num_classes || pair.second >= num_classes) {
      throw Error(Errc::config, "category map refers to a class outside [0," + std::to_string(num_classes) + ")");
    }
  }
  return map;
}

nlohmann::json ttest_report(const RunConfig& cfg, const ModelEntry& model, const CategoryMap& categories,
                            std::string& samples_csv) {
  const auto samples = score_ratios(model.records, categories);
  samples_csv = samples_to_csv(samples);
  const auto& morph = samples.at(MisclassCategory::morphology).values;
  const auto& inter = samples.at(MisclassCategory::interference).values;
  nlohmann::json out = {{"model_id", model.id}, {"measure", "ratio"}, {"category_map", to_json(categories)}};
  if (morph.size() < 2 || inter.size() < 2) {
    out["status"] = "skipped";
    out["reason"] = "each category needs at least 2 misclassified images";
    out["n1"] = morph.size();
    out["n2"] = inter.size();
    return out;
  }
  try {
    out["status"] = "ok";
    out["result"] = to_json(two_sample_t_test(morph, inter, cfg.df_rule), "morphology", "interference");
  } catch (const Error& e) {
    if (e.code() != Errc::infinite_t) throw;
    out["status"] = "undefined";
    out["reason"] = e.message();
  }
  return out;
}

}  // namespace

PipelineError::PipelineError(std::string stage, const Error& cause)
    : Error(cause.code(), "stage " + stage + ": " + cause.message()), stage_(std::move(stage)) {}

void check_paths(const DatasetSpec& spec) {
  const bool cifar = !spec.train_files.empty() || !spec.test_files.empty();
  if (spec.planted_dir && cifar) throw Error(Errc::config, "give either a planted dataset or CIFAR files, not both");
  if (spec.planted_dir) {
    for (const char* f : {"train.bin", "test.bin", "manifest.json"}) {
      require_file(*spec.planted_dir / f, "planted dataset file");
    }
    return;
  }
  if (spec.train_files.empty() || spec.test_files.empty()) {
    throw Error(Errc::config, "need both training and test data");
  }
  if (spec.num_classes < 2 || spec.num_classes > kCifarClasses) {
    throw Error(Errc::config, "CIFAR class count must be in [2,10]");
  }
  for (const auto& p : spec.train_files) require_file(p, "training file");
  for (const auto& p : spec.test_files) require_file(p, "test file");
}

std::vector<LabeledImage> select_classes(std::vector<LabeledImage> images, std::size_t num_classes,
                                         std::size_t limit) {
  std::erase_if(images, [&](const LabeledImage& im) { return im.label >= num_classes; });
  return truncate(std::move(images), limit);
}

LoadedData load_data(const DatasetSpec& spec) {
  check_paths(spec);
  LoadedData out;
  if (spec.planted_dir) {
    auto data = load_planted_dataset(*spec.planted_dir);
    out.num_classes = data.config.num_classes;
    out.train = truncate(std::move(data.train.images), spec.train_limit);
    out.train_truth = truncate(std::move(data.train.truth), spec.train_limit);
    out.test = truncate(std::move(data.test.images), spec.test_limit);
    out.test_truth = truncate(std::move(data.test.truth), spec.test_limit);
  } else {
    auto gather = [&](const std::vector<fs::path>& files, std::size_t limit) {
      std::vector<LabeledImage> all;
      for (const auto& f : files) {
        auto part = load_cifar10(f);
        all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
      }
      return select_classes(std::move(all), spec.num_classes, limit);
    };
    out.num_classes = spec.num_classes;
    out.train = gather(spec.train_files, spec.train_limit);
    out.test = gather(spec.test_files, spec.test_limit);
  }
  if (out.train.empty()) throw Error(Errc::empty_input, "training split is empty");
  if (out.test.empty()) throw Error(Errc::empty_input, "test split is empty");
  return out;
}

nlohmann::json to_json(const RunConfig& cfg) {
  auto paths = [](const std::vector<fs::path>& ps) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : ps) a.push_back(p.string());
    return a;
  };
  nlohmann::json data = {{"train_files", paths(cfg.data.train_files)},
                         {"test_files", paths(cfg.data.test_files)},
                         {"num_classes", cfg.data.num_classes},
                         {"train_limit", cfg.data.train_limit},
                         {"test_limit", cfg.data.test_limit}};
  data["planted_dir"] = cfg.data.planted_dir ? nlohmann::json(cfg.data.planted_dir->string()) : nlohmann::json();
  return {{"data", data},
          {"model_paths", paths(cfg.model_paths)},
          {"num_models", cfg.num_models},
          {"train", to_json(cfg.train)},
          {"theta", cfg.theta},
          {"sweep",
           {{"top_p", cfg.sweep.top_p},
            {"dx", cfg.sweep.widths},
            {"dy", cfg.sweep.heights},
            {"space", to_string(cfg.sweep.space)}}},
          {"df_rule", to_string(cfg.df_rule)},
          {"category_map", cfg.category_map ? nlohmann::json(cfg.category_map->string()) : nlohmann::json()},
          {"spare_mask", cfg.spare_mask ? nlohmann::json(cfg.spare_mask->string()) : nlohmann::json()},
          {"seed", cfg.seed},
          {"std_epsilon", cfg.std_epsilon},
          {"controls", cfg.controls}};
}

ReportBundle build_report(const RunConfig& cfg, std::ostream* progress) {
  ReportBundle bundle;
  auto& files = bundle.files;

  stage("config", progress, [&] { validate_config(cfg); });
  const auto data = stage("load", progress, [&] { return load_data(cfg.data); });
  const auto categories = stage("config", nullptr, [&] { return resolve_categories(cfg, data.num_classes); });
  const std::optional<PixelMask> user_mask =
      stage("config", nullptr, [&]() -> std::optional<PixelMask> {
        if (!cfg.spare_mask) return std::nullopt;
        return load_mask(*cfg.spare_mask);
      });

  std::vector<ModelEntry> models;
  if (cfg.model_paths.empty()) {
    const auto stats = stage("stats", progress, [&] { return compute_channel_stats(data.train, cfg.std_epsilon); });
    const auto x = stage("stats", nullptr, [&] { return normalize_all(data.train, stats); });
    std::vector<std::size_t> labels;
    for (const auto& im : data.train) labels.push_back(im.label);
    for (std::size_t k = 0; k < cfg.num_models; ++k) {
      ModelEntry m;
      m.id = "model" + std::to_string(k);
      m.source = "trained";
      m.stats = stats;
      stage("train", progress, [&] {
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed + k;
        auto result = train(init_model(cfg.seed + k, data.num_classes), x, labels, tc);
        m.params = std::move(result.params);
        m.trace = std::move(result.trace);
        const nlohmann::json header = {{"model_id", m.id}, {"train", to_json(tc)}, {"stats", to_json(stats)}};
        files["models/" + m.id + ".bin"] = encode_model(m.params, header);
        files["train_trace_" + m.id + ".csv"] = text_bytes(trace_to_csv(m.trace));
      });
      models.push_back(std::move(m));
    }
  } else {
    for (std::size_t k = 0; k < cfg.model_paths.size(); ++k) {
      ModelEntry m;
      m.id = "model" + std::to_string(k);
      m.source = cfg.model_paths[k].string();
      stage("load-model", progress, [&] {
        nlohmann::json header;
        m.params = load_model(cfg.model_paths[k], &header);
        if (m.params.num_classes != data.num_classes) {
          throw Error(Errc::shape_mismatch, "model '" + m.source + "' has " + std::to_string(m.params.num_classes) +
                                                " classes, the dataset has " + std::to_string(data.num_classes));
        }
        m.stats = header.contains("stats") ? channel_stats_from_json(header.at("stats"))
                                           : compute_channel_stats(data.train, cfg.std_epsilon);
      });
      models.push_back(std::move(m));
    }
  }

  for (auto& m : models) {
    stage("classify", progress, [&] {
      m.records = classify(m.params, m.stats, data.test, m.id);
      files["predictions_" + m.id + ".jsonl"] = text_bytes(format_prediction_log(m.records));
    });
    stage("analyze", progress, [&] {
      m.counts = tally(m.records, data.num_classes);
      m.rates = rate_table(m.counts);
      files["counts_" + m.id + ".csv"] = text_bytes(counts_to_csv(m.counts));
      files["u_" + m.id + ".csv"] = text_bytes(u_to_csv(m.counts, m.rates));
      files["v_" + m.id + ".csv"] = text_bytes(v_to_csv(m.rates));
    });
    stage("network", progress, [&] {
      m.network = build_network(m.rates, cfg.theta, m.id);
      files["network_" + m.id + ".dot"] = text_bytes(export_dot(m.network, class_names(data.num_classes)));
      files["network_" + m.id + ".json"] = json_bytes(to_json(m.network));
    });
  }

  stage("network", progress, [&] {
    std::vector<MisclassNetwork> nets;
    for (const auto& m : models) nets.push_back(m.network);
    const auto consistency = consistent_edges(nets);
    nlohmann::json common = nlohmann::json::array();
    for (const auto& [from, to] : consistency.common) common.push_back({from, to});
    nlohmann::json presence = nlohmann::json::array();
    for (const auto& [edge, n] : consistency.presence) presence.push_back({{"edge", {edge.first, edge.second}}, {"models", n}});
    nlohmann::json symmetric = nlohmann::json::object();
    for (const auto& m : models) {
      nlohmann::json pairs = nlohmann::json::array();
      for (const auto& [a, b] : symmetric_pairs(m.network).symmetric) pairs.push_back({a, b});
      symmetric[m.id] = pairs;
    }
    files["network_consistency.json"] =
        json_bytes({{"theta", cfg.theta}, {"common_edges", common}, {"edge_presence", presence}, {"symmetric_pairs", symmetric}});
  });

  stage("homogeneity", progress, [&] {
    nlohmann::json report;
    std::vector<std::vector<std::uint64_t>> tables;
    std::uint64_t total = 0;
    for (const auto& m : models) {
      tables.push_back(m.counts.misclassified_per_class());
      for (auto n : tables.back()) total += n;
    }
    if (tables.size() < 2) {
      report = {{"status", "skipped"}, {"reason", "homogeneity needs at least two models"}};
    } else if (total == 0) {
      report = {{"status", "skipped"}, {"reason", "no model misclassified any image"}};
    } else {
      report = to_json(chi_squared_homogeneity(tables));
      report["status"] = "ok";
    }
    report["table"] = tables;
    files["homogeneity.json"] = json_bytes(report);
  });

  stage("ttest", progress, [&] {
    std::string csv;
    files["ttest.json"] = json_bytes(ttest_report(cfg, models.front(), categories, csv));
    files["score_ratios.csv"] = text_bytes(csv);
  });

  stage("sweep", progress, [&] {
    const auto& m = models.front();
    const bool planted = !data.test_truth.empty();
    auto mask_for = [&](std::size_t k) -> std::optional<PixelMask> {
      if (planted) return data.test_truth[k].object_mask;
      return user_mask;
    };
    std::vector<InterventionSubject> misclassified, patch_caused, controls;
    for (std::size_t k = 0; k < m.records.size(); ++k) {
      const auto& r = m.records[k];
      InterventionSubject s{data.test[k], mask_for(k)};
      if (r.predicted_label != r.true_label) {
        if (planted && data.test_truth[k].interference &&
            static_cast<int>(r.predicted_label) == data.test_truth[k].patch_class) {
          patch_caused.push_back(s);
        }
        misclassified.push_back(std::move(s));
      } else if (controls.size() < cfg.controls) {
        controls.push_back(std::move(s));
      }
    }
    files["sweep.csv"] = text_bytes(sweep_to_csv(sweep(m.params, m.stats, misclassified, controls, cfg.sweep, m.id)));
    if (planted) {
      files["sweep_patch_caused.csv"] =
          text_bytes(sweep_to_csv(sweep(m.params, m.stats, patch_caused, controls, cfg.sweep, m.id)));
    }
  });

  nlohmann::json summary = {{"format", "misclass-report-v1"}, {"num_classes", data.num_classes},
                            {"train_size", data.train.size()}, {"test_size", data.test.size()},
                            {"config", to_json(cfg)}};
  nlohmann::json model_list = nlohmann::json::array();
  for (const auto& m : models) {
    std::size_t correct = 0;
    for (const auto& r : m.records) correct += r.predicted_label == r.true_label ? 1 : 0;
    model_list.push_back({{"model_id", m.id},
                          {"source", m.source},
                          {"stats", to_json(m.stats)},
                          {"test_accuracy", static_cast<double>(correct) / static_cast<double>(m.records.size())},
                          {"edges", m.network.edges.size()}});
  }
  summary["models"] = model_list;
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, bytes] : files) listing.push_back(name);
  listing.push_back("summary.json");
  summary["files"] = listing;
  files["summary.json"] = json_bytes(summary);
  return bundle;
}

void write_bundle(const ReportBundle& bundle, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::io, "cannot create '" + dir.string() + "': " + ec.message());
  for (const auto& [name, bytes] : bundle.files) {
    const fs::path path = dir / name;
    if (path.has_parent_path()) {
      fs::create_directories(path.parent_path(), ec);
      if (ec) throw Error(Errc::io, "cannot create '" + path.parent_path().string() + "': " + ec.message());
    }
    image_io::write_file(path, bytes);
  }
}

int run_pipeline(const RunConfig& cfg, std::ostream& err, std::ostream* progress) {
  ReportBundle bundle;
  try {
    bundle = build_report(cfg, progress);
  } catch (const PipelineError& e) {
    err << "misclass: " << e.what() << "\n";
    return e.stage() == "config" || e.code() == Errc::not_found ? 2 : 1;
  }
  try {
    stage("write", progress, [&] { write_bundle(bundle, cfg.output_dir); });
  } catch (const PipelineError& e) {
    err << "misclass: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace misclass
