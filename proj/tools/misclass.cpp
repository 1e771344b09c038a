// misclass: command-line front end for the misclassification analysis library.

#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "misclass/image_io.hpp"
#include "misclass/mask_io.hpp"
#include "misclass/pipeline.hpp"
#include "misclass/service.hpp"

namespace fs = std::filesystem;
using namespace misclass;

namespace {

struct DataOptions {
  std::string planted;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  std::size_t num_classes = kCifarClasses;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;

  DatasetSpec spec() const {
    DatasetSpec s;
    if (!planted.empty()) s.planted_dir = planted;
    s.train_files.assign(train_files.begin(), train_files.end());
    s.test_files.assign(test_files.begin(), test_files.end());
    s.num_classes = num_classes;
    s.train_limit = train_limit;
    s.test_limit = test_limit;
    return s;
  }
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--planted", o.planted, "Planted dataset directory (from gen-planted)");
  cmd->add_option("--cifar-train", o.train_files, "CIFAR-10 binary training batch files");
  cmd->add_option("--cifar-test", o.test_files, "CIFAR-10 binary test batch files");
  cmd->add_option("--classes", o.num_classes, "Keep CIFAR classes 0..N-1 (2 = plane vs car)")->capture_default_str();
  cmd->add_option("--train-limit", o.train_limit, "Use at most N training images (0 = all)");
  cmd->add_option("--test-limit", o.test_limit, "Use at most N test images (0 = all)");
}

struct SessionOptions {
  DataOptions data;
  std::string model;
  std::string split = "test";
  double theta = kDefaultTheta;
  double std_epsilon = 0.0;
  std::string spare_mask;

  SessionConfig config() const {
    SessionConfig c;
    c.model = model;
    c.data = data.spec();
    c.use_train_split = split == "train";
    c.theta = theta;
    c.std_epsilon = std_epsilon;
    if (!spare_mask.empty()) c.spare_mask = spare_mask;
    return c;
  }
};

void add_session_options(CLI::App* cmd, SessionOptions& o) {
  add_data_options(cmd, o.data);
  cmd->add_option("--model", o.model, "Model file written by 'train'")->required();
  cmd->add_option("--split", o.split, "Image split to work on")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  cmd->add_option("--theta", o.theta, "Network edge threshold")->capture_default_str();
  cmd->add_option("--std-epsilon", o.std_epsilon, "Lower bound for channel std when stats are recomputed");
}

void add_train_options(CLI::App* cmd, TrainConfig& tc) {
  cmd->add_option("--lr", tc.learning_rate, "SGD learning rate")->capture_default_str();
  cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    image_io::write_text(path, text);
  }
}

HttpService* g_service = nullptr;

void handle_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Misclassification analysis: rates, networks, tests, saliency and erasure interventions"};
  app.require_subcommand(1);

  // gen-planted
  std::string planted_out, preset = "default";
  std::uint64_t planted_seed = 0;
  PlantedConfig pc_override;
  auto* gen = app.add_subcommand("gen-planted", "Generate a synthetic planted-interference dataset");
  gen->add_option("--out", planted_out, "Output directory")->required();
  gen->add_option("--seed", planted_seed, "Generator seed")->capture_default_str();
  gen->add_option("--preset", preset, "Starting configuration")
      ->check(CLI::IsMember({"default", "confounded"}))
      ->capture_default_str();
  auto* o_classes = gen->add_option("--num-classes", pc_override.num_classes, "Classes (2 or 3)");
  auto* o_train = gen->add_option("--train-size", pc_override.train_size, "Training images");
  auto* o_test = gen->add_option("--test-size", pc_override.test_size, "Test images");
  auto* o_pf = gen->add_option("--patch-fraction", pc_override.patch_fraction, "Fraction of images with a patch");
  auto* o_corr = gen->add_option("--correlation", pc_override.correlation, "Patch/label correlation in [0,1]");
  auto* o_shift = gen->add_option("--confound-shift", pc_override.confound_shift, "Confound class offset");
  auto* o_if = gen->add_option("--interference-fraction", pc_override.interference_fraction,
                               "Fraction of test images whose patch contradicts the label");
  auto* o_noise = gen->add_option("--noise", pc_override.noise_amplitude, "Background noise amplitude");

  // train
  DataOptions train_data;
  TrainConfig train_cfg;
  std::string train_out, train_trace;
  double train_eps = 0.0;
  auto* train_cmd = app.add_subcommand("train", "Train the built-in classifier");
  add_data_options(train_cmd, train_data);
  add_train_options(train_cmd, train_cfg);
  train_cmd->add_option("--seed", train_cfg.seed, "Initialization and shuffle seed")->capture_default_str();
  train_cmd->add_option("--std-epsilon", train_eps, "Lower bound for channel std (0 = reject constant channels)");
  train_cmd->add_option("--out", train_out, "Model file to write")->required();
  train_cmd->add_option("--trace", train_trace, "Per-epoch loss/accuracy CSV");

  // predict
  SessionOptions predict_opts;
  std::string predict_out;
  auto* predict_cmd = app.add_subcommand("predict", "Classify a split and write a JSONL prediction log");
  add_session_options(predict_cmd, predict_opts);
  predict_cmd->add_option("--out", predict_out, "Output file (default stdout)");

  // analyze
  std::string analyze_log, analyze_dir;
  std::size_t analyze_classes = 0;
  auto* analyze_cmd = app.add_subcommand("analyze", "Misclassification counts, rates u and conditional rates V");
  analyze_cmd->add_option("--log", analyze_log, "Prediction log (JSONL)")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--num-classes", analyze_classes, "Expected class count (default from the log)");
  analyze_cmd->add_option("--out-dir", analyze_dir, "Write counts.csv, u.csv, v.csv here instead of JSON to stdout");

  // network
  std::string network_log, network_dot, network_json;
  double network_theta = kDefaultTheta;
  auto* network_cmd = app.add_subcommand("network", "Build the misclassification network");
  network_cmd->add_option("--log", network_log, "Prediction log (JSONL)")->required()->check(CLI::ExistingFile);
  network_cmd->add_option("--theta", network_theta, "Edge threshold on v")->capture_default_str();
  network_cmd->add_option("--dot", network_dot, "DOT output (default stdout)");
  network_cmd->add_option("--json", network_json, "JSON output");

  // homogeneity
  std::vector<std::string> homog_logs;
  auto* homog_cmd = app.add_subcommand("homogeneity", "Chi-squared homogeneity of misclassifications across models");
  homog_cmd->add_option("--log", homog_logs, "One prediction log per model")
      ->required()
      ->check(CLI::ExistingFile)
      ->expected(2, -1);

  // ttest
  std::string ttest_log, ttest_map, ttest_rule = "n-1", ttest_measure = "ratio", ttest_samples;
  auto* ttest_cmd = app.add_subcommand("ttest", "Two-sample t-test of score ratios: morphology vs interference");
  ttest_cmd->add_option("--log", ttest_log, "Prediction log (JSONL)")->required()->check(CLI::ExistingFile);
  ttest_cmd->add_option("--category-map", ttest_map, "Category map JSON (default: CIFAR-10 pairs)")
      ->check(CLI::ExistingFile);
  ttest_cmd->add_option("--df-rule", ttest_rule, "Degrees of freedom rule")
      ->check(CLI::IsMember({"n-1", "n-2"}))
      ->capture_default_str();
  ttest_cmd->add_option("--measure", ttest_measure, "Score comparison")
      ->check(CLI::IsMember({"ratio", "difference"}))
      ->capture_default_str();
  ttest_cmd->add_option("--samples", ttest_samples, "Write the per-image sample values as CSV");

  // saliency
  SessionOptions sal_opts;
  std::string sal_id, sal_method = "gradient", sal_csv, sal_png;
  auto* sal_cmd = app.add_subcommand("saliency", "Saliency map of one image");
  add_session_options(sal_cmd, sal_opts);
  sal_cmd->add_option("--id", sal_id, "Image id")->required();
  sal_cmd->add_option("--method", sal_method, "Attribution method")
      ->check(CLI::IsMember({"gradient", "occlusion"}))
      ->capture_default_str();
  sal_cmd->add_option("--csv", sal_csv, "Write the 32x32 grid as CSV");
  sal_cmd->add_option("--png", sal_png, "Write a grayscale PNG");

  // intervene
  SessionOptions int_opts;
  std::string int_id, int_mask, int_space = "raw", int_before, int_after;
  double int_p = 0.05;
  std::size_t int_dx = 7, int_dy = 7;
  bool int_truth = false;
  auto* int_cmd = app.add_subcommand("intervene", "Erase saliency-anchored boxes and reclassify one image");
  add_session_options(int_cmd, int_opts);
  int_cmd->add_option("--id", int_id, "Image id")->required();
  int_cmd->add_option("--top-p", int_p, "Fraction of top-saliency pixels used as anchors")->capture_default_str();
  int_cmd->add_option("--dx", int_dx, "Box width")->capture_default_str();
  int_cmd->add_option("--dy", int_dy, "Box height")->capture_default_str();
  auto* o_mask = int_cmd->add_option("--spare-mask", int_mask, "Mask file (PNG or run-length JSON) of pixels to keep")
                     ->check(CLI::ExistingFile);
  int_cmd->add_flag("--ground-truth-mask", int_truth, "Spare the dataset's ground-truth object mask")
      ->excludes(o_mask);
  int_cmd->add_option("--erase-space", int_space, "Zero raw pixels or normalized values")
      ->check(CLI::IsMember({"raw", "normalized"}))
      ->capture_default_str();
  int_cmd->add_option("--before-png", int_before, "Write the original image");
  int_cmd->add_option("--after-png", int_after, "Write the erased image (raw space)");

  // sweep
  SessionOptions sw_opts;
  std::vector<double> sw_p = {0.05};
  std::vector<std::size_t> sw_dx = {7}, sw_dy = {7};
  std::size_t sw_controls = 200;
  std::string sw_space = "raw", sw_out;
  bool sw_truth = false;
  auto* sw_cmd = app.add_subcommand("sweep", "Grid sweep of erasure hyperparameters");
  add_session_options(sw_cmd, sw_opts);
  sw_cmd->add_option("--top-p", sw_p, "Values of p")->capture_default_str();
  sw_cmd->add_option("--dx", sw_dx, "Box widths")->capture_default_str();
  sw_cmd->add_option("--dy", sw_dy, "Box heights")->capture_default_str();
  sw_cmd->add_option("--controls", sw_controls, "Correctly classified control images")->capture_default_str();
  sw_cmd->add_option("--spare-mask", sw_opts.spare_mask, "Mask applied to every image")->check(CLI::ExistingFile);
  sw_cmd->add_flag("--ground-truth-mask", sw_truth, "Spare each image's ground-truth object mask");
  sw_cmd->add_option("--erase-space", sw_space, "Zero raw pixels or normalized values")
      ->check(CLI::IsMember({"raw", "normalized"}))
      ->capture_default_str();
  sw_cmd->add_option("--out", sw_out, "CSV output (default stdout)");

  // serve
  SessionOptions serve_opts;
  std::string serve_host = "127.0.0.1";
  int serve_port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API for the interactive explorer");
  add_session_options(serve_cmd, serve_opts);
  serve_cmd->add_option("--spare-mask", serve_opts.spare_mask, "Mask used when the dataset has no ground truth")
      ->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", serve_host, "Listen address")->capture_default_str();
  serve_cmd->add_option("--port", serve_port, "Listen port")->capture_default_str();

  // run
  RunConfig run;
  DataOptions run_data;
  std::vector<std::string> run_models;
  std::string run_out, run_space = "raw", run_rule = "n-1", run_map, run_mask;
  auto* run_cmd = app.add_subcommand("run", "Full pipeline: train or load models, analyze, test, sweep");
  add_data_options(run_cmd, run_data);
  add_train_options(run_cmd, run.train);
  run_cmd->add_option("--model", run_models, "Pretrained model files (skip training)");
  run_cmd->add_option("--num-models", run.num_models, "Models to train")->capture_default_str();
  run_cmd->add_option("--out-dir", run_out, "Report directory")->required();
  run_cmd->add_option("--theta", run.theta, "Network edge threshold")->capture_default_str();
  run_cmd->add_option("--top-p", run.sweep.top_p, "Sweep values of p")->capture_default_str();
  run_cmd->add_option("--dx", run.sweep.widths, "Sweep box widths")->capture_default_str();
  run_cmd->add_option("--dy", run.sweep.heights, "Sweep box heights")->capture_default_str();
  run_cmd->add_option("--erase-space", run_space, "Zero raw pixels or normalized values")
      ->check(CLI::IsMember({"raw", "normalized"}))
      ->capture_default_str();
  run_cmd->add_option("--df-rule", run_rule, "t-test degrees of freedom rule")
      ->check(CLI::IsMember({"n-1", "n-2"}))
      ->capture_default_str();
  run_cmd->add_option("--category-map", run_map, "Category map JSON");
  run_cmd->add_option("--spare-mask", run_mask, "Spare mask for datasets without ground truth");
  run_cmd->add_option("--seed", run.seed, "Base seed")->capture_default_str();
  run_cmd->add_option("--std-epsilon", run.std_epsilon, "Lower bound for channel std");
  run_cmd->add_option("--controls", run.controls, "Control images in the sweep")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      PlantedConfig cfg = preset == "confounded" ? confounded_planted_config() : PlantedConfig{};
      if (o_classes->count()) cfg.num_classes = pc_override.num_classes;
      if (o_train->count()) cfg.train_size = pc_override.train_size;
      if (o_test->count()) cfg.test_size = pc_override.test_size;
      if (o_pf->count()) cfg.patch_fraction = pc_override.patch_fraction;
      if (o_corr->count()) cfg.correlation = pc_override.correlation;
      if (o_shift->count()) cfg.confound_shift = pc_override.confound_shift;
      if (o_if->count()) cfg.interference_fraction = pc_override.interference_fraction;
      if (o_noise->count()) cfg.noise_amplitude = pc_override.noise_amplitude;
      save_planted_dataset(generate_planted_dataset(cfg, planted_seed), planted_out);
      std::cout << render_json({{"out", planted_out}, {"seed", planted_seed}, {"config", to_json(cfg)}});
    } else if (train_cmd->parsed()) {
      const auto data = load_data(train_data.spec());
      const auto stats = compute_channel_stats(data.train, train_eps);
      std::vector<std::size_t> labels;
      for (const auto& im : data.train) labels.push_back(im.label);
      auto result = train(init_model(train_cfg.seed, data.num_classes), normalize_all(data.train, stats), labels,
                          train_cfg);
      const std::string id = fs::path(train_out).stem().string();
      save_model(result.params, train_out, {{"model_id", id}, {"train", to_json(train_cfg)}, {"stats", to_json(stats)}});
      if (!train_trace.empty()) image_io::write_text(train_trace, trace_to_csv(result.trace));
      const auto records = classify(result.params, stats, data.test, id);
      std::size_t correct = 0;
      for (const auto& r : records) correct += r.predicted_label == r.true_label ? 1 : 0;
      std::cout << render_json({{"model", train_out},
                                {"train_size", data.train.size()},
                                {"test_size", data.test.size()},
                                {"test_accuracy", static_cast<double>(correct) / static_cast<double>(records.size())},
                                {"final_epoch", result.trace.empty() ? nlohmann::json() : nlohmann::json{
                                    {"mean_loss", result.trace.back().mean_loss},
                                    {"accuracy", result.trace.back().accuracy}}}});
    } else if (predict_cmd->parsed()) {
      const auto session = load_session(predict_opts.config());
      emit(format_prediction_log(session->records()), predict_out);
    } else if (analyze_cmd->parsed()) {
      const auto records = load_prediction_log(analyze_log, analyze_classes);
      const auto counts = tally(records, analyze_classes ? std::optional<std::size_t>(analyze_classes) : std::nullopt);
      const auto rates = rate_table(counts);
      if (!analyze_dir.empty()) {
        fs::create_directories(analyze_dir);
        image_io::write_text(fs::path(analyze_dir) / "counts.csv", counts_to_csv(counts));
        image_io::write_text(fs::path(analyze_dir) / "u.csv", u_to_csv(counts, rates));
        image_io::write_text(fs::path(analyze_dir) / "v.csv", v_to_csv(rates));
      } else {
        std::cout << render_json({{"counts", counts.counts},
                                  {"num_classes", counts.num_classes},
                                  {"total", records.size()},
                                  {"u", rates.u},
                                  {"u_defined", rates.u_defined},
                                  {"v", rates.v},
                                  {"v_row_defined", rates.row_defined}});
      }
    } else if (network_cmd->parsed()) {
      const auto records = load_prediction_log(network_log);
      const auto counts = tally(records);
      const auto net = build_network(rate_table(counts), network_theta,
                                     records.empty() ? "" : records.front().model_id);
      emit(export_dot(net, class_names(counts.num_classes)), network_dot);
      if (!network_json.empty()) image_io::write_text(network_json, render_json(to_json(net)));
    } else if (homog_cmd->parsed()) {
      std::vector<std::vector<std::uint64_t>> tables;
      std::size_t classes = 0;
      for (const auto& path : homog_logs) {
        const auto records = load_prediction_log(path, classes);
        const auto counts = tally(records, classes ? std::optional<std::size_t>(classes) : std::nullopt);
        classes = counts.num_classes;
        tables.push_back(counts.misclassified_per_class());
      }
      auto j = to_json(chi_squared_homogeneity(tables));
      j["table"] = tables;
      std::cout << render_json(j);
    } else if (ttest_cmd->parsed()) {
      const auto records = load_prediction_log(ttest_log);
      CategoryMap map = default_category_map();
      if (!ttest_map.empty()) {
        const auto bytes = image_io::read_file(ttest_map);
        map = category_map_from_json(nlohmann::json::parse(bytes.begin(), bytes.end()));
      }
      const auto measure = ttest_measure == "ratio" ? ScoreMeasure::ratio : ScoreMeasure::difference;
      const auto samples = score_samples(records, map, measure);
      if (!ttest_samples.empty()) image_io::write_text(ttest_samples, samples_to_csv(samples));
      const auto result = two_sample_t_test(samples.at(MisclassCategory::morphology).values,
                                            samples.at(MisclassCategory::interference).values,
                                            df_rule_from_string(ttest_rule));
      auto j = to_json(result, "morphology", "interference");
      j["measure"] = ttest_measure;
      std::cout << render_json(j);
    } else if (sal_cmd->parsed()) {
      const auto session = load_session(sal_opts.config());
      const auto j = saliency_json(*session, session->find(sal_id), saliency_source_from_string(sal_method));
      SaliencyMap map;
      map.target_class = j.at("target_class").get<std::size_t>();
      map.source = saliency_source_from_string(sal_method);
      for (std::size_t r = 0; r < kImageSide; ++r) {
        for (std::size_t c = 0; c < kImageSide; ++c) map.values[r * kImageSide + c] = j["grid"][r][c].get<double>();
      }
      if (!sal_csv.empty()) image_io::write_text(sal_csv, saliency_to_csv(map));
      if (!sal_png.empty()) image_io::write_file(sal_png, saliency_to_png(map));
      if (sal_csv.empty() && sal_png.empty()) std::cout << render_json(j);
    } else if (int_cmd->parsed()) {
      const auto session = load_session(int_opts.config());
      nlohmann::json body = {{"id", int_id}, {"p", int_p}, {"dx", int_dx}, {"dy", int_dy}, {"space", int_space}};
      if (!int_mask.empty()) body["spare_mask"] = mask_to_rle(load_mask(int_mask));
      if (int_truth) body["spare_mask"] = "ground_truth";
      const auto req = parse_intervention_request(*session, body);
      const auto j = intervene_json(*session, req);
      const auto& image = session->images()[req.index];
      if (!int_before.empty()) export_image(image.image, int_before, image_format_from_path(int_before));
      if (!int_after.empty()) {
        std::vector<BoundingBox> boxes;
        for (const auto& b : j.at("boxes")) {
          const auto center = b.at("center");
          boxes.push_back(make_box({center[0].get<std::size_t>(), center[1].get<std::size_t>()},
                                   b.at("width").get<std::size_t>(), b.at("height").get<std::size_t>()));
        }
        export_image(apply_erasure(image.image, boxes, req.spec.spare_mask), int_after,
                     image_format_from_path(int_after));
      }
      std::cout << render_json(j);
    } else if (sw_cmd->parsed()) {
      const auto session = load_session(sw_opts.config());
      SweepGrid grid{sw_p, sw_dx, sw_dy, erasure_space_from_string(sw_space)};
      std::vector<InterventionSubject> misclassified, controls;
      for (std::size_t k = 0; k < session->records().size(); ++k) {
        const auto& r = session->records()[k];
        std::optional<PixelMask> mask;
        if (sw_truth || !sw_opts.spare_mask.empty()) {
          mask = session->spare_mask(k);
          if (!mask) throw Error(Errc::invalid_argument, "this dataset has no ground-truth mask");
        }
        InterventionSubject s{session->images()[k], mask};
        if (r.predicted_label != r.true_label) {
          misclassified.push_back(std::move(s));
        } else if (controls.size() < sw_controls) {
          controls.push_back(std::move(s));
        }
      }
      emit(sweep_to_csv(sweep(session->params(), session->stats(), misclassified, controls, grid,
                              session->model_id())),
           sw_out);
    } else if (serve_cmd->parsed()) {
      const auto session = load_session(serve_opts.config());
      HttpService service(session);
      const int port = service.bind(serve_host, serve_port);
      g_service = &service;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "serving " << session->images().size() << " images on http://" << serve_host << ":" << port
                << "\n";
      service.listen();
      g_service = nullptr;
    } else if (run_cmd->parsed()) {
      run.data = run_data.spec();
      run.model_paths.assign(run_models.begin(), run_models.end());
      run.output_dir = run_out;
      run.sweep.space = erasure_space_from_string(run_space);
      run.df_rule = df_rule_from_string(run_rule);
      if (!run_map.empty()) run.category_map = run_map;
      if (!run_mask.empty()) run.spare_mask = run_mask;
      return run_pipeline(run, std::cerr, &std::cerr);
    }
  } catch (const Error& e) {
    std::cerr << "misclass: " << e.what() << "\n";
    return e.code() == Errc::not_found || e.code() == Errc::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "misclass: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
