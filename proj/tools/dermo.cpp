// Command-line front end: split -> train -> predict -> ensemble -> score.
// Commands talk to each other only through files in the run directory.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dermo/dermo.hpp"

namespace fs = std::filesystem;
using namespace dermo;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string run_dir;
};

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.run_dir.empty()) c.run_dir = f.run_dir;
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string vector_string(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

Dataset load_labeled(const RunConfig& c, bool with_images) {
  if (c.ground_truth.empty()) throw ContractError("no ground_truth path configured");
  if (with_images && c.image_dir.empty()) throw ContractError("no image_dir configured");
  return load_ground_truth(c.ground_truth, with_images ? std::optional<fs::path>(c.image_dir) : std::nullopt,
                           c.label_space());
}

void write_split_files(const RunConfig& c, const Dataset& ds, const SplitResult& split) {
  std::ostringstream manifest, train, validation;
  write_split_manifest(manifest, ds, split);
  write_ground_truth(train, split.train);
  write_ground_truth(validation, split.validation);
  write_text(c.run_dir / "split.csv", manifest.str());
  write_text(c.run_dir / "train.csv", train.str());
  write_text(c.run_dir / "validation.csv", validation.str());
}

/// Uses `<run_dir>/split.csv` when present so that every backbone sees the same split.
SplitResult obtain_split(const RunConfig& c, const Dataset& ds) {
  const auto manifest_path = c.run_dir / "split.csv";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path, std::ios::binary);
    return apply_split_manifest(ds, read_split_manifest(in), c.seed, c.fraction());
  }
  auto split = stratified_split(ds, c.fraction(), c.seed);
  write_split_files(c, ds, split);
  return split;
}

int cmd_split(const CommonFlags& flags, std::optional<double> fraction) {
  RunConfig c = resolve_config(flags);
  if (fraction) c.split_fraction = *fraction;
  c.validate();
  const Dataset ds = load_labeled(c, !c.image_dir.empty());
  const SplitResult split = stratified_split(ds, c.fraction(), c.seed);
  write_split_files(c, ds, split);

  const auto& space = ds.label_space();
  std::printf("%-8s %8s %8s %10s\n", "class", "total", "train", "validation");
  for (std::size_t k = 0; k < space.size(); ++k)
    std::printf("%-8s %8zu %8zu %10zu\n", space.code(k).c_str(), ds.class_counts()[k], split.train.class_counts()[k],
                split.validation.class_counts()[k]);
  std::printf("validation counts: %s\n", vector_string(split.validation.class_counts()).c_str());
  std::printf("manifest: %s\n", (c.run_dir / "split.csv").string().c_str());
  return 0;
}

nlohmann::json schedule_json(const Schedule& s) {
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : s.phases) {
    nlohmann::json groups = nlohmann::json::array();
    for (auto g : p.trainable_groups) groups.push_back(g == ParamGroup::kBody ? "body" : "head");
    phases.push_back({{"trainable_groups", groups},
                      {"learning_rate", p.learning_rate},
                      {"max_epochs", p.max_epochs},
                      {"patience", p.patience}});
  }
  return phases;
}

int train_one(const RunConfig& c, const std::string& backbone, const Dataset& ds, const SplitResult& split) {
  const BackboneSpec spec = BackboneSpec::parse(backbone);
  const auto space = ds.label_space();
  const ClassWeights weights = c.class_weights.empty() ? compute_class_weights(split.train.class_counts(), &space)
                                                       : ClassWeights(c.class_weights, split.train.class_counts());
  const fs::path out_dir = c.run_dir / spec.name_string();
  fs::create_directories(out_dir);

  nlohmann::json snapshot = {{"config", config_to_json(c)},
                             {"backbone", spec.name_string()},
                             {"class_weight_mode", c.class_weights.empty() ? "auto" : "explicit"},
                             {"class_weights", weights.weights()},
                             {"train_class_counts", split.train.class_counts()},
                             {"validation_class_counts", split.validation.class_counts()},
                             {"schedule", schedule_json(c.schedule())},
                             {"input_resolution", {spec.input_height, spec.input_width}}};
  write_text(out_dir / "config.json", snapshot.dump(2) + "\n");

  AdaptedModel model = replace_head(load_pretrained(spec, c.weights_dir), space.size(), c.seed);
  TrainOptions opt;
  opt.batch_size = c.batch_size;
  opt.momentum = c.momentum;
  opt.augment = c.augment_flips;
  opt.on_epoch = [](const EpochLog& e) {
    std::fprintf(stderr, "phase %zu epoch %3zu  train %.5f  val %.5f  (%.1fs)\n", e.phase, e.epoch, e.train_loss,
                 e.validation_loss, e.seconds);
  };
  const std::uint64_t body_before = model.checksum(ParamGroup::kBody);
  std::vector<std::uint64_t> body_after_phase;
  std::vector<EpochLog> log;
  try {
    log = run_schedule(model, c.schedule(), split.train, split.validation, weights, c.seed, opt,
                       [&](std::size_t phase, const AdaptedModel& m) {
                         save_checkpoint(m, out_dir / ("phase" + std::to_string(phase) + "_best.ckpt"), space.codes());
                         body_after_phase.push_back(m.checksum(ParamGroup::kBody));
                       });
  } catch (const DivergenceError& e) {
    std::ostringstream csv;
    write_epoch_log(csv, e.log());
    write_text(out_dir / "epochs.csv", csv.str());
    throw;
  }
  std::ostringstream csv;
  write_epoch_log(csv, log);
  write_text(out_dir / "epochs.csv", csv.str());

  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(body_before));
  snapshot["body_checksum_initial"] = buf;
  nlohmann::json per_phase = nlohmann::json::array();
  for (auto v : body_after_phase) {
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    per_phase.push_back(buf);
  }
  snapshot["body_checksum_after_phase"] = per_phase;
  write_text(out_dir / "config.json", snapshot.dump(2) + "\n");
  std::printf("%s: %zu epochs, checkpoints in %s\n", spec.name_string().c_str(), log.size(), out_dir.string().c_str());
  return 0;
}

int cmd_train(const CommonFlags& flags, const std::vector<std::string>& backbones) {
  RunConfig c = resolve_config(flags);
  if (!backbones.empty()) c.backbones = backbones;
  c.validate();
  const Dataset ds = load_labeled(c, true);
  const SplitResult split = obtain_split(c, ds);
  for (const auto& b : c.backbones) train_one(c, b, ds, split);
  return 0;
}

struct PredictFlags {
  std::string checkpoint;
  std::string backbone;
  std::string ground_truth;
  std::string image_dir;
  std::string out;
  bool skip_unreadable = false;
  std::size_t batch_size = 32;
};

int cmd_predict(const CommonFlags& flags, const PredictFlags& p) {
  const RunConfig c = resolve_config(flags);
  const CheckpointInfo info = read_checkpoint_info(p.checkpoint);
  const BackboneSpec spec = BackboneSpec::parse(p.backbone.empty() ? info.backbone : p.backbone);
  if (spec.name_string() != info.backbone)
    throw IntegrityError("checkpoint holds backbone '" + info.backbone + "', requested '" + spec.name_string() + "'");
  const LabelSpace space = !info.classes.empty() ? (info.classes == LabelSpace::isic2018().codes()
                                                        ? LabelSpace::isic2018()
                                                        : LabelSpace(info.classes))
                                                 : c.label_space();
  const AdaptedModel model = load_checkpoint(spec, p.checkpoint);

  const fs::path image_dir = p.image_dir.empty() ? c.image_dir : fs::path(p.image_dir);
  if (image_dir.empty()) throw ContractError("predict: no image directory given");
  const Dataset images = p.ground_truth.empty() ? scan_image_dir(image_dir, space)
                                                : load_ground_truth(p.ground_truth, image_dir, space);
  PredictOptions opt;
  opt.batch_size = p.batch_size;
  opt.skip_unreadable = p.skip_unreadable;
  const auto report = predict_dataset(model, images, spec.name_string(), opt);
  for (const auto& [id, why] : report.failures) std::fprintf(stderr, "skipped %s: %s\n", id.c_str(), why.c_str());
  std::ostringstream csv;
  write_predictions(csv, report.predictions);
  write_text(p.out, csv.str());
  std::printf("%zu predictions written to %s\n", report.predictions.rows.size(), p.out.c_str());
  return 0;
}

int cmd_ensemble(const std::vector<std::string>& inputs, const std::string& combiner, const std::string& out) {
  if (inputs.empty()) throw EmptyInputError("ensemble: no prediction files");
  const LabelSpace space = label_space_from_csv(inputs.front());
  std::vector<PredictionSet> sets;
  for (const auto& f : inputs) sets.push_back(load_predictions(f, space));
  const PredictionSet combined = combine(sets, parse_combiner(combiner));
  std::ostringstream csv;
  write_predictions(csv, combined);
  write_text(out, csv.str());
  std::printf("%s over %zu member(s): %zu rows written to %s\n", combiner.c_str(), sets.size(), combined.rows.size(),
              out.c_str());
  return 0;
}

int cmd_score(const std::string& truth, const std::string& predictions, bool json) {
  const LabelSpace space = label_space_from_csv(truth);
  const MetricReport report = score_files(truth, predictions, space);
  if (json)
    std::cout << report_to_json(report).dump(2) << '\n';
  else
    std::cout << report_to_table(report);
  return 0;
}

int cmd_make_synthetic(const std::string& out, std::uint64_t seed, std::size_t count, std::size_t size) {
  SyntheticOptions opt;
  opt.seed = seed;
  opt.total = count;
  opt.image_size = size;
  const auto s = generate_synthetic(out, opt);
  std::printf("synthetic dataset: %s class counts %s\nconfig: %s\n", s.ground_truth.string().c_str(),
              vector_string(s.class_counts).c_str(), s.config.string().c_str());
  return 0;
}

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration (or a run snapshot)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Override the configured seed");
  cmd->add_option("--run-dir", f.run_dir, "Override the configured run directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dermoscopy lesion classification: fine-tuning, ensembling and balanced-accuracy scoring"};
  app.require_subcommand(1);

  CommonFlags common;

  auto* split = app.add_subcommand("split", "Stratified train/validation split; writes split.csv");
  add_common(split, common);
  std::optional<double> fraction;
  split->add_option("--fraction", fraction, "Validation fraction in (0, 1)");

  auto* train = app.add_subcommand("train", "Two-phase fine-tuning of one or more backbones");
  add_common(train, common);
  std::vector<std::string> backbones;
  train->add_option("--backbone", backbones, "Backbone(s) to train")
      ->check(CLI::IsMember({"resnet50", "densenet121", "mobilenet", "stub"}));

  auto* predict = app.add_subcommand("predict", "Class probabilities for an image set");
  add_common(predict, common);
  PredictFlags pf;
  predict->add_option("--checkpoint", pf.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  predict->add_option("--backbone", pf.backbone, "Expected backbone of the checkpoint")
      ->check(CLI::IsMember({"resnet50", "densenet121", "mobilenet", "stub"}));
  predict->add_option("--ground-truth", pf.ground_truth, "Restrict to the ids of this CSV")->check(CLI::ExistingFile);
  predict->add_option("--image-dir", pf.image_dir, "Image directory");
  predict->add_option("--out", pf.out, "Prediction CSV to write")->required();
  predict->add_flag("--skip-unreadable", pf.skip_unreadable, "Skip undecodable images instead of aborting");
  predict->add_option("--batch-size", pf.batch_size, "Inference batch size");

  auto* ensemble = app.add_subcommand("ensemble", "Combine prediction CSVs");
  std::vector<std::string> inputs;
  std::string combiner = "soft", ens_out;
  ensemble->add_option("inputs", inputs, "Member prediction CSVs")->required()->check(CLI::ExistingFile);
  ensemble->add_option("--combiner", combiner, "soft (probability average) or vote (majority)")
      ->check(CLI::IsMember({"soft", "vote"}));
  ensemble->add_option("--out", ens_out, "Combined prediction CSV")->required();

  auto* score = app.add_subcommand("score", "Balanced multi-class accuracy of a prediction CSV");
  std::string truth, predictions;
  bool json = false;
  score->add_option("--truth", truth, "Ground-truth CSV")->required()->check(CLI::ExistingFile);
  score->add_option("--predictions", predictions, "Prediction CSV")->required()->check(CLI::ExistingFile);
  score->add_flag("--json", json, "Emit the metric report as JSON");

  auto* synth = app.add_subcommand("make-synthetic", "Generate the desk-scale synthetic dataset");
  synth->group("");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  std::size_t synth_count = 600, synth_size = 64;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--count", synth_count, "Number of images");
  synth->add_option("--size", synth_size, "Image side length in pixels");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*split) return cmd_split(common, fraction);
    if (*train) return cmd_train(common, backbones);
    if (*predict) return cmd_predict(common, pf);
    if (*ensemble) return cmd_ensemble(inputs, combiner, ens_out);
    if (*score) return cmd_score(truth, predictions, json);
    if (*synth) return cmd_make_synthetic(synth_out, synth_seed, synth_count, synth_size);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
