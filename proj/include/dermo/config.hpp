#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dermo/backbone.hpp"
#include "dermo/dataset.hpp"
#include "dermo/ensemble.hpp"
#include "dermo/errors.hpp"
#include "dermo/label_space.hpp"
#include "dermo/training.hpp"

namespace dermo {

/// Flat run configuration. Defaults reproduce the reference fine-tuning
/// setup: 10% stratified validation, head-only then full fine-tuning,
/// flips on, inverse-frequency class weights, probability averaging.
struct RunConfig {
  std::filesystem::path ground_truth;
  std::filesystem::path image_dir;
  std::vector<std::string> classes = LabelSpace::isic2018().codes();
  double split_fraction = 0.10;
  std::uint64_t seed = 0;
  std::vector<std::string> backbones{"resnet50", "densenet121", "mobilenet"};
  double phase1_lr = 0.01;
  std::size_t phase1_epochs = 10;
  std::size_t phase1_patience = 5;
  double phase2_lr = 0.001;
  std::size_t phase2_epochs = 100;
  std::size_t phase2_patience = 10;
  bool augment_flips = true;
  /// Empty means "auto" (inverse frequency over the train split).
  std::vector<double> class_weights;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  std::string combiner = "soft";
  std::filesystem::path run_dir = "runs/default";
  std::optional<std::filesystem::path> weights_dir;

  LabelSpace label_space() const {
    if (classes == LabelSpace::isic2018().codes()) return LabelSpace::isic2018();
    return LabelSpace(classes);
  }

  Schedule schedule() const {
    return {{{{ParamGroup::kHead}, phase1_lr, phase1_epochs, phase1_patience},
             {{ParamGroup::kBody, ParamGroup::kHead}, phase2_lr, phase2_epochs, phase2_patience}}};
  }

  Fraction fraction() const { return Fraction::from_double(split_fraction); }

  void validate() const {
    (void)label_space();
    if (!fraction().in_open_unit_interval()) throw ContractError("config: split_fraction must lie in (0, 1)");
    schedule().validate();
    if (batch_size == 0) throw ContractError("config: batch_size must be positive");
    if (!class_weights.empty() && class_weights.size() != classes.size())
      throw ContractError("config: class_weights must list one weight per class");
    (void)parse_combiner(combiner);
    for (const auto& b : backbones) (void)BackboneSpec::parse(b);
  }
};

/// Paths are written absolute so that a snapshot can be reloaded from any directory.
inline nlohmann::json config_to_json(const RunConfig& c) {
  auto abs = [](const std::filesystem::path& p) { return p.empty() ? std::string{} : std::filesystem::absolute(p).string(); };
  nlohmann::json j = {{"ground_truth", abs(c.ground_truth)},
                      {"image_dir", abs(c.image_dir)},
                      {"classes", c.classes},
                      {"split_fraction", c.split_fraction},
                      {"seed", c.seed},
                      {"backbones", c.backbones},
                      {"phase1_lr", c.phase1_lr},
                      {"phase1_epochs", c.phase1_epochs},
                      {"phase1_patience", c.phase1_patience},
                      {"phase2_lr", c.phase2_lr},
                      {"phase2_epochs", c.phase2_epochs},
                      {"phase2_patience", c.phase2_patience},
                      {"augment_flips", c.augment_flips},
                      {"batch_size", c.batch_size},
                      {"momentum", c.momentum},
                      {"combiner", c.combiner},
                      {"run_dir", abs(c.run_dir)}};
  j["class_weights"] = c.class_weights.empty() ? nlohmann::json("auto") : nlohmann::json(c.class_weights);
  j["weights_dir"] = c.weights_dir ? nlohmann::json(abs(*c.weights_dir)) : nlohmann::json(nullptr);
  return j;
}

/// Overlays keys from `j` onto `c`. Relative paths resolve against `base_dir`.
inline void merge_config(RunConfig& c, const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw FormatError("config: top level must be a JSON object");
  static const std::set<std::string> known{
      "ground_truth", "image_dir",   "classes",         "split_fraction", "seed",          "backbones",
      "phase1_lr",    "phase1_epochs", "phase1_patience", "phase2_lr",      "phase2_epochs", "phase2_patience",
      "augment_flips", "class_weights", "batch_size",    "momentum",       "combiner",      "run_dir",
      "weights_dir"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError("config: unknown key '" + key + "'");
  auto path = [&](const nlohmann::json& v) {
    std::filesystem::path p = v.get<std::string>();
    return p.is_relative() && !p.empty() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    if (j.contains("ground_truth")) c.ground_truth = path(j["ground_truth"]);
    if (j.contains("image_dir")) c.image_dir = path(j["image_dir"]);
    if (j.contains("classes")) c.classes = j["classes"].get<std::vector<std::string>>();
    if (j.contains("split_fraction")) c.split_fraction = j["split_fraction"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("backbones")) c.backbones = j["backbones"].get<std::vector<std::string>>();
    if (j.contains("phase1_lr")) c.phase1_lr = j["phase1_lr"].get<double>();
    if (j.contains("phase1_epochs")) c.phase1_epochs = j["phase1_epochs"].get<std::size_t>();
    if (j.contains("phase1_patience")) c.phase1_patience = j["phase1_patience"].get<std::size_t>();
    if (j.contains("phase2_lr")) c.phase2_lr = j["phase2_lr"].get<double>();
    if (j.contains("phase2_epochs")) c.phase2_epochs = j["phase2_epochs"].get<std::size_t>();
    if (j.contains("phase2_patience")) c.phase2_patience = j["phase2_patience"].get<std::size_t>();
    if (j.contains("augment_flips")) c.augment_flips = j["augment_flips"].get<bool>();
    if (j.contains("class_weights")) {
      const auto& w = j["class_weights"];
      if (w.is_string() && w.get<std::string>() == "auto")
        c.class_weights.clear();
      else
        c.class_weights = w.get<std::vector<double>>();
    }
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
    if (j.contains("combiner")) c.combiner = j["combiner"].get<std::string>();
    if (j.contains("run_dir")) c.run_dir = path(j["run_dir"]);
    if (j.contains("weights_dir")) {
      if (j["weights_dir"].is_null())
        c.weights_dir.reset();
      else
        c.weights_dir = path(j["weights_dir"]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  // A run snapshot nests the reusable configuration under "config".
  if (j.is_object() && j.contains("config") && j["config"].is_object()) j = j["config"];
  RunConfig c;
  merge_config(c, j, path.parent_path());
  return c;
}

}  // namespace dermo
