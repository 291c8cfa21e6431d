#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dermo/dataset.hpp"
#include "dermo/ensemble.hpp"
#include "dermo/errors.hpp"
#include "dermo/label_space.hpp"

namespace dermo {

/// K x K counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(LabelSpace space)
      : space_(std::move(space)), counts_(space_.size(), std::vector<std::size_t>(space_.size(), 0)) {}

  ConfusionMatrix(LabelSpace space, std::vector<std::vector<std::size_t>> counts)
      : space_(std::move(space)), counts_(std::move(counts)) {
    if (counts_.size() != space_.size()) throw DimensionError("confusion matrix: row count does not match classes");
    for (const auto& row : counts_)
      if (row.size() != space_.size()) throw DimensionError("confusion matrix: column count does not match classes");
  }

  const LabelSpace& label_space() const noexcept { return space_; }
  std::size_t classes() const noexcept { return counts_.size(); }
  std::size_t operator()(std::size_t truth, std::size_t predicted) const { return counts_.at(truth).at(predicted); }
  void add(std::size_t truth, std::size_t predicted, std::size_t n = 1) { counts_.at(truth).at(predicted) += n; }
  const std::vector<std::vector<std::size_t>>& counts() const noexcept { return counts_; }

  std::size_t total() const noexcept {
    std::size_t t = 0;
    for (const auto& row : counts_)
      for (auto v : row) t += v;
    return t;
  }

  std::size_t support(std::size_t c) const {
    std::size_t s = 0;
    for (auto v : counts_.at(c)) s += v;
    return s;
  }

 private:
  LabelSpace space_;
  std::vector<std::vector<std::size_t>> counts_;
};

struct MetricReport {
  LabelSpace label_space;
  /// Empty for classes without support.
  std::vector<std::optional<double>> per_class_recall;
  std::vector<std::size_t> support;
  double balanced_accuracy = 0.0;
  double plain_accuracy = 0.0;
  /// Zero-support classes left out of the balanced mean.
  std::vector<std::size_t> excluded_classes;
  std::size_t evaluated = 0;
};

inline ConfusionMatrix build_confusion(const std::map<std::string, std::size_t>& truth,
                                       const std::map<std::string, std::size_t>& predicted, const LabelSpace& space) {
  std::vector<std::string> diff;
  for (const auto& [id, _] : truth)
    if (!predicted.count(id)) diff.push_back(id);
  for (const auto& [id, _] : predicted)
    if (!truth.count(id)) diff.push_back(id);
  if (!diff.empty()) throw AlignmentError("build_confusion: truth vs predictions", std::move(diff));
  ConfusionMatrix cm(space);
  for (const auto& [id, t] : truth) {
    const auto p = predicted.at(id);
    if (t >= space.size() || p >= space.size()) throw LabelError("build_confusion: class index out of range for " + id);
    cm.add(t, p);
  }
  return cm;
}

/// Mean of per-class recalls over classes with support; plain accuracy = trace / total.
inline MetricReport balanced_accuracy(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw EmptyEvaluationError("balanced_accuracy: confusion matrix is empty");
  MetricReport r{cm.label_space(), {}, {}, 0.0, 0.0, {}, total};
  double recall_sum = 0.0;
  std::size_t counted = 0, trace = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const std::size_t s = cm.support(c);
    r.support.push_back(s);
    trace += cm(c, c);
    if (s == 0) {
      r.per_class_recall.emplace_back(std::nullopt);
      r.excluded_classes.push_back(c);
      continue;
    }
    const double recall = static_cast<double>(cm(c, c)) / static_cast<double>(s);
    r.per_class_recall.emplace_back(recall);
    recall_sum += recall;
    ++counted;
  }
  r.balanced_accuracy = recall_sum / static_cast<double>(counted);
  r.plain_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

inline std::map<std::string, std::size_t> truth_labels(const Dataset& ds) {
  std::map<std::string, std::size_t> out;
  for (const auto& r : ds.records()) {
    if (!r.label) throw ContractError("truth_labels: record " + r.image_id + " is unlabeled");
    out.emplace(r.image_id, *r.label);
  }
  return out;
}

/// In-memory scoring path: decide labels, build the confusion matrix, average recalls.
inline MetricReport score_predictions(const Dataset& truth, const PredictionSet& predictions) {
  if (!(truth.label_space() == predictions.label_space))
    throw FormatError("score: truth and predictions use different label spaces");
  return balanced_accuracy(build_confusion(truth_labels(truth), decide_labels(predictions), truth.label_space()));
}

inline MetricReport score_files(const std::filesystem::path& truth_csv, const std::filesystem::path& prediction_csv,
                                const LabelSpace& space = LabelSpace::isic2018()) {
  const Dataset truth = load_ground_truth(truth_csv, std::nullopt, space);
  const PredictionSet predictions = load_predictions(prediction_csv, space);
  return score_predictions(truth, predictions);
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json recall = nlohmann::json::object(), support = nlohmann::json::object();
  nlohmann::json excluded = nlohmann::json::array();
  for (std::size_t c = 0; c < r.label_space.size(); ++c) {
    const auto& code = r.label_space.code(c);
    recall[code] = r.per_class_recall[c] ? nlohmann::json(*r.per_class_recall[c]) : nlohmann::json(nullptr);
    support[code] = r.support[c];
  }
  for (auto c : r.excluded_classes) excluded.push_back(r.label_space.code(c));
  return {{"classes", r.label_space.codes()},
          {"per_class_recall", recall},
          {"support", support},
          {"balanced_accuracy", r.balanced_accuracy},
          {"plain_accuracy", r.plain_accuracy},
          {"excluded_classes", excluded},
          {"evaluated_images", r.evaluated}};
}

inline std::string report_to_table(const MetricReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-8s %-24s %8s %8s\n", "class", "name", "support", "recall");
  out += buf;
  for (std::size_t c = 0; c < r.label_space.size(); ++c) {
    if (r.per_class_recall[c])
      std::snprintf(buf, sizeof(buf), "%-8s %-24s %8zu %8.4f\n", r.label_space.code(c).c_str(),
                    r.label_space.display_name(c).c_str(), r.support[c], *r.per_class_recall[c]);
    else
      std::snprintf(buf, sizeof(buf), "%-8s %-24s %8zu %8s\n", r.label_space.code(c).c_str(),
                    r.label_space.display_name(c).c_str(), r.support[c], "n/a");
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "balanced accuracy: %.6f\nplain accuracy:    %.6f\nimages:            %zu\n",
                r.balanced_accuracy, r.plain_accuracy, r.evaluated);
  out += buf;
  if (!r.excluded_classes.empty()) {
    out += "excluded (no support):";
    for (auto c : r.excluded_classes) out += " " + r.label_space.code(c);
    out += "\n";
  }
  return out;
}

}  // namespace dermo
