#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dermo/augment.hpp"
#include "dermo/backbone.hpp"
#include "dermo/dataset.hpp"
#include "dermo/errors.hpp"
#include "dermo/label_space.hpp"
#include "dermo/probabilities.hpp"

namespace dermo {

/// One model's probability vector per image, in label-space order.
struct PredictionSet {
  std::string model_id;
  LabelSpace label_space;
  std::map<std::string, ClassProbabilities> rows;
};

enum class Combiner { kSoftAverage, kMajorityVote };

inline Combiner parse_combiner(std::string_view s) {
  if (s == "soft" || s == "soft_average") return Combiner::kSoftAverage;
  if (s == "vote" || s == "majority_vote") return Combiner::kMajorityVote;
  throw ContractError("unknown combiner '" + std::string(s) + "' (expected soft or vote)");
}

/// Undecodable images found while predicting.
class PredictionFailureError : public Error {
 public:
  explicit PredictionFailureError(std::vector<std::pair<std::string, std::string>> failures)
      : Error(make_message(failures)), failures_(std::move(failures)) {}
  const std::vector<std::pair<std::string, std::string>>& failures() const noexcept { return failures_; }

 private:
  static std::string make_message(const std::vector<std::pair<std::string, std::string>>& f) {
    std::string msg = std::to_string(f.size()) + " image(s) could not be predicted:";
    for (const auto& [id, why] : f) msg += "\n  " + id + ": " + why;
    return msg;
  }
  std::vector<std::pair<std::string, std::string>> failures_;
};

struct PredictOptions {
  std::size_t batch_size = 32;
  bool skip_unreadable = false;
  ImageLoader loader = load_record_image;
};

struct PredictionReport {
  PredictionSet predictions;
  /// (image_id, reason) for every record that was skipped.
  std::vector<std::pair<std::string, std::string>> failures;
};

/// Inference over every record, without augmentation. Undecodable images abort
/// the run with the full failure list unless `skip_unreadable` is set.
inline PredictionReport predict_dataset(const AdaptedModel& m, const Dataset& ds, std::string model_id,
                                        const PredictOptions& opt = {}) {
  if (ds.label_space().size() != m.head_classes())
    throw ContractError("predict_dataset: model has " + std::to_string(m.head_classes()) + " outputs, label space has " +
                        std::to_string(ds.label_space().size()));
  if (opt.batch_size == 0) throw ContractError("predict_dataset: batch size must be positive");
  PredictionReport report{{std::move(model_id), ds.label_space(), {}}, {}};
  std::vector<Image> images;
  std::vector<std::string> ids;
  auto flush = [&] {
    if (images.empty()) return;
    const auto probs = softmax_rows(m.infer_logits(make_input_batch(images, m.spec())));
    for (std::size_t i = 0; i < ids.size(); ++i) report.predictions.rows.insert_or_assign(ids[i], probs[i]);
    images.clear();
    ids.clear();
  };
  for (const auto& r : ds.records()) {
    try {
      images.push_back(preprocess(opt.loader(r), m.spec()));
      ids.push_back(r.image_id);
    } catch (const Error& e) {
      report.failures.emplace_back(r.image_id, e.what());
    }
    if (images.size() == opt.batch_size) flush();
  }
  flush();
  if (!report.failures.empty() && !opt.skip_unreadable) throw PredictionFailureError(report.failures);
  return report;
}

namespace detail {

inline std::vector<std::string> keys(const PredictionSet& ps) {
  std::vector<std::string> out;
  out.reserve(ps.rows.size());
  for (const auto& [id, _] : ps.rows) out.push_back(id);
  return out;
}

inline void check_alignment(std::span<const PredictionSet> sets, const char* op) {
  if (sets.empty()) throw EmptyInputError(std::string(op) + ": no ensemble members");
  const auto& first = sets.front();
  for (const auto& s : sets.subspan(1)) {
    if (!(s.label_space == first.label_space))
      throw FormatError(std::string(op) + ": member '" + s.model_id + "' uses a different label space");
    std::vector<std::string> diff;
    const auto a = keys(first), b = keys(s);
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
    if (!diff.empty())
      throw AlignmentError(std::string(op) + ": members '" + first.model_id + "' and '" + s.model_id + "'",
                           std::move(diff));
  }
}

inline std::string joined_ids(std::span<const PredictionSet> sets, const char* tag) {
  std::vector<std::string> ids;
  for (const auto& s : sets) ids.push_back(s.model_id);
  std::sort(ids.begin(), ids.end());
  std::string out = std::string(tag) + "(";
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + ids[i];
  return out + ")";
}

}  // namespace detail

/// Per-image arithmetic mean of member vectors. Each coordinate is summed in
/// sorted order, so the result does not depend on member order.
inline PredictionSet combine_soft(std::span<const PredictionSet> sets) {
  detail::check_alignment(sets, "combine_soft");
  const std::size_t k = sets.front().label_space.size();
  PredictionSet out{detail::joined_ids(sets, "soft"), sets.front().label_space, {}};
  std::vector<double> column(sets.size());
  for (const auto& [id, _] : sets.front().rows) {
    std::vector<double> mean(k);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t m = 0; m < sets.size(); ++m) column[m] = sets[m].rows.at(id)[c];
      std::sort(column.begin(), column.end());
      double s = 0.0;
      for (double v : column) s += v;
      mean[c] = s / static_cast<double>(sets.size());
    }
    out.rows.emplace(id, ClassProbabilities(std::move(mean), ClassProbabilities::kSumTolerance * static_cast<double>(sets.size())));
  }
  return out;
}

/// Each member votes for its argmax (lowest index on ties); the output vector
/// holds vote shares. Ties between classes are left to decide_labels.
inline PredictionSet combine_majority(std::span<const PredictionSet> sets) {
  detail::check_alignment(sets, "combine_majority");
  const std::size_t k = sets.front().label_space.size();
  PredictionSet out{detail::joined_ids(sets, "vote"), sets.front().label_space, {}};
  for (const auto& [id, _] : sets.front().rows) {
    std::vector<std::size_t> votes(k, 0);
    for (const auto& s : sets) ++votes[s.rows.at(id).argmax()];
    std::vector<double> share(k);
    for (std::size_t c = 0; c < k; ++c) share[c] = static_cast<double>(votes[c]) / static_cast<double>(sets.size());
    out.rows.emplace(id, ClassProbabilities(std::move(share)));
  }
  return out;
}

inline PredictionSet combine(std::span<const PredictionSet> sets, Combiner c) {
  return c == Combiner::kSoftAverage ? combine_soft(sets) : combine_majority(sets);
}

/// argmax per image; exact ties go to the lowest class index.
inline std::map<std::string, std::size_t> decide_labels(const PredictionSet& ps) {
  std::map<std::string, std::size_t> out;
  for (const auto& [id, p] : ps.rows) out.emplace(id, p.argmax());
  return out;
}

/// Submission format: label-space header, one row per image, 6 decimals, LF.
inline void write_predictions(std::ostream& out, const PredictionSet& ps) {
  out << ps.label_space.csv_header() << '\n';
  char buf[32];
  for (const auto& [id, p] : ps.rows) {
    out << id;
    for (double v : p.values()) {
      std::snprintf(buf, sizeof(buf), ",%.6f", v);
      out << buf;
    }
    out << '\n';
  }
}

/// Reads a prediction CSV. Rows may sum to 1 only up to the 6-decimal print rounding.
inline PredictionSet read_predictions(std::istream& in, const LabelSpace& space, std::string model_id) {
  std::string line;
  if (!detail::read_line(in, line)) throw FormatError("predictions: empty input, header expected");
  detail::strip_bom(line);
  detail::check_header(line, space, "predictions");
  const std::size_t k = space.size();
  const double tolerance = ClassProbabilities::kSumTolerance + 5e-7 * static_cast<double>(k);
  PredictionSet ps{std::move(model_id), space, {}};
  std::size_t row = 1;
  while (detail::read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = "predictions row " + std::to_string(row);
    if (cells.size() != k + 1) throw FormatError(where + ": expected " + std::to_string(k + 1) + " fields");
    if (cells[0].empty()) throw FormatError(where + ": empty image id");
    std::vector<double> p(k);
    for (std::size_t c = 0; c < k; ++c) {
      const auto v = detail::parse_double(cells[c + 1]);
      if (!v) throw FormatError(where + ": '" + cells[c + 1] + "' is not a number");
      p[c] = *v;
    }
    try {
      if (!ps.rows.emplace(cells[0], ClassProbabilities(std::move(p), tolerance)).second)
        throw FormatError(where + ": duplicate image id " + cells[0]);
    } catch (const ContractError& e) {
      throw FormatError(where + " (" + cells[0] + "): " + e.what());
    }
  }
  return ps;
}

inline PredictionSet load_predictions(const std::filesystem::path& path, const LabelSpace& space) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open predictions file " + path.string());
  return read_predictions(in, space, path.stem().string());
}

}  // namespace dermo
