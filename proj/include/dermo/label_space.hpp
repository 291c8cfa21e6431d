#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dermo/errors.hpp"

namespace dermo {

/// Ordered set of class codes. The order is the index order used by CSV
/// columns, probability vectors and confusion-matrix axes.
class LabelSpace {
 public:
  LabelSpace(std::vector<std::string> codes, std::vector<std::string> display_names)
      : codes_(std::move(codes)), names_(std::move(display_names)) {
    if (codes_.size() < 2) throw ContractError("label space needs at least 2 classes");
    if (names_.size() != codes_.size())
      throw ContractError("label space: display names do not match class codes");
    std::set<std::string> seen;
    for (const auto& c : codes_) {
      if (c.empty()) throw ContractError("label space: empty class code");
      if (!seen.insert(c).second) throw ContractError("label space: duplicate class code " + c);
    }
  }

  explicit LabelSpace(std::vector<std::string> codes) : LabelSpace(codes, codes) {}

  /// The seven dermoscopy lesion classes in challenge column order.
  static const LabelSpace& isic2018() {
    static const LabelSpace space(
        {"MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"},
        {"Melanoma", "Melanocytic nevus", "Basal cell carcinoma", "Actinic keratosis",
         "Benign keratosis", "Dermatofibroma", "Vascular"});
    return space;
  }

  std::size_t size() const noexcept { return codes_.size(); }
  const std::vector<std::string>& codes() const noexcept { return codes_; }
  const std::string& code(std::size_t i) const { return codes_.at(i); }
  const std::string& display_name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> index_of(const std::string& code) const {
    for (std::size_t i = 0; i < codes_.size(); ++i)
      if (codes_[i] == code) return i;
    return std::nullopt;
  }

  /// `image,<code0>,<code1>,...` as used by ground-truth and prediction CSVs.
  std::string csv_header() const {
    std::string h = "image";
    for (const auto& c : codes_) h += "," + c;
    return h;
  }

  bool operator==(const LabelSpace& other) const { return codes_ == other.codes_; }

 private:
  std::vector<std::string> codes_;
  std::vector<std::string> names_;
};

}  // namespace dermo
