#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dermo/errors.hpp"
#include "dermo/label_space.hpp"
#include "dermo/rng.hpp"

namespace dermo {

struct ImageRecord {
  std::string image_id;
  std::filesystem::path image_path;
  std::optional<std::size_t> label;

  bool operator==(const ImageRecord&) const = default;
};

/// Records plus per-class counts over the labeled ones.
class Dataset {
 public:
  explicit Dataset(LabelSpace label_space) : label_space_(std::move(label_space)) {
    class_counts_.assign(label_space_.size(), 0);
  }

  Dataset(LabelSpace label_space, std::vector<ImageRecord> records) : Dataset(std::move(label_space)) {
    std::set<std::string> ids;
    for (auto& r : records) {
      if (r.image_id.empty()) throw FormatError("dataset: empty image id");
      if (!ids.insert(r.image_id).second) throw FormatError("dataset: duplicate image id " + r.image_id);
      add_unchecked(std::move(r));
    }
  }

  const LabelSpace& label_space() const noexcept { return label_space_; }
  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  const std::vector<std::size_t>& class_counts() const noexcept { return class_counts_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  std::size_t labeled_count() const noexcept {
    return std::accumulate(class_counts_.begin(), class_counts_.end(), std::size_t{0});
  }

  bool fully_labeled() const noexcept { return labeled_count() == records_.size(); }

 private:

  void add_unchecked(ImageRecord r) {
    if (r.label) {
      if (*r.label >= label_space_.size())
        throw LabelError("record " + r.image_id + ": label index out of range");
      ++class_counts_[*r.label];
    }
    records_.push_back(std::move(r));
  }

  LabelSpace label_space_;
  std::vector<ImageRecord> records_;
  std::vector<std::size_t> class_counts_;
};

/// Exact non-negative fraction, so that round-half-up on `fraction * count` is exact.
struct Fraction {
  std::int64_t numerator = 1;
  std::int64_t denominator = 10;

  /// Nearest fraction with denominator 10^9 (reduced).
  static Fraction from_double(double x) {
    if (!std::isfinite(x)) throw ContractError("fraction must be finite");
    std::int64_t den = 1'000'000'000;
    auto num = static_cast<std::int64_t>(std::llround(x * static_cast<double>(den)));
    const std::int64_t g = std::gcd(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    return {num, den};
  }

  double value() const noexcept { return static_cast<double>(numerator) / static_cast<double>(denominator); }

  bool in_open_unit_interval() const noexcept {
    return denominator > 0 && numerator > 0 && numerator < denominator;
  }

  /// round-half-up(fraction * n), computed in integers.
  std::size_t round_half_up_times(std::size_t n) const {
    const auto scaled = 2 * numerator * static_cast<std::int64_t>(n) + denominator;
    return static_cast<std::size_t>(scaled / (2 * denominator));
  }
};

struct SplitResult {
  Dataset train;
  Dataset validation;
  std::uint64_t seed;
  Fraction fraction;
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                           : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

/// Reads one line, stripping a trailing CR. Returns false at end of input.
inline bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return true;
}

inline void strip_bom(std::string& line) {
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
    line.erase(0, 3);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
  return v;
}

/// Validates a `image,<codes...>` header against the label space.
inline void check_header(const std::string& line, const LabelSpace& space, const std::string& what) {
  const auto cells = split_csv_line(line);
  const auto& codes = space.codes();
  if (cells.empty() || cells[0] != "image")
    throw FormatError(what + ": header column 1 must be 'image', found '" +
                      (cells.empty() ? std::string() : cells[0]) + "'");
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i + 1 >= cells.size())
      throw FormatError(what + ": header is missing column '" + codes[i] + "'");
    if (cells[i + 1] != codes[i])
      throw FormatError(what + ": header column " + std::to_string(i + 2) + " is '" + cells[i + 1] +
                        "', expected '" + codes[i] + "'");
  }
  if (cells.size() > codes.size() + 1)
    throw FormatError(what + ": unexpected extra header column '" + cells[codes.size() + 1] + "'");
}

}  // namespace detail

/// Finds `<dir>/<id>.jpg`, `.jpeg` or `.png`.
inline std::optional<std::filesystem::path> find_image_file(const std::filesystem::path& dir,
                                                            const std::string& image_id) {
  for (const char* ext : {".jpg", ".jpeg", ".png"}) {
    auto p = dir / (image_id + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

/// Parses a one-hot ground-truth CSV. When `image_dir` is given every id must
/// resolve to an image file there; otherwise paths are left empty.
inline Dataset parse_ground_truth(std::istream& csv, const std::optional<std::filesystem::path>& image_dir,
                                  const LabelSpace& space = LabelSpace::isic2018()) {
  std::string line;
  if (!detail::read_line(csv, line)) throw FormatError("ground truth: empty input, header expected");
  detail::strip_bom(line);
  detail::check_header(line, space, "ground truth");

  const std::size_t k = space.size();
  std::vector<ImageRecord> records;
  std::vector<std::string> missing;
  std::size_t row = 1;
  while (detail::read_line(csv, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string row_name = "row " + std::to_string(row) + (cells.empty() ? "" : " (" + cells[0] + ")");
    if (cells.size() != k + 1)
      throw FormatError("ground truth " + row_name + ": expected " + std::to_string(k + 1) +
                        " fields, found " + std::to_string(cells.size()));
    if (cells[0].empty()) throw FormatError("ground truth " + row_name + ": empty image id");
    std::optional<std::size_t> label;
    std::size_t ones = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const auto v = detail::parse_double(cells[c + 1]);
      if (!v || (*v != 0.0 && *v != 1.0))
        throw LabelError("ground truth " + row_name + ": value '" + cells[c + 1] + "' in column " +
                         space.code(c) + " is not 0.0 or 1.0");
      if (*v == 1.0) {
        ++ones;
        label = c;
      }
    }
    if (ones != 1)
      throw LabelError("ground truth " + row_name + ": expected exactly one 1.0, found " +
                       std::to_string(ones));
    ImageRecord rec{cells[0], {}, label};
    if (image_dir) {
      if (auto p = find_image_file(*image_dir, rec.image_id))
        rec.image_path = *p;
      else
        missing.push_back(rec.image_id);
    }
    records.push_back(std::move(rec));
  }
  if (!missing.empty()) throw MissingFileError(std::move(missing));
  return Dataset(space, std::move(records));
}

inline Dataset load_ground_truth(const std::filesystem::path& csv_path,
                                 const std::optional<std::filesystem::path>& image_dir,
                                 const LabelSpace& space = LabelSpace::isic2018()) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error("cannot open ground truth file " + csv_path.string());
  return parse_ground_truth(in, image_dir, space);
}

/// Label space named by the `image,<codes...>` header of a ground-truth or
/// prediction CSV. The seven lesion codes map to the built-in lesion space.
inline LabelSpace label_space_from_csv(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw Error("cannot open " + csv_path.string());
  std::string line;
  if (!detail::read_line(in, line)) throw FormatError(csv_path.string() + ": empty file, header expected");
  detail::strip_bom(line);
  auto cells = detail::split_csv_line(line);
  if (cells.empty() || cells[0] != "image")
    throw FormatError(csv_path.string() + ": header column 1 must be 'image', found '" +
                      (cells.empty() ? std::string() : cells[0]) + "'");
  cells.erase(cells.begin());
  if (cells == LabelSpace::isic2018().codes()) return LabelSpace::isic2018();
  try {
    return LabelSpace(cells);
  } catch (const ContractError& e) {
    throw FormatError(csv_path.string() + ": " + e.what());
  }
}

/// Writes labeled records in the ground-truth CSV format (LF line endings).
inline void write_ground_truth(std::ostream& out, const Dataset& ds) {
  out << ds.label_space().csv_header() << '\n';
  for (const auto& r : ds.records()) {
    if (!r.label) throw ContractError("write_ground_truth: record " + r.image_id + " is unlabeled");
    out << r.image_id;
    for (std::size_t c = 0; c < ds.label_space().size(); ++c) out << (c == *r.label ? ",1.0" : ",0.0");
    out << '\n';
  }
}

/// Every image file in `dir` as an unlabeled record, sorted by id.
inline Dataset scan_image_dir(const std::filesystem::path& dir, const LabelSpace& space) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext != ".jpg" && ext != ".jpeg" && ext != ".png") continue;
    found.emplace(entry.path().stem().string(), entry.path());
  }
  std::vector<ImageRecord> records;
  for (auto& [id, path] : found) records.push_back({id, path, std::nullopt});
  return Dataset(space, std::move(records));
}

/// Number of validation records taken from a class of `class_count` records.
inline std::size_t validation_quota(std::size_t class_count, const Fraction& fraction) {
  return std::max<std::size_t>(1, fraction.round_half_up_times(class_count));
}

/// Per-class split: each class contributes max(1, round-half-up(fraction * n_c))
/// records to validation. Within a class records are ordered by image id and
/// shuffled with a stream derived from (seed, class index).
inline SplitResult stratified_split(const Dataset& ds, Fraction fraction, std::uint64_t seed) {
  if (!fraction.in_open_unit_interval())
    throw ContractError("stratified_split: fraction must lie in (0, 1)");
  if (!ds.fully_labeled()) throw ContractError("stratified_split: dataset has unlabeled records");
  const auto& space = ds.label_space();
  std::vector<std::vector<std::size_t>> by_class(space.size());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[*ds.records()[i].label].push_back(i);

  std::vector<bool> to_validation(ds.size(), false);
  for (std::size_t c = 0; c < space.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < 2)
      throw SplitError("stratified_split: class " + space.code(c) + " has " +
                       std::to_string(members.size()) + " record(s), at least 2 required");
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return ds.records()[a].image_id < ds.records()[b].image_id;
    });
    Rng rng(derive_seed(seed, c));
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t quota = validation_quota(members.size(), fraction);
    for (std::size_t j = 0; j < quota; ++j) to_validation[members[j]] = true;
  }

  std::vector<ImageRecord> train, validation;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (to_validation[i] ? validation : train).push_back(ds.records()[i]);
  return SplitResult{Dataset(space, std::move(train)), Dataset(space, std::move(validation)), seed, fraction};
}

/// Writes the `image,subset` manifest in the input dataset's record order.
inline void write_split_manifest(std::ostream& out, const Dataset& input, const SplitResult& split) {
  std::set<std::string> validation_ids;
  for (const auto& r : split.validation.records()) validation_ids.insert(r.image_id);
  out << "image,subset\n";
  for (const auto& r : input.records())
    out << r.image_id << (validation_ids.count(r.image_id) ? ",validation\n" : ",train\n");
}

/// Reads an `image,subset` manifest into id -> is_validation.
inline std::map<std::string, bool> read_split_manifest(std::istream& in) {
  std::string line;
  if (!detail::read_line(in, line)) throw FormatError("split manifest: empty input");
  detail::strip_bom(line);
  if (line != "image,subset") throw FormatError("split manifest: header must be 'image,subset'");
  std::map<std::string, bool> out;
  std::size_t row = 1;
  while (detail::read_line(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 2 || (cells[1] != "train" && cells[1] != "validation"))
      throw FormatError("split manifest row " + std::to_string(row) + ": expected '<id>,train|validation'");
    if (!out.emplace(cells[0], cells[1] == "validation").second)
      throw FormatError("split manifest: duplicate id " + cells[0]);
  }
  return out;
}

/// Rebuilds a split from a manifest. Every dataset id must appear in it and vice versa.
inline SplitResult apply_split_manifest(const Dataset& ds, const std::map<std::string, bool>& manifest,
                                        std::uint64_t seed, Fraction fraction) {
  std::vector<std::string> diff;
  std::set<std::string> ids;
  for (const auto& r : ds.records()) {
    ids.insert(r.image_id);
    if (!manifest.count(r.image_id)) diff.push_back(r.image_id);
  }
  for (const auto& [id, _] : manifest)
    if (!ids.count(id)) diff.push_back(id);
  if (!diff.empty()) throw AlignmentError("split manifest vs ground truth", std::move(diff));
  std::vector<ImageRecord> train, validation;
  for (const auto& r : ds.records()) (manifest.at(r.image_id) ? validation : train).push_back(r);
  return SplitResult{Dataset(ds.label_space(), std::move(train)),
                     Dataset(ds.label_space(), std::move(validation)), seed, fraction};
}

}  // namespace dermo
