#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dermo/dataset.hpp"
#include "dermo/image.hpp"
#include "dermo/label_space.hpp"
#include "dermo/rng.hpp"

namespace dermo {

struct SyntheticOptions {
  std::size_t total = 600;
  std::vector<std::size_t> ratios{10, 3, 1};
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
};

struct SyntheticSummary {
  LabelSpace label_space;
  std::vector<std::size_t> class_counts;
  std::filesystem::path ground_truth;
  std::filesystem::path image_dir;
  std::filesystem::path config;
};

/// Splits `total` proportionally to `ratios` by largest remainder (ties to the lower index).
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& ratios) {
  std::size_t sum = 0;
  for (auto r : ratios) sum += r;
  if (sum == 0) throw ContractError("apportion: ratios sum to zero");
  std::vector<std::size_t> counts(ratios.size());
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, class)
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < ratios.size(); ++c) {
    counts[c] = total * ratios[c] / sum;
    assigned += counts[c];
    remainders.emplace_back(total * ratios[c] % sum, c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i].second];
  return counts;
}

/// Skin-toned background with one elliptical lesion whose hue identifies the class.
inline Image render_synthetic_lesion(std::size_t size, std::size_t label, Rng& rng) {
  static constexpr std::array<std::array<double, 3>, 3> kLesion{{{170, 55, 45}, {55, 140, 65}, {60, 75, 175}}};
  const auto& base = kLesion[label % kLesion.size()];
  Image img(size, size, 3);
  const double s = static_cast<double>(size);
  const double cy = rng.uniform(0.35, 0.65) * s, cx = rng.uniform(0.35, 0.65) * s;
  const double ry = rng.uniform(0.22, 0.36) * s, rx = rng.uniform(0.22, 0.36) * s;
  std::array<double, 3> lesion{};
  for (std::size_t ch = 0; ch < 3; ++ch) lesion[ch] = base[ch] + rng.uniform(-25.0, 25.0);
  const std::array<double, 3> skin{215 + rng.uniform(-15.0, 15.0), 175 + rng.uniform(-15.0, 15.0),
                                   145 + rng.uniform(-15.0, 15.0)};
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const double dy = (static_cast<double>(r) - cy) / ry, dx = (static_cast<double>(c) - cx) / rx;
      const bool inside = dy * dy + dx * dx <= 1.0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = (inside ? lesion[ch] : skin[ch]) + rng.uniform(-15.0, 15.0);
        img(r, c, ch) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  return img;
}

/// Writes `<dir>/images/*.png`, `<dir>/ground_truth.csv` and a stub-backbone
/// `<dir>/config.json` whose run directory is `<dir>/run`.
inline SyntheticSummary generate_synthetic(const std::filesystem::path& dir, const SyntheticOptions& opt = {}) {
  if (opt.ratios.size() < 2 || opt.ratios.size() > 3) throw ContractError("synthetic: 2 or 3 classes supported");
  if (opt.image_size < 8) throw ContractError("synthetic: image size too small");
  const std::vector<std::string> all_codes{"RED", "GREEN", "BLUE"};
  LabelSpace space(std::vector<std::string>(all_codes.begin(), all_codes.begin() + static_cast<std::ptrdiff_t>(opt.ratios.size())));
  const auto counts = apportion(opt.total, opt.ratios);

  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < counts.size(); ++c) labels.insert(labels.end(), counts[c], c);
  Rng rng(derive_seed(opt.seed, 0x5147));
  rng.shuffle(std::span<std::size_t>(labels));

  const auto image_dir = dir / "images";
  std::filesystem::create_directories(image_dir);
  std::vector<ImageRecord> records;
  char name[32];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::snprintf(name, sizeof(name), "SYN_%05zu", i);
    const auto path = image_dir / (std::string(name) + ".png");
    write_png(render_synthetic_lesion(opt.image_size, labels[i], rng), path);
    records.push_back({name, path, labels[i]});
  }
  const Dataset ds(space, std::move(records));
  const auto gt = dir / "ground_truth.csv";
  {
    std::ofstream out(gt, std::ios::binary);
    write_ground_truth(out, ds);
  }
  const auto cfg = dir / "config.json";
  {
    const nlohmann::json j = {{"ground_truth", "ground_truth.csv"}, {"image_dir", "images"},
                              {"classes", space.codes()},           {"backbones", {"stub"}},
                              {"run_dir", "run"},                   {"seed", opt.seed}};
    std::ofstream out(cfg);
    out << j.dump(2) << '\n';
  }
  return {space, counts, gt, image_dir, cfg};
}

}  // namespace dermo
