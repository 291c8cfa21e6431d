#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dermo/dataset.hpp"
#include "dermo/image.hpp"
#include "dermo/rng.hpp"

namespace dermo {

enum class FlipVariant : std::uint8_t { kIdentity = 0, kHorizontal = 1, kVertical = 2, kBoth = 3 };

template <typename T>
PixelGrid<T> apply_flip(const PixelGrid<T>& img, FlipVariant v) {
  switch (v) {
    case FlipVariant::kIdentity:
      return img;
    case FlipVariant::kHorizontal:
      return flip_horizontal(img);
    case FlipVariant::kVertical:
      return flip_vertical(img);
    case FlipVariant::kBoth:
      return flip_vertical(flip_horizontal(img));
  }
  return img;
}

/// Uniform choice over the four flip variants for `count` consecutive samples.
inline std::vector<FlipVariant> plan_flips(std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xF11B));
  std::vector<FlipVariant> plan(count);
  for (auto& v : plan) v = static_cast<FlipVariant>(rng.next() >> 62);
  return plan;
}

struct AugmentedSample {
  std::string image_id;
  Image image;
  std::size_t label;
  FlipVariant variant;
};

using ImageLoader = std::function<Image(const ImageRecord&)>;

inline Image load_record_image(const ImageRecord& r) { return decode_image(r.image_path, r.image_id); }

/// Walks a labeled dataset in record order, emitting each decoded image under
/// a seeded flip variant. The sequence is a pure function of (dataset, seed).
class AugmentedStream {
 public:
  AugmentedStream(const Dataset& ds, std::uint64_t seed, ImageLoader loader = load_record_image,
                  bool enabled = true)
      : ds_(&ds), loader_(std::move(loader)) {
    if (!ds.fully_labeled()) throw ContractError("augmented_stream: dataset must be labeled");
    plan_ = enabled ? plan_flips(ds.size(), seed) : std::vector<FlipVariant>(ds.size(), FlipVariant::kIdentity);
  }

  std::optional<AugmentedSample> next() {
    if (pos_ >= ds_->size()) return std::nullopt;
    const auto& rec = ds_->records()[pos_];
    const auto variant = plan_[pos_];
    ++pos_;
    return AugmentedSample{rec.image_id, apply_flip(loader_(rec), variant), *rec.label, variant};
  }

  const std::vector<FlipVariant>& plan() const noexcept { return plan_; }

 private:
  const Dataset* ds_;
  ImageLoader loader_;
  std::vector<FlipVariant> plan_;
  std::size_t pos_ = 0;
};

}  // namespace dermo
