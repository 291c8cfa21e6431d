#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dermo/errors.hpp"
#include "dermo/image.hpp"
#include "dermo/loss.hpp"
#include "dermo/nn/blocks.hpp"
#include "dermo/nn/layers.hpp"
#include "dermo/probabilities.hpp"
#include "dermo/rng.hpp"

namespace dermo {

enum class BackboneName { kResNet50, kDenseNet121, kMobileNet, kStub };

/// Architecture identity plus the input contract its pretrained weights expect.
struct BackboneSpec {
  BackboneName name;
  std::size_t input_height;
  std::size_t input_width;
  std::array<float, 3> mean;  // on [0, 1] scaled RGB
  std::array<float, 3> std;
  /// Classes of the head shipped with the pretrained weights.
  std::size_t pretrained_classes;

  static BackboneSpec of(BackboneName name) {
    constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};
    constexpr std::array<float, 3> kImageNetStd{0.229f, 0.224f, 0.225f};
    constexpr std::array<float, 3> kHalf{0.5f, 0.5f, 0.5f};
    switch (name) {
      case BackboneName::kResNet50:
      case BackboneName::kDenseNet121:
        return {name, 224, 224, kImageNetMean, kImageNetStd, 1000};
      case BackboneName::kMobileNet:
        // Keras-trained weights expect inputs scaled to [-1, 1].
        return {name, 224, 224, kHalf, kHalf, 1000};
      case BackboneName::kStub:
        return {name, 64, 64, kHalf, kHalf, 10};
    }
    throw ContractError("unknown backbone");
  }

  /// Accepts resnet50, densenet121, mobilenet and stub.
  static BackboneSpec parse(std::string_view text) {
    if (text == "resnet50") return of(BackboneName::kResNet50);
    if (text == "densenet121") return of(BackboneName::kDenseNet121);
    if (text == "mobilenet") return of(BackboneName::kMobileNet);
    if (text == "stub") return of(BackboneName::kStub);
    throw ContractError("unknown backbone '" + std::string(text) +
                        "' (expected resnet50, densenet121, mobilenet or stub)");
  }

  std::string name_string() const {
    switch (name) {
      case BackboneName::kResNet50:
        return "resnet50";
      case BackboneName::kDenseNet121:
        return "densenet121";
      case BackboneName::kMobileNet:
        return "mobilenet";
      case BackboneName::kStub:
        return "stub";
    }
    return "?";
  }

  bool operator==(const BackboneSpec&) const = default;
};

enum class ParamGroup { kBody, kHead };
using GroupSet = std::set<ParamGroup>;

namespace arch {

struct Body {
  std::unique_ptr<nn::Sequential> layers;
  std::size_t feature_dim;
};

inline void conv_bn(nn::Sequential& seq, Rng& rng, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                    std::size_t pad, std::size_t groups = 1) {
  seq.add<nn::Conv2d>(in, out, k, stride, pad, groups).init_kaiming(rng);
  seq.add<nn::BatchNorm2d>(out);
}

/// Bottleneck residual network with [3, 4, 6, 3] blocks, stride on the 3x3 convolution.
inline Body resnet50(Rng& rng) {
  auto body = std::make_unique<nn::Sequential>();
  conv_bn(*body, rng, 3, 64, 7, 2, 3);
  body->add<nn::ReLU>();
  body->add<nn::MaxPool2d>(3, 2, 1);
  std::size_t in = 64;
  const std::array<std::pair<std::size_t, std::size_t>, 4> stages{{{64, 3}, {128, 4}, {256, 6}, {512, 3}}};
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto [width, blocks] = stages[s];
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      auto main = std::make_unique<nn::Sequential>();
      conv_bn(*main, rng, in, width, 1, 1, 0);
      main->add<nn::ReLU>();
      conv_bn(*main, rng, width, width, 3, stride, 1);
      main->add<nn::ReLU>();
      conv_bn(*main, rng, width, width * 4, 1, 1, 0);
      std::unique_ptr<nn::Sequential> shortcut;
      if (stride != 1 || in != width * 4) {
        shortcut = std::make_unique<nn::Sequential>();
        conv_bn(*shortcut, rng, in, width * 4, 1, stride, 0);
      }
      body->push(std::make_unique<nn::Residual>(std::move(main), std::move(shortcut)));
      in = width * 4;
    }
  }
  body->add<nn::GlobalAvgPool>();
  return {std::move(body), in};
}

/// Densely connected network, growth 32, blocks [6, 12, 24, 16], bottleneck width 4x growth.
inline Body densenet121(Rng& rng) {
  constexpr std::size_t kGrowth = 32;
  constexpr std::size_t kBottleneck = 4 * kGrowth;
  auto body = std::make_unique<nn::Sequential>();
  conv_bn(*body, rng, 3, 64, 7, 2, 3);
  body->add<nn::ReLU>();
  body->add<nn::MaxPool2d>(3, 2, 1);
  std::size_t c = 64;
  const std::array<std::size_t, 4> blocks{6, 12, 24, 16};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t l = 0; l < blocks[b]; ++l) {
      auto branch = std::make_unique<nn::Sequential>();
      branch->add<nn::BatchNorm2d>(c);
      branch->add<nn::ReLU>();
      branch->add<nn::Conv2d>(c, kBottleneck, 1, 1, 0).init_kaiming(rng);
      branch->add<nn::BatchNorm2d>(kBottleneck);
      branch->add<nn::ReLU>();
      branch->add<nn::Conv2d>(kBottleneck, kGrowth, 3, 1, 1).init_kaiming(rng);
      body->push(std::make_unique<nn::DenseConcat>(std::move(branch)));
      c += kGrowth;
    }
    if (b + 1 < blocks.size()) {
      body->add<nn::BatchNorm2d>(c);
      body->add<nn::ReLU>();
      body->add<nn::Conv2d>(c, c / 2, 1, 1, 0).init_kaiming(rng);
      body->add<nn::AvgPool2d>(2, 2);
      c /= 2;
    }
  }
  body->add<nn::BatchNorm2d>(c);
  body->add<nn::ReLU>();
  body->add<nn::GlobalAvgPool>();
  return {std::move(body), c};
}

/// MobileNet v1, width multiplier 1.0: a strided stem and 13 depthwise-separable blocks, ReLU6.
inline Body mobilenet(Rng& rng) {
  auto body = std::make_unique<nn::Sequential>();
  conv_bn(*body, rng, 3, 32, 3, 2, 1);
  body->add<nn::ReLU>(6.0f);
  struct Block {
    std::size_t in, out, stride;
  };
  const std::array<Block, 13> blocks{{{32, 64, 1},
                                      {64, 128, 2},
                                      {128, 128, 1},
                                      {128, 256, 2},
                                      {256, 256, 1},
                                      {256, 512, 2},
                                      {512, 512, 1},
                                      {512, 512, 1},
                                      {512, 512, 1},
                                      {512, 512, 1},
                                      {512, 512, 1},
                                      {512, 1024, 2},
                                      {1024, 1024, 1}}};
  for (const auto& b : blocks) {
    conv_bn(*body, rng, b.in, b.in, 3, b.stride, 1, b.in);
    body->add<nn::ReLU>(6.0f);
    conv_bn(*body, rng, b.in, b.out, 1, 1, 0);
    body->add<nn::ReLU>(6.0f);
  }
  body->add<nn::GlobalAvgPool>();
  return {std::move(body), 1024};
}

/// Tiny two-convolution network for desk-scale runs: 4x4 average pooling,
/// two biased 3x3 convolutions (8 and 16 channels), global pooling.
inline Body stub(Rng& rng) {
  auto body = std::make_unique<nn::Sequential>();
  body->add<nn::AvgPool2d>(4, 4);
  body->add<nn::Conv2d>(3, 8, 3, 1, 1, 1, true).init_uniform(rng);
  body->add<nn::ReLU>();
  body->add<nn::Conv2d>(8, 16, 3, 2, 1, 1, true).init_uniform(rng);
  body->add<nn::ReLU>();
  body->add<nn::GlobalAvgPool>();
  return {std::move(body), 16};
}

inline Body build(BackboneName name, Rng& rng) {
  switch (name) {
    case BackboneName::kResNet50:
      return resnet50(rng);
    case BackboneName::kDenseNet121:
      return densenet121(rng);
    case BackboneName::kMobileNet:
      return mobilenet(rng);
    case BackboneName::kStub:
      return stub(rng);
  }
  throw ContractError("unknown backbone");
}

}  // namespace arch

/// A backbone body with a replaceable affine classification head.
/// Move-only; a training loop owns it exclusively while training, and
/// `infer_logits` may be called concurrently once training is done.
class AdaptedModel {
 public:
  /// Architecture with freshly initialized body and head (not pretrained).
  AdaptedModel(const BackboneSpec& spec, std::size_t head_classes, std::uint64_t seed) : spec_(spec) {
    Rng rng(seed);
    auto body = arch::build(spec.name, rng);
    body_ = std::move(body.layers);
    feature_dim_ = body.feature_dim;
    head_ = std::make_unique<nn::Linear>(feature_dim_, head_classes);
    head_->init_uniform(rng);
    refresh_parameter_lists();
  }

  AdaptedModel(AdaptedModel&&) noexcept = default;
  AdaptedModel& operator=(AdaptedModel&&) noexcept = default;

  const BackboneSpec& spec() const noexcept { return spec_; }
  std::size_t head_classes() const noexcept { return head_->out_features(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  const GroupSet& trainable_groups() const noexcept { return trainable_; }
  GroupSet frozen_groups() const {
    GroupSet frozen;
    for (auto g : {ParamGroup::kBody, ParamGroup::kHead})
      if (!trainable_.count(g)) frozen.insert(g);
    return frozen;
  }

  const std::vector<nn::Parameter*>& parameters(ParamGroup g) const noexcept {
    return g == ParamGroup::kBody ? body_params_ : head_params_;
  }

  /// Body then head, in checkpoint order.
  std::vector<nn::Parameter*> all_parameters() const {
    std::vector<nn::Parameter*> all = body_params_;
    all.insert(all.end(), head_params_.begin(), head_params_.end());
    return all;
  }

  /// Learnable scalars in a group (statistics buffers excluded unless requested).
  std::size_t parameter_count(ParamGroup g, bool include_buffers = false) const {
    std::size_t n = 0;
    for (const auto* p : parameters(g))
      if (include_buffers || !p->is_buffer) n += p->value.size();
    return n;
  }

  /// FNV-1a over every value (parameters and buffers) in the group.
  std::uint64_t checksum(ParamGroup g) const {
    Fnv1a h;
    for (const auto* p : parameters(g)) h.update(p->value.data(), p->value.size() * sizeof(float));
    return h.digest();
  }

  nn::Tensor infer_logits(const nn::Tensor& batch) const { return head_->infer(body_->infer(batch)); }

  /// Training forward. A frozen body runs its inference path, so its running
  /// statistics stay bit-identical.
  nn::Tensor train_forward(const nn::Tensor& batch) {
    const nn::Tensor features = body_trainable() ? body_->forward(batch) : body_->infer(batch);
    return head_->forward(features);
  }

  void train_backward(const nn::Tensor& grad_logits) {
    const nn::Tensor g = head_->backward(grad_logits);
    if (body_trainable()) body_->backward(g);
  }

  void zero_grad() {
    for (auto* p : all_parameters()) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  }

  void clear_cache() {
    body_->clear_cache();
    head_->clear_cache();
  }

  using State = std::vector<std::vector<float>>;

  State state() const {
    State s;
    for (const auto* p : all_parameters()) s.push_back(p->value);
    return s;
  }

  void load_state(const State& s) {
    const auto params = all_parameters();
    if (s.size() != params.size()) throw IntegrityError("model state: tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (s[i].size() != params[i]->value.size()) throw IntegrityError("model state: size mismatch for " + params[i]->name);
      params[i]->value = s[i];
    }
  }

 private:
  friend AdaptedModel replace_head(AdaptedModel m, std::size_t num_classes, std::uint64_t seed);
  friend AdaptedModel set_trainable(AdaptedModel m, const GroupSet& groups);

  bool body_trainable() const { return trainable_.count(ParamGroup::kBody) > 0; }

  void refresh_parameter_lists() {
    body_params_.clear();
    head_params_.clear();
    body_->collect("body.", body_params_);
    head_->collect("head.", head_params_);
  }

  BackboneSpec spec_;
  std::unique_ptr<nn::Sequential> body_;
  std::unique_ptr<nn::Linear> head_;
  std::size_t feature_dim_ = 0;
  GroupSet trainable_{ParamGroup::kBody, ParamGroup::kHead};
  std::vector<nn::Parameter*> body_params_;
  std::vector<nn::Parameter*> head_params_;
};

/// Removes the current head and attaches a fresh `num_classes`-way affine head:
/// weights uniform in +-1/sqrt(fan_in) from `seed`, bias zero. The body is untouched.
inline AdaptedModel replace_head(AdaptedModel m, std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("replace_head: need at least 2 classes, got " + std::to_string(num_classes));
  auto head = std::make_unique<nn::Linear>(m.feature_dim_, num_classes);
  Rng rng(derive_seed(seed, 0x4EAD));
  head->init_uniform(rng);
  m.head_ = std::move(head);
  m.refresh_parameter_lists();
  return m;
}

/// Selects which parameter groups receive updates. The head always trains.
inline AdaptedModel set_trainable(AdaptedModel m, const GroupSet& groups) {
  if (groups.empty()) throw ContractError("set_trainable: no parameter groups given");
  if (!groups.count(ParamGroup::kHead)) throw ContractError("set_trainable: the head group must stay trainable");
  m.trainable_ = groups;
  return m;
}

/// Directory searched for pretrained weights when none is passed explicitly.
inline std::optional<std::filesystem::path> default_weights_dir() {
  if (const char* env = std::getenv("DERMO_WEIGHTS_DIR"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

/// Decodes, resizes and normalizes images into an (N, 3, H, W) batch.
inline nn::Tensor make_input_batch(std::span<const Image> images, const BackboneSpec& spec) {
  if (images.empty()) throw EmptyInputError("make_input_batch: no images");
  const std::size_t h = spec.input_height, w = spec.input_width;
  nn::Tensor t({images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.channels() != 3 || img.height() != h || img.width() != w)
      throw InputError("model expects " + std::to_string(h) + "x" + std::to_string(w) + "x3 input, got " +
                       std::to_string(img.height()) + "x" + std::to_string(img.width()) + "x" +
                       std::to_string(img.channels()));
    for (std::size_t c = 0; c < 3; ++c) {
      const float scale = 1.0f / (255.0f * spec.std[c]);
      const float shift = spec.mean[c] / spec.std[c];
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col) t.at(n, c, r, col) = static_cast<float>(img(r, col, c)) * scale - shift;
    }
  }
  return t;
}

/// Brings a decoded RGB image to the backbone's input resolution.
inline Image preprocess(const Image& img, const BackboneSpec& spec) {
  if (img.empty()) throw InputError("preprocess: empty image");
  if (img.channels() != 3) throw InputError("model expects 3-channel RGB input, got " + std::to_string(img.channels()));
  return resize_bilinear(img, spec.input_height, spec.input_width);
}

inline std::vector<ClassProbabilities> softmax_rows(const nn::Tensor& logits) {
  const std::size_t n = logits.shape().n, k = logits.shape().sample();
  std::vector<ClassProbabilities> out;
  out.reserve(n);
  std::vector<double> z(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) z[j] = logits.data()[i * k + j];
    out.emplace_back(softmax(z));
  }
  return out;
}

/// Softmax of the model's logits for one image.
inline ClassProbabilities predict_probabilities(const AdaptedModel& m, const Image& img) {
  const Image ready = preprocess(img, m.spec());
  const nn::Tensor batch = make_input_batch(std::span<const Image>(&ready, 1), m.spec());
  return softmax_rows(m.infer_logits(batch)).front();
}

}  // namespace dermo
