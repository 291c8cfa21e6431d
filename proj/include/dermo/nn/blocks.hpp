#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "dermo/nn/layers.hpp"

namespace dermo::nn {

/// relu(main(x) + shortcut(x)); the shortcut is the identity when absent.
class Residual final : public Layer {
 public:
  Residual(std::unique_ptr<Sequential> main, std::unique_ptr<Sequential> shortcut)
      : main_(std::move(main)), shortcut_(std::move(shortcut)) {}

  Tensor infer(const Tensor& x) const override {
    Tensor m = main_->infer(x);
    add_into(m, shortcut_ ? shortcut_->infer(x) : x);
    return relu_.infer(m);
  }

  Tensor forward(const Tensor& x) override {
    Tensor m = main_->forward(x);
    add_into(m, shortcut_ ? shortcut_->forward(x) : x);
    return relu_.forward(m);
  }

  Tensor backward(const Tensor& grad_out) override {
    const Tensor g = relu_.backward(grad_out);
    Tensor dx = main_->backward(g);
    add_into(dx, shortcut_ ? shortcut_->backward(g) : g);
    return dx;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) override {
    main_->collect(prefix + "main.", out);
    if (shortcut_) shortcut_->collect(prefix + "shortcut.", out);
  }

  void clear_cache() override {
    main_->clear_cache();
    if (shortcut_) shortcut_->clear_cache();
    relu_.clear_cache();
  }

 private:
  static void add_into(Tensor& acc, const Tensor& other) {
    require_same_shape(acc, other, "residual add");
    for (std::size_t i = 0; i < acc.numel(); ++i) acc.data()[i] += other.data()[i];
  }

  std::unique_ptr<Sequential> main_;
  std::unique_ptr<Sequential> shortcut_;
  ReLU relu_;
};

/// concat(x, f(x)) along channels.
class DenseConcat final : public Layer {
 public:
  explicit DenseConcat(std::unique_ptr<Sequential> branch) : branch_(std::move(branch)) {}

  Tensor infer(const Tensor& x) const override { return concat(x, branch_->infer(x)); }

  Tensor forward(const Tensor& x) override {
    in_channels_ = x.shape().c;
    return concat(x, branch_->forward(x));
  }

  Tensor backward(const Tensor& grad_out) override {
    const Shape& s = grad_out.shape();
    const std::size_t cb = s.c - in_channels_;
    Tensor gx({s.n, in_channels_, s.h, s.w});
    Tensor gb({s.n, cb, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) {
      const float* src = grad_out.data() + n * s.sample();
      std::copy(src, src + in_channels_ * s.plane(), gx.data() + n * in_channels_ * s.plane());
      std::copy(src + in_channels_ * s.plane(), src + s.sample(), gb.data() + n * cb * s.plane());
    }
    const Tensor d = branch_->backward(gb);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.data()[i] += d.data()[i];
    return gx;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) override { branch_->collect(prefix, out); }

  void clear_cache() override { branch_->clear_cache(); }

 private:
  static Tensor concat(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) throw DimensionError("dense concat: spatial mismatch");
    Tensor y({sa.n, sa.c + sb.c, sa.h, sa.w});
    for (std::size_t n = 0; n < sa.n; ++n) {
      float* dst = y.data() + n * y.shape().sample();
      std::copy(a.data() + n * sa.sample(), a.data() + (n + 1) * sa.sample(), dst);
      std::copy(b.data() + n * sb.sample(), b.data() + (n + 1) * sb.sample(), dst + sa.sample());
    }
    return y;
  }

  std::unique_ptr<Sequential> branch_;
  std::size_t in_channels_ = 0;
};

}  // namespace dermo::nn
