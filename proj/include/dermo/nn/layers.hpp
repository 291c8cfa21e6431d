#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dermo/nn/tensor.hpp"
#include "dermo/rng.hpp"

namespace dermo::nn {

/// A learnable tensor or a statistics buffer. Buffers are saved and
/// checksummed with the parameters but never touched by the optimizer.
struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;
  bool is_buffer = false;

  Parameter(std::string n, std::size_t size, bool buffer = false)
      : name(std::move(n)), value(size, 0.0f), grad(buffer ? 0 : size, 0.0f), is_buffer(buffer) {}
};

/// Layers expose two forward paths. `infer` is the inference path: it reads
/// parameters only and may be called concurrently. `forward` is the training
/// path: it caches what `backward` needs and updates running statistics.
/// `backward` accumulates into parameter gradients and returns the input gradient.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor infer(const Tensor& x) const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(const std::string& /*prefix*/, std::vector<Parameter*>& /*out*/) {}
  virtual void clear_cache() {}
};

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

/// 2-D convolution with square kernel, symmetric zero padding and optional groups.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, std::size_t groups = 1, bool bias = false)
      : in_(in_channels),
        out_(out_channels),
        k_(kernel),
        stride_(stride),
        pad_(padding),
        groups_(groups),
        weight_("weight", out_channels * (in_channels / groups) * kernel * kernel),
        bias_("bias", bias ? out_channels : 0) {
    if (groups == 0 || in_channels % groups != 0 || out_channels % groups != 0)
      throw ContractError("conv2d: channels not divisible by groups");
    has_bias_ = bias;
  }

  /// He-normal initialization over fan-out.
  void init_kaiming(Rng& rng) {
    const double fan_out = static_cast<double>(out_ / groups_ * k_ * k_);
    const double std = std::sqrt(2.0 / fan_out);
    for (auto& w : weight_.value) w = static_cast<float>(rng.normal() * std);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) on weights and bias.
  void init_uniform(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ / groups_ * k_ * k_));
    for (auto& w : weight_.value) w = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& b : bias_.value) b = static_cast<float>(rng.uniform(-bound, bound));
  }

  Tensor infer(const Tensor& x) const override {
    check_input(x);
    const Shape o = output_shape(x.shape());
    Tensor y(o);
    const std::size_t cg = in_ / groups_, og = out_ / groups_, p = o.plane();
    const std::size_t ckk = cg * k_ * k_;
    if (depthwise()) {
      depthwise_forward(x, y);
    } else {
      std::vector<float> col;
      for (std::size_t n = 0; n < o.n; ++n) {
        for (std::size_t g = 0; g < groups_; ++g) {
          const float* src = x.data() + (n * in_ + g * cg) * x.shape().plane();
          const float* col_ptr = pointwise() ? src : (im2col(src, x.shape(), o, cg, col), col.data());
          ConstMatMap cols(col_ptr, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(p));
          ConstMatMap w(weight_.value.data() + g * og * ckk, static_cast<Eigen::Index>(og),
                        static_cast<Eigen::Index>(ckk));
          MatMap out(y.data() + (n * out_ + g * og) * p, static_cast<Eigen::Index>(og),
                     static_cast<Eigen::Index>(p));
          out.noalias() = w * cols;
        }
      }
    }
    if (has_bias_)
      for (std::size_t n = 0; n < o.n; ++n)
        for (std::size_t c = 0; c < out_; ++c) {
          float* dst = y.data() + (n * out_ + c) * p;
          for (std::size_t i = 0; i < p; ++i) dst[i] += bias_.value[c];
        }
    return y;
  }

  Tensor forward(const Tensor& x) override {
    input_ = x;
    return infer(x);
  }

  Tensor backward(const Tensor& grad_out) override {
    const Shape is = input_.shape();
    const Shape o = output_shape(is);
    if (!(grad_out.shape() == o)) throw DimensionError("conv2d backward: gradient shape " + grad_out.shape().str());
    Tensor dx(is);
    const std::size_t cg = in_ / groups_, og = out_ / groups_, p = o.plane();
    const std::size_t ckk = cg * k_ * k_;
    if (depthwise()) {
      depthwise_backward(grad_out, dx);
    } else {
      std::vector<float> col, dcol(pointwise() ? 0 : ckk * p);
      for (std::size_t n = 0; n < o.n; ++n) {
        for (std::size_t g = 0; g < groups_; ++g) {
          const float* src = input_.data() + (n * in_ + g * cg) * is.plane();
          const float* col_ptr = pointwise() ? src : (im2col(src, is, o, cg, col), col.data());
          ConstMatMap cols(col_ptr, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(p));
          ConstMatMap dy(grad_out.data() + (n * out_ + g * og) * p, static_cast<Eigen::Index>(og),
                         static_cast<Eigen::Index>(p));
          MatMap dw(weight_.grad.data() + g * og * ckk, static_cast<Eigen::Index>(og),
                    static_cast<Eigen::Index>(ckk));
          dw.noalias() += dy * cols.transpose();
          ConstMatMap w(weight_.value.data() + g * og * ckk, static_cast<Eigen::Index>(og),
                        static_cast<Eigen::Index>(ckk));
          float* dsrc = dx.data() + (n * in_ + g * cg) * is.plane();
          if (pointwise()) {
            MatMap dcols(dsrc, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(p));
            dcols.noalias() = w.transpose() * dy;
          } else {
            MatMap dcols(dcol.data(), static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(p));
            dcols.noalias() = w.transpose() * dy;
            col2im(dcol.data(), is, o, cg, dsrc);
          }
        }
      }
    }
    if (has_bias_)
      for (std::size_t n = 0; n < o.n; ++n)
        for (std::size_t c = 0; c < out_; ++c) {
          const float* g = grad_out.data() + (n * out_ + c) * p;
          double s = 0.0;
          for (std::size_t i = 0; i < p; ++i) s += g[i];
          bias_.grad[c] += static_cast<float>(s);
        }
    return dx;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) override {
    weight_.name = prefix + "weight";
    out.push_back(&weight_);
    if (has_bias_) {
      bias_.name = prefix + "bias";
      out.push_back(&bias_);
    }
  }

  void clear_cache() override { input_ = Tensor(); }

  Shape output_shape(const Shape& in) const {
    if (in.h + 2 * pad_ < k_ || in.w + 2 * pad_ < k_) throw DimensionError("conv2d: input smaller than kernel");
    return {in.n, out_, (in.h + 2 * pad_ - k_) / stride_ + 1, (in.w + 2 * pad_ - k_) / stride_ + 1};
  }

 private:
  bool pointwise() const noexcept { return k_ == 1 && stride_ == 1 && pad_ == 0; }
  bool depthwise() const noexcept { return groups_ == in_ && groups_ == out_ && groups_ > 1; }

  void check_input(const Tensor& x) const {
    if (x.shape().c != in_)
      throw DimensionError("conv2d: expected " + std::to_string(in_) + " input channels, got " +
                           std::to_string(x.shape().c));
  }

  void im2col(const float* src, const Shape& is, const Shape& o, std::size_t cg, std::vector<float>& col) const {
    const std::size_t p = o.plane();
    col.assign(cg * k_ * k_ * p, 0.0f);
    for (std::size_t c = 0; c < cg; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          float* row = col.data() + ((c * k_ + ki) * k_ + kj) * p;
          const float* plane = src + c * is.plane();
          for (std::size_t oh = 0; oh < o.h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * stride_ + ki) - static_cast<std::ptrdiff_t>(pad_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.h)) continue;
            for (std::size_t ow = 0; ow < o.w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * stride_ + kj) - static_cast<std::ptrdiff_t>(pad_);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.w)) continue;
              row[oh * o.w + ow] = plane[static_cast<std::size_t>(ih) * is.w + static_cast<std::size_t>(iw)];
            }
          }
        }
  }

  void col2im(const float* col, const Shape& is, const Shape& o, std::size_t cg, float* dst) const {
    const std::size_t p = o.plane();
    for (std::size_t c = 0; c < cg; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const float* row = col + ((c * k_ + ki) * k_ + kj) * p;
          float* plane = dst + c * is.plane();
          for (std::size_t oh = 0; oh < o.h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * stride_ + ki) - static_cast<std::ptrdiff_t>(pad_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.h)) continue;
            for (std::size_t ow = 0; ow < o.w; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * stride_ + kj) - static_cast<std::ptrdiff_t>(pad_);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.w)) continue;
              plane[static_cast<std::size_t>(ih) * is.w + static_cast<std::size_t>(iw)] += row[oh * o.w + ow];
            }
          }
        }
  }

  template <typename Fn>
  void for_each_tap(const Shape& is, const Shape& o, Fn&& fn) const {
    for (std::size_t oh = 0; oh < o.h; ++oh)
      for (std::size_t ki = 0; ki < k_; ++ki) {
        const auto ih = static_cast<std::ptrdiff_t>(oh * stride_ + ki) - static_cast<std::ptrdiff_t>(pad_);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is.h)) continue;
        for (std::size_t ow = 0; ow < o.w; ++ow)
          for (std::size_t kj = 0; kj < k_; ++kj) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride_ + kj) - static_cast<std::ptrdiff_t>(pad_);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is.w)) continue;
            fn(oh * o.w + ow, static_cast<std::size_t>(ih) * is.w + static_cast<std::size_t>(iw), ki * k_ + kj);
          }
      }
  }

  void depthwise_forward(const Tensor& x, Tensor& y) const {
    const Shape& is = x.shape();
    const Shape& o = y.shape();
    for (std::size_t n = 0; n < is.n; ++n)
      for (std::size_t c = 0; c < in_; ++c) {
        const float* src = x.data() + (n * in_ + c) * is.plane();
        float* dst = y.data() + (n * out_ + c) * o.plane();
        const float* w = weight_.value.data() + c * k_ * k_;
        for_each_tap(is, o, [&](std::size_t oi, std::size_t ii, std::size_t t) { dst[oi] += w[t] * src[ii]; });
      }
  }

  void depthwise_backward(const Tensor& grad_out, Tensor& dx) {
    const Shape& is = input_.shape();
    const Shape& o = grad_out.shape();
    for (std::size_t n = 0; n < is.n; ++n)
      for (std::size_t c = 0; c < in_; ++c) {
        const float* src = input_.data() + (n * in_ + c) * is.plane();
        const float* dy = grad_out.data() + (n * out_ + c) * o.plane();
        float* dsrc = dx.data() + (n * in_ + c) * is.plane();
        const float* w = weight_.value.data() + c * k_ * k_;
        float* dw = weight_.grad.data() + c * k_ * k_;
        for_each_tap(is, o, [&](std::size_t oi, std::size_t ii, std::size_t t) {
          dw[t] += dy[oi] * src[ii];
          dsrc[ii] += w[t] * dy[oi];
        });
      }
  }

  std::size_t in_, out_, k_, stride_, pad_, groups_;
  bool has_bias_ = false;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

/// Per-channel batch normalization with running statistics.
class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, float eps = 1e-5f, float momentum = 0.1f)
      : c_(channels),
        eps_(eps),
        momentum_(momentum),
        gamma_("weight", channels),
        beta_("bias", channels),
        running_mean_("running_mean", channels, true),
        running_var_("running_var", channels, true) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
    std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0f);
  }

  Tensor infer(const Tensor& x) const override {
    check(x);
    Tensor y(x.shape());
    const std::size_t p = x.shape().plane();
    for (std::size_t n = 0; n < x.shape().n; ++n)
      for (std::size_t c = 0; c < c_; ++c) {
        const float scale = gamma_.value[c] / std::sqrt(running_var_.value[c] + eps_);
        const float shift = beta_.value[c] - running_mean_.value[c] * scale;
        const float* src = x.data() + (n * c_ + c) * p;
        float* dst = y.data() + (n * c_ + c) * p;
        for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] * scale + shift;
      }
    return y;
  }

  Tensor forward(const Tensor& x) override {
    check(x);
    const Shape& s = x.shape();
    const std::size_t p = s.plane();
    const double m = static_cast<double>(s.n * p);
    if (s.n * p < 2) throw DimensionError("batchnorm: training needs more than one value per channel");
    xhat_ = Tensor(s);
    inv_std_.assign(c_, 0.0f);
    Tensor y(s);
    for (std::size_t c = 0; c < c_; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const float* src = x.data() + (n * c_ + c) * p;
        for (std::size_t i = 0; i < p; ++i) sum += src[i];
      }
      const double mean = sum / m;
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const float* src = x.data() + (n * c_ + c) * p;
        for (std::size_t i = 0; i < p; ++i) sq += (src[i] - mean) * (src[i] - mean);
      }
      const double var = sq / m;
      const auto inv_std = static_cast<float>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = inv_std;
      for (std::size_t n = 0; n < s.n; ++n) {
        const float* src = x.data() + (n * c_ + c) * p;
        float* xh = xhat_.data() + (n * c_ + c) * p;
        float* dst = y.data() + (n * c_ + c) * p;
        for (std::size_t i = 0; i < p; ++i) {
          xh[i] = static_cast<float>(src[i] - mean) * inv_std;
          dst[i] = xh[i] * gamma_.value[c] + beta_.value[c];
        }
      }
      running_mean_.value[c] = static_cast<float>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean);
      running_var_.value[c] =
          static_cast<float>((1.0 - momentum_) * running_var_.value[c] + momentum_ * var * m / (m - 1.0));
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    require_same_shape(grad_out, xhat_, "batchnorm backward");
    const Shape& s = grad_out.shape();
    const std::size_t p = s.plane();
    const double m = static_cast<double>(s.n * p);
    Tensor dx(s);
    for (std::size_t c = 0; c < c_; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const float* dy = grad_out.data() + (n * c_ + c) * p;
        const float* xh = xhat_.data() + (n * c_ + c) * p;
        for (std::size_t i = 0; i < p; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh[i];
        }
      }
      gamma_.grad[c] += static_cast<float>(sum_dy_xhat);
      beta_.grad[c] += static_cast<float>(sum_dy);
      const double k = gamma_.value[c] * inv_std_[c] / m;
      for (std::size_t n = 0; n < s.n; ++n) {
        const float* dy = grad_out.data() + (n * c_ + c) * p;
        const float* xh = xhat_.data() + (n * c_ + c) * p;
        float* d = dx.data() + (n * c_ + c) * p;
        for (std::size_t i = 0; i < p; ++i) d[i] = static_cast<float>(k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
      }
    }
    return dx;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) override {
    gamma_.name = prefix + "weight";
    beta_.name = prefix + "bias";
    running_mean_.name = prefix + "running_mean";
    running_var_.name = prefix + "running_var";
    out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
  }

  void clear_cache() override {
    xhat_ = Tensor();
    inv_std_.clear();
  }

 private:
  void check(const Tensor& x) const {
    if (x.shape().c != c_) throw DimensionError("batchnorm: channel mismatch");
  }

  std::size_t c_;
  float eps_, momentum_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Tensor xhat_;
  std::vector<float> inv_std_;
};

/// max(0, x), optionally clipped above (ReLU6).
class ReLU final : public Layer {
 public:
  explicit ReLU(float cap = std::numeric_limits<float>::infinity()) : cap_(cap) {}

  Tensor infer(const Tensor& x) const override {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) y.data()[i] = std::clamp(x.data()[i], 0.0f, cap_);
    return y;
  }

  Tensor forward(const Tensor& x) override {
    input_ = x;
    return infer(x);
  }

  Tensor backward(const Tensor& grad_out) override {
    require_same_shape(grad_out, input_, "relu backward");
    Tensor dx(grad_out.shape());
    for (std::size_t i = 0; i < dx.numel(); ++i) {
      const float v = input_.data()[i];
      dx.data()[i] = (v > 0.0f && v < cap_) ? grad_out.data()[i] : 0.0f;
    }
    return dx;
  }

  void clear_cache() override { input_ = Tensor(); }

 private:
  float cap_;
  Tensor input_;
};

/// Max pooling; padded taps never win.
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding) : k_(kernel), s_(stride), p_(padding) {}

  Tensor infer(const Tensor& x) const override {
    std::vector<std::size_t> idx;
    return run(x, idx);
  }

  Tensor forward(const Tensor& x) override {
    in_shape_ = x.shape();
    return run(x, argmax_);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor dx(in_shape_);
    for (std::size_t i = 0; i < grad_out.numel(); ++i) dx.data()[argmax_[i]] += grad_out.data()[i];
    return dx;
  }

  void clear_cache() override { argmax_.clear(); }

 private:
  Tensor run(const Tensor& x, std::vector<std::size_t>& argmax) const {
    const Shape& s = x.shape();
    const Shape o{s.n, s.c, (s.h + 2 * p_ - k_) / s_ + 1, (s.w + 2 * p_ - k_) / s_ + 1};
    Tensor y(o);
    argmax.assign(o.numel(), 0);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const float* src = x.data() + nc * s.plane();
      for (std::size_t oh = 0; oh < o.h; ++oh)
        for (std::size_t ow = 0; ow < o.w; ++ow) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = 0;
          for (std::size_t ki = 0; ki < k_; ++ki) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * s_ + ki) - static_cast<std::ptrdiff_t>(p_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(s.h)) continue;
            for (std::size_t kj = 0; kj < k_; ++kj) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * s_ + kj) - static_cast<std::ptrdiff_t>(p_);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(s.w)) continue;
              const std::size_t ii = static_cast<std::size_t>(ih) * s.w + static_cast<std::size_t>(iw);
              if (src[ii] > best) {
                best = src[ii];
                best_i = ii;
              }
            }
          }
          const std::size_t oi = nc * o.plane() + oh * o.w + ow;
          y.data()[oi] = best;
          argmax[oi] = nc * s.plane() + best_i;
        }
    }
    return y;
  }

  std::size_t k_, s_, p_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

/// Average pooling without padding.
class AvgPool2d final : public Layer {
 public:
  AvgPool2d(std::size_t kernel, std::size_t stride) : k_(kernel), s_(stride) {}

  Tensor infer(const Tensor& x) const override {
    const Shape& s = x.shape();
    if (s.h < k_ || s.w < k_) throw DimensionError("avgpool: input smaller than kernel");
    const Shape o = out_shape(s);
    Tensor y(o);
    const float inv = 1.0f / static_cast<float>(k_ * k_);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const float* src = x.data() + nc * s.plane();
      float* dst = y.data() + nc * o.plane();
      for (std::size_t oh = 0; oh < o.h; ++oh)
        for (std::size_t ow = 0; ow < o.w; ++ow) {
          float acc = 0.0f;
          for (std::size_t ki = 0; ki < k_; ++ki)
            for (std::size_t kj = 0; kj < k_; ++kj) acc += src[(oh * s_ + ki) * s.w + ow * s_ + kj];
          dst[oh * o.w + ow] = acc * inv;
        }
    }
    return y;
  }

  Tensor forward(const Tensor& x) override {
    in_shape_ = x.shape();
    return infer(x);
  }

  Tensor backward(const Tensor& grad_out) override {
    const Shape& s = in_shape_;
    const Shape o = out_shape(s);
    Tensor dx(s);
    const float inv = 1.0f / static_cast<float>(k_ * k_);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const float* dy = grad_out.data() + nc * o.plane();
      float* d = dx.data() + nc * s.plane();
      for (std::size_t oh = 0; oh < o.h; ++oh)
        for (std::size_t ow = 0; ow < o.w; ++ow)
          for (std::size_t ki = 0; ki < k_; ++ki)
            for (std::size_t kj = 0; kj < k_; ++kj) d[(oh * s_ + ki) * s.w + ow * s_ + kj] += dy[oh * o.w + ow] * inv;
    }
    return dx;
  }

 private:
  Shape out_shape(const Shape& s) const { return {s.n, s.c, (s.h - k_) / s_ + 1, (s.w - k_) / s_ + 1}; }

  std::size_t k_, s_;
  Shape in_shape_;
};

/// (N, C, H, W) -> (N, C, 1, 1).
class GlobalAvgPool final : public Layer {
 public:
  Tensor infer(const Tensor& x) const override {
    const Shape& s = x.shape();
    Tensor y({s.n, s.c, 1, 1});
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const float* src = x.data() + nc * s.plane();
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += src[i];
      y.data()[nc] = static_cast<float>(acc / static_cast<double>(s.plane()));
    }
    return y;
  }

  Tensor forward(const Tensor& x) override {
    in_shape_ = x.shape();
    return infer(x);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor dx(in_shape_);
    const float inv = 1.0f / static_cast<float>(in_shape_.plane());
    for (std::size_t nc = 0; nc < in_shape_.n * in_shape_.c; ++nc) {
      float* d = dx.data() + nc * in_shape_.plane();
      std::fill(d, d + in_shape_.plane(), grad_out.data()[nc] * inv);
    }
    return dx;
  }

 private:
  Shape in_shape_;
};

/// Affine map over flattened samples: y = W x + b.
class Linear final : public Layer {
 public:
  Linear(std::size_t in_features, std::size_t out_features)
      : in_(in_features), out_(out_features), weight_("weight", out_features * in_features), bias_("bias", out_features) {}

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero bias.
  void init_uniform(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (auto& w : weight_.value) w = static_cast<float>(rng.uniform(-bound, bound));
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  Tensor infer(const Tensor& x) const override {
    if (x.shape().sample() != in_)
      throw DimensionError("linear: expected " + std::to_string(in_) + " features, got " +
                           std::to_string(x.shape().sample()));
    const auto n = static_cast<Eigen::Index>(x.shape().n);
    Tensor y({x.shape().n, out_, 1, 1});
    ConstMatMap xs(x.data(), n, static_cast<Eigen::Index>(in_));
    ConstMatMap w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap ys(y.data(), n, static_cast<Eigen::Index>(out_));
    ys.noalias() = xs * w.transpose();
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_; ++j) ys(i, static_cast<Eigen::Index>(j)) += bias_.value[j];
    return y;
  }

  Tensor forward(const Tensor& x) override {
    input_ = x;
    return infer(x);
  }

  Tensor backward(const Tensor& grad_out) override {
    const auto n = static_cast<Eigen::Index>(input_.shape().n);
    if (grad_out.numel() != static_cast<std::size_t>(n) * out_) throw DimensionError("linear backward: gradient size");
    ConstMatMap dy(grad_out.data(), n, static_cast<Eigen::Index>(out_));
    ConstMatMap xs(input_.data(), n, static_cast<Eigen::Index>(in_));
    MatMap dw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw.noalias() += dy.transpose() * xs;
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += dy(i, static_cast<Eigen::Index>(j));
    Tensor dx(input_.shape());
    ConstMatMap w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap dxs(dx.data(), n, static_cast<Eigen::Index>(in_));
    dxs.noalias() = dy * w;
    return dx;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) override {
    weight_.name = prefix + "weight";
    bias_.name = prefix + "bias";
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  void clear_cache() override { input_ = Tensor(); }

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Layer& push(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
  }

  std::size_t size() const noexcept { return layers_.size(); }

  Tensor infer(const Tensor& x) const override {
    Tensor h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
  }

  Tensor forward(const Tensor& x) override {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect(const std::string& prefix, std::vector<Parameter*>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect(prefix + std::to_string(i) + ".", out);
  }

  void clear_cache() override {
    for (auto& l : layers_) l->clear_cache();
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace dermo::nn
