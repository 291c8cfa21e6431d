#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "test_support.hpp"

using namespace dermo;
using namespace dermo::nn;

namespace {

Tensor random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Randomizes every learnable tensor so zero-initialized biases and unit BN
/// scales do not hide indexing mistakes.
void randomize(Layer& l, Rng& rng) {
  std::vector<Parameter*> ps;
  l.collect("", ps);
  for (auto* p : ps)
    if (!p->is_buffer)
      for (auto& v : p->value) v = static_cast<float>(rng.uniform(-0.5, 0.5));
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y.data()[i]) * r.data()[i];
  return s;
}

struct GradStats {
  double relative_norm_error = 0.0;
  double bad_fraction = 0.0;
};

GradStats compare(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff2 = 0.0, ref2 = 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff2 += d * d;
    ref2 += numeric[i] * numeric[i];
    if (std::abs(d) > 2e-2 * std::max({std::abs(analytic[i]), std::abs(numeric[i]), 5e-2})) ++bad;
  }
  return {std::sqrt(diff2 / std::max(ref2, 1e-12)), static_cast<double>(bad) / static_cast<double>(analytic.size())};
}

/// Oracle: central finite differences of L = sum(forward(x) * r) with respect to
/// the input and to (a sample of) every learnable parameter.
void check_gradients(Layer& layer, const Tensor& x, Rng& rng, const char* what) {
  const Tensor y = layer.forward(x);
  const Tensor r = random_tensor(rng, y.shape());
  std::vector<Parameter*> params;
  layer.collect("", params);
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0f);
  const Tensor dx = layer.backward(r);
  const float eps = 1e-2f;

  auto loss_at = [&](const Tensor& input) { return weighted_sum(layer.forward(input), r); };

  std::vector<double> analytic, numeric;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); i += 1 + x.numel() / 200) {
    const float keep = probe.data()[i];
    probe.data()[i] = keep + eps;
    const double up = loss_at(probe);
    probe.data()[i] = keep - eps;
    const double down = loss_at(probe);
    probe.data()[i] = keep;
    analytic.push_back(dx.data()[i]);
    numeric.push_back((up - down) / (2.0 * eps));
  }
  auto s = compare(analytic, numeric);
  EXPECT_LT(s.relative_norm_error, 1e-2) << what << " input gradient";
  EXPECT_LE(s.bad_fraction, 0.03) << what << " input gradient";

  for (auto* p : params) {
    if (p->is_buffer) continue;
    analytic.clear();
    numeric.clear();
    const std::vector<float> grads = p->grad;
    for (std::size_t j = 0; j < p->value.size(); j += 1 + p->value.size() / 60) {
      const float keep = p->value[j];
      p->value[j] = keep + eps;
      const double up = loss_at(x);
      p->value[j] = keep - eps;
      const double down = loss_at(x);
      p->value[j] = keep;
      analytic.push_back(grads[j]);
      numeric.push_back((up - down) / (2.0 * eps));
    }
    s = compare(analytic, numeric);
    EXPECT_LT(s.relative_norm_error, 1e-2) << what << " parameter " << p->name;
    EXPECT_LE(s.bad_fraction, 0.03) << what << " parameter " << p->name;
  }
}

/// Oracle: direct six-loop convolution in double.
Tensor naive_conv(const Tensor& x, const std::vector<float>& w, const std::vector<float>& b, std::size_t out,
                  std::size_t k, std::size_t stride, std::size_t pad, std::size_t groups) {
  const Shape s = x.shape();
  const std::size_t oh = (s.h + 2 * pad - k) / stride + 1, ow = (s.w + 2 * pad - k) / stride + 1;
  const std::size_t cg = s.c / groups, og = out / groups;
  Tensor y({s.n, out, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.empty() ? 0.0 : b[o];
          const std::size_t g = o / og;
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const auto r = static_cast<std::ptrdiff_t>(i * stride + ki) - static_cast<std::ptrdiff_t>(pad);
                const auto q = static_cast<std::ptrdiff_t>(j * stride + kj) - static_cast<std::ptrdiff_t>(pad);
                if (r < 0 || q < 0 || r >= static_cast<std::ptrdiff_t>(s.h) || q >= static_cast<std::ptrdiff_t>(s.w))
                  continue;
                acc += static_cast<double>(w[((o * cg + c) * k + ki) * k + kj]) *
                       x.at(n, g * cg + c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
              }
          y.at(n, o, i, j) = static_cast<float>(acc);
        }
  return y;
}

struct ConvCase {
  std::size_t in, out, k, stride, pad, groups;
  bool bias;
};

}  // namespace

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(1);
  for (const ConvCase& c : {ConvCase{3, 5, 3, 1, 1, 1, true}, ConvCase{4, 6, 3, 2, 1, 1, false},
                            ConvCase{6, 6, 3, 1, 1, 6, false}, ConvCase{6, 6, 3, 2, 1, 6, false},
                            ConvCase{8, 4, 1, 1, 0, 1, true}, ConvCase{4, 8, 3, 1, 1, 2, true},
                            ConvCase{3, 4, 7, 2, 3, 1, false}, ConvCase{4, 2, 1, 2, 0, 1, false}}) {
    Conv2d conv(c.in, c.out, c.k, c.stride, c.pad, c.groups, c.bias);
    randomize(conv, rng);
    const Tensor x = random_tensor(rng, {2, c.in, 9, 8});
    std::vector<Parameter*> ps;
    conv.collect("", ps);
    const std::vector<float> bias = c.bias ? ps[1]->value : std::vector<float>{};
    const Tensor oracle = naive_conv(x, ps[0]->value, bias, c.out, c.k, c.stride, c.pad, c.groups);
    const Tensor y = conv.infer(x);
    ASSERT_EQ(y.shape(), oracle.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[i], oracle.data()[i], 1e-4);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  for (const ConvCase& c : {ConvCase{3, 4, 3, 1, 1, 1, true}, ConvCase{4, 4, 3, 2, 1, 4, false},
                            ConvCase{4, 6, 1, 1, 0, 1, true}, ConvCase{4, 4, 3, 1, 1, 2, false}}) {
    Conv2d conv(c.in, c.out, c.k, c.stride, c.pad, c.groups, c.bias);
    randomize(conv, rng);
    check_gradients(conv, random_tensor(rng, {2, c.in, 6, 5}), rng, "conv");
  }
}

TEST(BatchNorm2d, TrainingGradientsMatchFiniteDifferences) {
  Rng rng(3);
  BatchNorm2d bn(3);
  randomize(bn, rng);
  check_gradients(bn, random_tensor(rng, {4, 3, 3, 3}), rng, "batchnorm");
}

TEST(BatchNorm2d, InferenceUsesRunningStatistics) {
  Rng rng(4);
  BatchNorm2d bn(2);
  const Tensor x = random_tensor(rng, {3, 2, 4, 4}, 1.0, 3.0);
  // Defaults: mean 0, var 1, gamma 1, beta 0, so inference is (x / sqrt(1 + eps)).
  const Tensor y = bn.infer(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i] / std::sqrt(1.0 + 1e-5), 1e-6);
  std::vector<Parameter*> ps;
  bn.collect("", ps);
  ASSERT_EQ(ps.size(), 4u);
  EXPECT_EQ(ps[2]->name, "running_mean");
  EXPECT_TRUE(ps[2]->is_buffer);
  bn.forward(x);
  EXPECT_GT(ps[2]->value[0], 0.0f);  // running mean moved toward the positive batch mean
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  Linear fc(6, 4);
  randomize(fc, rng);
  check_gradients(fc, random_tensor(rng, {3, 6, 1, 1}), rng, "linear");
}

TEST(Pooling, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  MaxPool2d maxpool(3, 2, 1);
  check_gradients(maxpool, random_tensor(rng, {2, 2, 7, 7}), rng, "maxpool");
  AvgPool2d avgpool(2, 2);
  check_gradients(avgpool, random_tensor(rng, {2, 2, 6, 6}), rng, "avgpool");
  GlobalAvgPool gap;
  check_gradients(gap, random_tensor(rng, {2, 3, 4, 5}), rng, "gap");
}

TEST(ReLU, CappedVariantClips) {
  ReLU relu6(6.0f);
  const Tensor x({1, 1, 1, 4}, std::vector<float>{-1.0f, 2.0f, 7.0f, 6.0f});
  EXPECT_EQ(relu6.infer(x).values(), (std::vector<float>{0.0f, 2.0f, 6.0f, 6.0f}));
  Rng rng(7);
  ReLU relu;
  Tensor away = random_tensor(rng, {2, 2, 3, 3}, 0.2, 1.0);
  for (std::size_t i = 0; i < away.numel(); i += 2) away.data()[i] = -away.data()[i];
  check_gradients(relu, away, rng, "relu");
}

TEST(Blocks, ResidualAndDenseGradients) {
  Rng rng(8);
  auto main = std::make_unique<Sequential>();
  main->add<Conv2d>(3, 4, 3, 1, 1).init_uniform(rng);
  main->add<BatchNorm2d>(4);
  auto shortcut = std::make_unique<Sequential>();
  shortcut->add<Conv2d>(3, 4, 1, 1, 0).init_uniform(rng);
  Residual res(std::move(main), std::move(shortcut));
  randomize(res, rng);
  // Shift the main branch so the sum stays clear of the output ReLU kink,
  // where finite differences are meaningless.
  std::vector<Parameter*> ps;
  res.collect("", ps);
  for (auto* p : ps)
    if (p->name == "main.1.bias") std::fill(p->value.begin(), p->value.end(), 4.0f);
  check_gradients(res, random_tensor(rng, {2, 3, 5, 5}), rng, "residual");

  auto branch = std::make_unique<Sequential>();
  branch->add<Conv2d>(3, 2, 3, 1, 1).init_uniform(rng);
  DenseConcat dense(std::move(branch));
  const Tensor x = random_tensor(rng, {2, 3, 4, 4});
  const Tensor y = dense.infer(x);
  ASSERT_EQ(y.shape(), (Shape{2, 5, 4, 4}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y.at(1, c, 2, 3), x.at(1, c, 2, 3));
  check_gradients(dense, x, rng, "dense");
}
