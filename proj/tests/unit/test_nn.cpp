#include <gtest/gtest.h>

#include "t4c/nn.hpp"
#include "test_support.hpp"

using namespace t4c;
using namespace t4c::testing;
using Td = Tensor<double>;

namespace {

double max_abs_diff(const Td& a, const Td& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(NN, ConvMatchesNaive) {
  std::mt19937_64 rng(1);
  for (std::size_t kk : {1u, 3u}) {
    auto x = random_tensor<double>(rng, {2, 3, 5, 7});
    auto k = random_tensor<double>(rng, {4, 3, kk, kk});
    auto b = random_tensor<double>(rng, {4});
    EXPECT_LT(max_abs_diff(nn::conv2d_forward(x, k, b), naive_conv2d(x, k, b)), 1e-12);
  }
}

TEST(NN, UpconvMatchesNaive) {
  std::mt19937_64 rng(2);
  auto x = random_tensor<double>(rng, {2, 3, 3, 4});
  auto k = random_tensor<double>(rng, {3, 5, 2, 2});
  auto b = random_tensor<double>(rng, {5});
  EXPECT_LT(max_abs_diff(nn::upconv2d_forward(x, k, b), naive_upconv2d(x, k, b)), 1e-12);
}

TEST(NN, ConvGradient) {
  std::mt19937_64 rng(3);
  auto x = random_tensor<double>(rng, {2, 2, 4, 5});
  auto k = random_tensor<double>(rng, {3, 2, 3, 3});
  auto b = random_tensor<double>(rng, {3});
  const auto w = random_tensor<double>(rng, {2, 3, 4, 5});
  auto f = [&] { return dot(w, nn::conv2d_forward(x, k, b)); };
  const auto g = nn::conv2d_backward(x, k, w);
  EXPECT_LT(gradient_error(x, g.grad_x, f), 1e-5);
  EXPECT_LT(gradient_error(k, g.grad_k, f), 1e-5);
  EXPECT_LT(gradient_error(b, g.grad_bias, f), 1e-5);
}

TEST(NN, UpconvGradient) {
  std::mt19937_64 rng(4);
  auto x = random_tensor<double>(rng, {2, 3, 2, 3});
  auto k = random_tensor<double>(rng, {3, 2, 2, 2});
  auto b = random_tensor<double>(rng, {2});
  const auto w = random_tensor<double>(rng, {2, 2, 4, 6});
  auto f = [&] { return dot(w, nn::upconv2d_forward(x, k, b)); };
  const auto g = nn::upconv2d_backward(x, k, w);
  EXPECT_LT(gradient_error(x, g.grad_x, f), 1e-5);
  EXPECT_LT(gradient_error(k, g.grad_k, f), 1e-5);
  EXPECT_LT(gradient_error(b, g.grad_bias, f), 1e-5);
}

TEST(NN, MaxPool) {
  Td x({1, 1, 2, 4}, std::vector<double>{1, 3, 5, 5, 2, 3, 1, 0});
  const auto r = nn::maxpool2d_forward(x);
  EXPECT_EQ(r.out.shape(), (std::vector<std::size_t>{1, 1, 1, 2}));
  EXPECT_EQ(r.out[0], 3);
  EXPECT_EQ(r.argmax[0], 1u);  // first of the tied 3s
  EXPECT_EQ(r.argmax[1], 2u);
  const auto g = nn::maxpool2d_backward(Td({1, 1, 1, 2}, std::vector<double>{1, 2}), r.argmax, x.shape());
  EXPECT_EQ(g.values(), (std::vector<double>{0, 1, 2, 0, 0, 0, 0, 0}));
}

TEST(NN, MaxPoolGradientUntied) {
  std::mt19937_64 rng(5);
  Td x({2, 2, 4, 6});
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i);
  std::shuffle(vals.begin(), vals.end(), rng);
  x.values() = vals;
  const auto w = random_tensor<double>(rng, {2, 2, 2, 3});
  auto f = [&] { return dot(w, nn::maxpool2d_forward(x).out); };
  const auto r = nn::maxpool2d_forward(x);
  EXPECT_LT(gradient_error(x, nn::maxpool2d_backward(w, r.argmax, x.shape()), f), 1e-5);
}

TEST(NN, ReluGradientAwayFromZero) {
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>(rng, {1, 2, 3, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += x[i] >= 0 ? 0.1 : -0.1;
  const auto w = random_tensor<double>(rng, x.shape());
  auto f = [&] { return dot(w, nn::relu_forward(x)); };
  EXPECT_LT(gradient_error(x, nn::relu_backward(x, w), f), 1e-5);
  EXPECT_EQ(nn::relu_backward(Td({1}, 0.0), Td({1}, 1.0))[0], 0.0);
}

TEST(NN, MseGradient) {
  std::mt19937_64 rng(7);
  auto p = random_tensor<double>(rng, {2, 3, 2, 2});
  const auto t = random_tensor<double>(rng, p.shape());
  auto f = [&] { return nn::mse_loss(p, t).loss; };
  EXPECT_LT(gradient_error(p, nn::mse_loss(p, t).grad, f), 1e-5);
  EXPECT_EQ(nn::mse_loss(t, t).loss, 0.0);
}

TEST(NN, PadCropAndConcat) {
  std::mt19937_64 rng(8);
  const auto x = random_tensor<double>(rng, {1, 2, 5, 3});
  const auto [p, rec] = nn::pad_spatial(x, 4);
  EXPECT_EQ(p.shape(), (std::vector<std::size_t>{1, 2, 8, 4}));
  EXPECT_EQ(p.at(0, 1, 7, 3), 0.0);
  EXPECT_EQ(nn::crop_spatial(p, rec), x);
  EXPECT_EQ(nn::round_up(495, 16), 496u);
  EXPECT_EQ(nn::round_up(436, 16), 448u);
  EXPECT_EQ(nn::pad_spatial(p, 4).first, p);

  const auto y = random_tensor<double>(rng, {1, 3, 5, 3});
  const auto cat = nn::concat_channels(x, y);
  EXPECT_EQ(cat.dim(1), 5u);
  EXPECT_EQ(cat.at(0, 2, 1, 1), y.at(0, 0, 1, 1));
  const auto [a, b] = nn::split_channels(cat, 2);
  EXPECT_EQ(a, x);
  EXPECT_EQ(b, y);
}

TEST(NN, ClampAndShapeErrors) {
  const auto c = nn::clamp_255(Td({3}, std::vector<double>{-10, 12.5, 300}));
  EXPECT_EQ(c.values(), (std::vector<double>{0, 12.5, 255}));
  EXPECT_THROW(nn::conv2d_forward(Td({1, 2, 3, 3}), Td({1, 3, 3, 3}), Td({1})), ShapeError);
  EXPECT_THROW(nn::maxpool2d_forward(Td({1, 1, 3, 4})), ShapeError);
  EXPECT_THROW(nn::mse_loss(Td({2}), Td({3})), ShapeError);
}

TEST(NN, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(9);
  auto x = random_tensor<float>(rng, {3, 8, 16, 16});
  auto k = random_tensor<float>(rng, {16, 8, 3, 3});
  auto b = random_tensor<float>(rng, {16});
  const auto w = random_tensor<float>(rng, {3, 16, 16, 16});
  nn::set_num_threads(1);
  const auto y1 = nn::conv2d_forward(x, k, b);
  const auto g1 = nn::conv2d_backward(x, k, w);
  nn::set_num_threads(4);
  const auto y4 = nn::conv2d_forward(x, k, b);
  const auto g4 = nn::conv2d_backward(x, k, w);
  nn::set_num_threads(1);
  EXPECT_EQ(y1, y4);
  EXPECT_EQ(g1.grad_x, g4.grad_x);
  EXPECT_EQ(g1.grad_k, g4.grad_k);
  EXPECT_EQ(g1.grad_bias, g4.grad_bias);
}
