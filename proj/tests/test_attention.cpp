#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mrcn/attention.hpp"
#include "oracles.hpp"

using namespace mrcn;

namespace {

FeatureMap random_map(std::vector<std::size_t> shape, Rng& rng) {
  FeatureMap f;
  f.data = Tensor(std::move(shape));
  oracle::fill_gaussian(f.data, rng);
  return f;
}

}  // namespace

TEST_CASE("zero weights gate everything at one half") {
  ChannelAttention att(8, 16);  // weights already zero-initialized
  Rng rng(3);
  FeatureMap m = random_map({2, 8, 3, 3}, rng);
  Tensor w = attention_weights(m, att);
  REQUIRE(w.shape() == std::vector<std::size_t>{2, 8});
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w[i] == doctest::Approx(0.5));
}

TEST_CASE("weights always land strictly inside (0, 1)") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    ChannelAttention att(16, 16);
    att.init(rng);
    att.fc2.weight.value.scale_(10.0);  // push the logits around
    FeatureMap m = random_map({3, 16, 2, 5}, rng);
    Tensor w = attention_weights(m, att);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      CHECK(w[i] > 0.0);
      CHECK(w[i] < 1.0);
    }
  }
}

TEST_CASE("hand evaluation of pool -> fc -> relu -> fc -> sigmoid, C=16 r=16") {
  ChannelAttention att(16, 16);
  REQUIRE(att.hidden_dim() == 1);
  // Hand-set weights: fc1 row sums channel index weights, fc2 spreads back.
  for (std::size_t c = 0; c < 16; ++c) att.fc1.weight.value.at2(0, c) = 0.1 * (c + 1);
  att.fc1.bias.value[0] = -0.2;
  for (std::size_t c = 0; c < 16; ++c) att.fc2.weight.value.at2(c, 0) = 0.05 * (c + 1);
  for (std::size_t c = 0; c < 16; ++c) att.fc2.bias.value[c] = 0.01 * c;

  FeatureMap m;
  m.data = Tensor({1, 16, 2, 2});
  for (std::size_t c = 0; c < 16; ++c)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) m.data.at4(0, c, h, w) = 0.25 * (c % 5) - 0.3;

  // Independent scalar evaluation.
  double pooled[16];
  for (std::size_t c = 0; c < 16; ++c) pooled[c] = 0.25 * (c % 5) - 0.3;  // constant per channel
  double z = -0.2;
  for (std::size_t c = 0; c < 16; ++c) z += 0.1 * (c + 1) * pooled[c];
  const double hidden = z > 0 ? z : 0;
  Tensor w = attention_weights(m, att);
  for (std::size_t c = 0; c < 16; ++c) {
    const double logit = 0.05 * (c + 1) * hidden + 0.01 * c;
    const double expected = 1.0 / (1.0 + std::exp(-logit));
    CHECK(w.at2(0, c) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("distill is the per-channel product") {
  Rng rng(5);
  FeatureMap m = random_map({2, 4, 3, 2}, rng);

  Tensor ones = Tensor::constant({2, 4}, 1.0);
  FeatureMap same = distill(m, ones);
  CHECK(max_abs_diff(same.data, m.data) == 0.0);

  Tensor zeros({2, 4});
  FeatureMap zero = distill(m, zeros);
  for (std::size_t i = 0; i < zero.data.numel(); ++i) CHECK(zero.data[i] == 0.0);

  Tensor halves = Tensor::constant({2, 4}, 0.5);
  FeatureMap half = distill(m, halves);
  for (std::size_t i = 0; i < half.data.numel(); ++i)
    CHECK(half.data[i] == doctest::Approx(m.data[i] / 2.0).epsilon(1e-12));
}

TEST_CASE("distill is linear in the weights") {
  Rng rng(6);
  FeatureMap m = random_map({2, 6, 4, 3}, rng);
  Tensor a({2, 6}), b({2, 6});
  oracle::fill_gaussian(a, rng);
  oracle::fill_gaussian(b, rng);
  FeatureMap sum_of = distill(m, a);
  sum_of.data.add_(distill(m, b).data);
  FeatureMap of_sum = distill(m, a + b);
  CHECK(max_abs_diff(sum_of.data, of_sum.data) <= 1e-6);
}

TEST_CASE("saturating the second fc drives the gate to one and distill to identity") {
  Rng rng(7);
  ChannelAttention att(8, 16);
  att.init(rng);
  FeatureMap m = random_map({2, 8, 3, 3}, rng);

  double prev_gap = 1e9;
  for (double bias : {0.0, 5.0, 50.0, 500.0}) {
    ChannelAttention pushed = att;
    for (std::size_t c = 0; c < 8; ++c) pushed.fc2.bias.value[c] += bias;
    Tensor w = pushed.weights(m.data);
    double gap = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) gap = std::max(gap, 1.0 - w[i]);
    CHECK(gap <= prev_gap);
    prev_gap = gap;
  }
  ChannelAttention sat = att;
  for (std::size_t c = 0; c < 8; ++c) sat.fc2.bias.value[c] = 1000.0;
  FeatureMap out = distill(m, sat.weights(m.data));
  CHECK(max_abs_diff(out.data, m.data) == 0.0);  // sigmoid(1000) == 1.0 in double
}

TEST_CASE("gradient through distill(M, weights(M)) matches finite differences") {
  Rng rng(8);
  ChannelAttention att(16, 16);
  att.init(rng);
  Tensor m({2, 16, 3, 3});
  oracle::fill_gaussian(m, rng);
  Tensor coeffs({2, 16, 3, 3});
  oracle::fill_gaussian(coeffs, rng);

  auto loss = [&]() {
    FeatureMap fm{m, Modality::kVis};
    FeatureMap out = distill(fm, att.weights(m));
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.numel(); ++i) acc += coeffs[i] * out.data[i];
    return acc;
  };

  att.fc1.weight.zero_grad();
  att.fc1.bias.zero_grad();
  att.fc2.weight.zero_grad();
  att.fc2.bias.zero_grad();
  Tensor grad_m = att.backward(m, coeffs);

  CHECK(oracle::max_grad_err(loss, att.fc1.weight.value, att.fc1.weight.grad, 1e-6) <= 1e-4);
  CHECK(oracle::max_grad_err(loss, att.fc1.bias.value, att.fc1.bias.grad, 1e-6) <= 1e-4);
  CHECK(oracle::max_grad_err(loss, att.fc2.weight.value, att.fc2.weight.grad, 1e-6) <= 1e-4);
  CHECK(oracle::max_grad_err(loss, att.fc2.bias.value, att.fc2.bias.grad, 1e-6) <= 1e-4);
  CHECK(oracle::max_grad_err(loss, m, grad_m, 1e-6) <= 1e-4);
}

TEST_CASE("contracts: channel mismatch and weight shape") {
  Rng rng(9);
  ChannelAttention att(8, 16);
  FeatureMap m = random_map({1, 4, 2, 2}, rng);
  CHECK_THROWS_AS(attention_weights(m, att), ContractViolation);
  Tensor bad({1, 8});
  CHECK_THROWS_AS(distill(m, bad), ContractViolation);
}

TEST_CASE("hidden width keeps a floor of one unit") {
  ChannelAttention small(4, 16);
  CHECK(small.hidden_dim() == 1);
  ChannelAttention big(64, 16);
  CHECK(big.hidden_dim() == 4);
}
