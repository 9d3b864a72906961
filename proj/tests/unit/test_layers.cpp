// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "filmhred/errors.hpp"
#include "filmhred/layers.hpp"
#include "oracles.hpp"

namespace fh {
namespace {

constexpr std::size_t kSeeds = 20;

void expect_suite(const testing::SuiteResult& r) {
  EXPECT_TRUE(r.passed()) << r.name << ": " << r.failures << "/" << r.instances << " failed, worst "
                          << r.worst << "\n" << r.first_failure;
  EXPECT_GE(r.instances, kSeeds);
}

TEST(LayerGradients, Linear) { expect_suite(testing::layer_gradient_suite("linear", kSeeds)); }
TEST(LayerGradients, LstmWithMaskAndInitialState) { expect_suite(testing::layer_gradient_suite("lstm", kSeeds)); }
TEST(LayerGradients, AdditiveAttention) { expect_suite(testing::layer_gradient_suite("attention", kSeeds)); }

std::vector<Var> rows_of(Tape& t, const Tensor& m) {
  std::vector<Var> out;
  const Var v = t.constant(m);
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(row(v, r));
  return out;
}

TEST(Lstm, ParameterCountFormula) {
  ParameterStore store;
  Rng rng(1);
  const Lstm l = Lstm::create(store, "l", 7, 5, rng);
  EXPECT_EQ(l.parameter_count(), 4u * 5u * (7u + 5u + 1u));
  EXPECT_EQ(store.scalar_count("l."), l.parameter_count());
  EXPECT_EQ(l.input_size(), 7u);
  EXPECT_EQ(l.hidden_size(), 5u);
}

TEST(Lstm, ZeroParametersAndInputsGiveZeroState) {
  ParameterStore store;
  Rng rng(1);
  const Lstm l = Lstm::create(store, "l", 3, 4, rng);
  l.weight->value().fill(0.0);
  l.bias->value().fill(0.0);
  Tape t;
  const LstmState s = l.step(t.constant(Tensor({3})), l.zero_state(t));
  EXPECT_EQ(s.h.value(), Tensor({4}));
  EXPECT_EQ(s.c.value(), Tensor({4}));
}

TEST(Lstm, SaturatedForgetGateKeepsCell) {
  ParameterStore store;
  Rng rng(1);
  const std::size_t h = 3;
  const Lstm l = Lstm::create(store, "l", 2, h, rng);
  l.weight->value().fill(0.0);
  l.bias->value().fill(0.0);
  for (std::size_t j = 0; j < h; ++j) l.bias->value()[h + j] = 50.0;  // forget gate
  Tape t;
  const Tensor c_prev = Tensor::vector({0.3, -0.7, 1.2});
  const LstmState s = l.step(t.constant(Tensor::vector({0.5, -0.5})),
                             {t.constant(Tensor({h})), t.constant(c_prev)});
  // i = σ(0) = 0.5, g = tanh(0) = 0, f ≈ 1.
  EXPECT_LT(max_abs_diff(s.c.value(), c_prev), 1e-12);
}

TEST(Lstm, LengthOneSequenceMatchesSingleStep) {
  ParameterStore store;
  Rng rng(3);
  const Lstm l = Lstm::create(store, "l", 3, 4, rng);
  Tape t;
  const Tensor x = Tensor::uniform({1, 3}, -1, 1, rng);
  const LstmSequence seq = l.encode(rows_of(t, x));
  const LstmState s = l.step(row(t.constant(x), 0), l.zero_state(t));
  EXPECT_EQ(seq.final.h.value(), s.h.value());
  EXPECT_EQ(seq.final.c.value(), s.c.value());
  EXPECT_EQ(seq.valid_steps, 1u);
}

TEST(Lstm, PaddingWithMaskedStepsLeavesFinalStateBitwiseUnchanged) {
  ParameterStore store;
  Rng rng(4);
  const Lstm l = Lstm::create(store, "l", 3, 4, rng);
  for (std::size_t len = 1; len <= 4; ++len) {
    Tape t;
    const Tensor x = Tensor::uniform({6, 3}, -1, 1, rng);
    const std::vector<Var> all = rows_of(t, x);
    const LstmSequence unpadded = l.encode(std::span<const Var>(all.data(), len));
    bool mask[6] = {};
    for (std::size_t i = 0; i < len; ++i) mask[i] = true;
    const LstmSequence padded = l.encode(all, std::span<const bool>(mask, 6));
    EXPECT_EQ(padded.final.h.value(), unpadded.final.h.value());
    EXPECT_EQ(padded.final.c.value(), unpadded.final.c.value());
    EXPECT_EQ(padded.valid_steps, len);
    for (std::size_t i = len; i < 6; ++i) EXPECT_EQ(padded.states[i].value(), unpadded.final.h.value());
  }
}

TEST(Lstm, MaskedInputsReceiveZeroGradient) {
  ParameterStore store;
  Rng rng(5);
  const Lstm l = Lstm::create(store, "l", 2, 3, rng);
  Tape t;
  const Var x = t.leaf(Tensor::uniform({4, 2}, -1, 1, rng));
  std::vector<Var> rows;
  for (std::size_t r = 0; r < 4; ++r) rows.push_back(row(x, r));
  const bool mask[4] = {true, true, false, false};
  const LstmSequence seq = l.encode(rows, std::span<const bool>(mask, 4));
  t.backward(reduce_sum(stack(seq.states)));
  const Tensor g = t.grad(x);
  for (std::size_t r = 2; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(g.at(r, c), 0.0);
  double live = 0.0;
  for (std::size_t c = 0; c < 2; ++c) live += std::abs(g.at(0, c));
  EXPECT_GT(live, 0.0);
}

TEST(Lstm, ErrorsOnEmptyAndNonPrefixMasks) {
  ParameterStore store;
  Rng rng(6);
  const Lstm l = Lstm::create(store, "l", 2, 3, rng);
  Tape t;
  EXPECT_THROW(l.encode(std::span<const Var>{}), Error);
  const std::vector<Var> rows = rows_of(t, Tensor({3, 2}));
  const bool holes[3] = {true, false, true};
  EXPECT_THROW(l.encode(rows, std::span<const bool>(holes, 3)), Error);
  EXPECT_THROW(l.step(t.constant(Tensor({5})), l.zero_state(t)), ShapeError);
}

TEST(Attention, SingleKeyGetsAllWeight) {
  ParameterStore store;
  Rng rng(7);
  const AdditiveAttention att = AdditiveAttention::create(store, "a", 3, 2, 4, rng);
  Tape t;
  const Tensor key = Tensor::uniform({1, 3}, -1, 1, rng);
  const AttentionResult r = att(t.constant(Tensor::vector({0.2, -0.4})), rows_of(t, key));
  EXPECT_DOUBLE_EQ(r.weights.value()[0], 1.0);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(r.context.value()[j], key[j]);
}

TEST(Attention, IdenticalKeysGiveUniformWeights) {
  ParameterStore store;
  Rng rng(8);
  const AdditiveAttention att = AdditiveAttention::create(store, "a", 3, 2, 4, rng);
  Tape t;
  Tensor keys({5, 3});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) keys.at(r, c) = 0.1 * static_cast<double>(c + 1);
  const AttentionResult res = att(t.constant(Tensor::vector({1.0, 2.0})), rows_of(t, keys));
  for (double w : res.weights.value().data()) EXPECT_NEAR(w, 0.2, 1e-15);
}

TEST(Attention, WeightsFormADistributionOverUnmaskedKeys) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    ParameterStore store;
    const AdditiveAttention att = AdditiveAttention::create(store, "a", 3, 2, 4, rng);
    for (Parameter* p : store.all()) p->value() = Tensor::uniform(p->value().shape(), -3, 3, rng);
    Tape t;
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 6);
    const std::size_t valid = 1 + static_cast<std::size_t>(trial % static_cast<int>(n));
    std::unique_ptr<bool[]> mask(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) mask[i] = i < valid;
    const AttentionResult r = att(t.constant(Tensor::uniform({2}, -2, 2, rng)),
                                  rows_of(t, Tensor::uniform({n, 3}, -2, 2, rng)),
                                  std::span<const bool>(mask.get(), n));
    double sum = 0.0;
    for (double w : r.weights.value().data()) {
      EXPECT_GE(w, 0.0);
      sum += w;
    }
    EXPECT_LE(std::abs(sum - 1.0), 1e-9);
    ASSERT_EQ(r.full_weights.numel(), n);
    for (std::size_t i = valid; i < n; ++i) EXPECT_EQ(r.full_weights[i], 0.0);
  }
}

TEST(Attention, MaskedKeysReceiveZeroGradient) {
  ParameterStore store;
  Rng rng(10);
  const AdditiveAttention att = AdditiveAttention::create(store, "a", 2, 2, 3, rng);
  Tape t;
  const Var keys = t.leaf(Tensor::uniform({4, 2}, -1, 1, rng));
  std::vector<Var> rows;
  for (std::size_t r = 0; r < 4; ++r) rows.push_back(row(keys, r));
  const bool mask[4] = {true, true, true, false};
  const AttentionResult r = att(t.constant(Tensor::vector({0.5, 0.1})), rows, std::span<const bool>(mask, 4));
  t.backward(reduce_sum(r.context));
  const Tensor g = t.grad(keys);
  EXPECT_EQ(g.at(3, 0), 0.0);
  EXPECT_EQ(g.at(3, 1), 0.0);
}

TEST(Attention, AllKeysMaskedIsAnError) {
  ParameterStore store;
  Rng rng(11);
  const AdditiveAttention att = AdditiveAttention::create(store, "a", 2, 2, 3, rng);
  Tape t;
  const bool mask[2] = {false, false};
  EXPECT_THROW(att(t.constant(Tensor({2})), rows_of(t, Tensor({2, 2})), std::span<const bool>(mask, 2)), Error);
}

TEST(Dropout, EvalModeIsIdentity) {
  Rng rng(12);
  Tape t;
  const Var x = t.constant(Tensor::uniform({50}, -1, 1, rng));
  EXPECT_EQ(dropout(x, 0.8, Mode::kEval, &rng).value(), x.value());
}

TEST(Dropout, RetainOneIsIdentityInTraining) {
  Rng rng(13);
  Tape t;
  const Var x = t.constant(Tensor::uniform({50}, -1, 1, rng));
  EXPECT_EQ(dropout(x, 1.0, Mode::kTrain, &rng).value(), x.value());
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  Rng rng(14);
  const std::size_t n = 100000;
  Tape t;
  const Var x = t.constant(Tensor({n}, 1.0));
  const Tensor y = dropout(x, 0.8, Mode::kTrain, &rng).value();
  double sum = 0.0;
  for (double v : y.data()) {
    EXPECT_TRUE(v == 0.0 || v == 1.0 / 0.8);
    sum += v;
  }
  const double mean = sum / static_cast<double>(n);
  // Standard error of the mean: sqrt(p(1-p))/p/sqrt(n).
  const double se = std::sqrt(0.8 * 0.2) / 0.8 / std::sqrt(static_cast<double>(n));
  EXPECT_LT(std::abs(mean - 1.0), 3.0 * se);
  EXPECT_LT(std::abs(mean - 1.0), 0.01);
}

TEST(Dropout, InvalidRetainIsRejected) {
  Rng rng(15);
  Tape t;
  const Var x = t.constant(Tensor({3}, 1.0));
  EXPECT_THROW(dropout(x, 0.0, Mode::kTrain, &rng), ConfigError);
  EXPECT_THROW(dropout(x, -0.5, Mode::kEval, &rng), ConfigError);
  EXPECT_THROW(dropout(x, 1.5, Mode::kTrain, &rng), ConfigError);
}

TEST(Init, WeightsLieInTheUniformRange) {
  ParameterStore store;
  Rng rng(16);
  Lstm::create(store, "l", 10, 10, rng);
  Linear::create(store, "f", 10, 10, rng);
  for (const Parameter* p : store.all()) {
    for (double v : p->value().data()) {
      EXPECT_GE(v, -kInitRange);
      EXPECT_LT(v, kInitRange);
    }
  }
}

}  // namespace
}  // namespace fh
