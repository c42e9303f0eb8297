#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "slotalign/numkernel.hpp"
#include "grad_cases.hpp"
#include "support.hpp"

using namespace slotalign;
using namespace slotalign::nk;
using testing_support::random_matrix;

namespace {

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward kernels against independent loops
// ---------------------------------------------------------------------------

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto n = pick(rng, 1, 7), k = pick(rng, 1, 7), m = pick(rng, 1, 7);
    const auto a = random_matrix(n, k, rng), b = random_matrix(k, m, rng);
    const auto c = kernels::matmul(a, b);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        long double s = 0;
        for (std::size_t t = 0; t < k; ++t) s += static_cast<long double>(a(i, t)) * b(t, j);
        EXPECT_NEAR(c(i, j), static_cast<double>(s), 1e-12);
      }
  }
}

TEST(Matmul, RejectsInnerMismatch) {
  std::mt19937_64 rng(2);
  EXPECT_THROW(kernels::matmul(random_matrix(2, 3, rng), random_matrix(4, 2, rng)), InvalidInput);
}

TEST(Softmax, SymmetricPair) {
  const auto y = kernels::softmax_rows(Tensor<double>::matrix(1, 2));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  Tensor<double> x({1, 2}, {1000.0, 0.0});
  const auto y = kernels::softmax_rows(x);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_NEAR(y[1], 0.0, 1e-300);
  EXPECT_TRUE(y.all_finite());
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_matrix(4, 7, rng, 5.0);
    const auto y = kernels::softmax_rows(x);
    auto shifted = x;
    std::normal_distribution<double> c(0.0, 50.0);
    for (std::size_t r = 0; r < 4; ++r) {
      const double k = c(rng);
      for (auto& v : shifted.row(r)) v += k;
    }
    const auto ys = kernels::softmax_rows(shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (double v : y.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-6);
  }
}

TEST(Softmax, EmptyIsRejected) {
  EXPECT_THROW(kernels::softmax_rows(Tensor<double>::matrix(0, 3)), InvalidInput);
}

TEST(LayerNorm, ConstantRowGivesZeros) {
  Tensor<double> x({1, 4}, {3, 3, 3, 3});
  const auto y = kernels::layer_norm(x, Tensor<double>({4}, 1.0), Tensor<double>({4}, 0.0));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, ZeroGainGivesBeta) {
  std::mt19937_64 rng(4);
  const auto x = random_matrix(3, 5, rng);
  const auto y = kernels::layer_norm(x, Tensor<double>({5}, 0.0), Tensor<double>({5}, 2.5));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(LayerNorm, NormalizedRowsHaveUnitMoments) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = pick(rng, 2, 40);
    const auto x = random_matrix(3, d, rng, 4.0);
    const auto y = kernels::layer_norm(x, Tensor<double>({d}, 1.0), Tensor<double>({d}, 0.0));
    for (std::size_t r = 0; r < 3; ++r) {
      double m = 0, v = 0;
      for (double e : y.row(r)) m += e;
      m /= static_cast<double>(d);
      for (double e : y.row(r)) v += (e - m) * (e - m);
      v /= static_cast<double>(d);
      EXPECT_NEAR(m, 0.0, 1e-4);
      EXPECT_NEAR(v, 1.0, 1e-4);
    }
  }
}

TEST(LayerNorm, WidthOneIsRejected) {
  EXPECT_THROW(kernels::layer_norm(Tensor<double>::matrix(2, 1), Tensor<double>({1}, 1.0),
                                   Tensor<double>({1}, 0.0)),
               InvalidInput);
}

TEST(Embedding, GathersRowsAndRejectsBadIds) {
  Tensor<double> table({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<int> ids{2, 0, 2};
  const auto y = kernels::embedding(table, std::span<const int>(ids));
  EXPECT_EQ(y.values(), (std::vector<double>{20, 21, 0, 1, 20, 21}));
  const std::vector<int> bad{3};
  EXPECT_THROW(kernels::embedding(table, std::span<const int>(bad)), InvalidInput);
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

namespace {

// Independent single-head reference with explicit exclusion of disallowed pairs.
Tensor<double> attention_oracle(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                const BoolMask& allow, std::size_t heads) {
  const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols(), dh = d / heads;
  auto out = Tensor<double>::matrix(tq, d);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < tq; ++i) {
      std::vector<long double> w(tk, 0);
      long double mx = -INFINITY;
      for (std::size_t j = 0; j < tk; ++j) {
        if (!allow(i, j)) continue;
        long double s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += static_cast<long double>(q(i, h * dh + c)) * k(j, h * dh + c);
        w[j] = s / std::sqrt(static_cast<long double>(dh));
        mx = std::max(mx, w[j]);
      }
      long double z = 0;
      for (std::size_t j = 0; j < tk; ++j) {
        w[j] = allow(i, j) ? std::exp(w[j] - mx) : 0;
        z += w[j];
      }
      for (std::size_t c = 0; c < dh; ++c) {
        long double s = 0;
        for (std::size_t j = 0; j < tk; ++j) s += w[j] / z * v(j, h * dh + c);
        out(i, h * dh + c) = static_cast<double>(s);
      }
    }
  return out;
}

BoolMask random_mask(std::size_t tq, std::size_t tk, std::mt19937_64& rng) {
  BoolMask m(tq, tk);
  std::bernoulli_distribution on(0.5);
  for (std::size_t i = 0; i < tq; ++i) {
    m.set(i, std::uniform_int_distribution<std::size_t>(0, tk - 1)(rng), true);
    for (std::size_t j = 0; j < tk; ++j)
      if (on(rng)) m.set(i, j, true);
  }
  return m;
}

}  // namespace

TEST(Attention, MatchesOracleOnRandomMasks) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto heads = pick(rng, 1, 3);
    const auto d = heads * pick(rng, 1, 4);
    const auto tq = pick(rng, 1, 6), tk = pick(rng, 1, 6);
    const auto q = random_matrix(tq, d, rng), k = random_matrix(tk, d, rng), v = random_matrix(tk, d, rng);
    const auto mask = random_mask(tq, tk, rng);
    const auto got = kernels::attention(q, k, v, mask, heads);
    const auto want = attention_oracle(q, k, v, mask, heads);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Attention, IdentityMaskCopiesValues) {
  std::mt19937_64 rng(7);
  const auto q = random_matrix(5, 4, rng), k = random_matrix(5, 4, rng), v = random_matrix(5, 4, rng);
  const auto y = kernels::attention(q, k, v, BoolMask::identity(5), 1);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], v[i]);
}

TEST(Attention, SingleStepFullMaskCopiesValues) {
  std::mt19937_64 rng(8);
  const auto q = random_matrix(1, 6, rng), k = random_matrix(1, 6, rng), v = random_matrix(1, 6, rng);
  BoolMask all(1, 1);
  all.set(0, 0, true);
  const auto y = kernels::attention(q, k, v, all, 2);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], v[i]);
}

TEST(Attention, DisallowedPairsGetExactlyZeroWeight) {
  std::mt19937_64 rng(9);
  const auto q = random_matrix(4, 4, rng, 10.0), k = random_matrix(4, 4, rng, 10.0);
  const auto v = random_matrix(4, 4, rng);
  std::vector<double> probs;
  kernels::attention(q, k, v, BoolMask::causal(4), 2, &probs);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double p = probs[h * 16 + i * 4 + j];
        if (j > i) {
          EXPECT_EQ(p, 0.0);
        }
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Attention, CausalPrefixIsBitIdenticalUnderFuturePerturbation) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t t = pick(rng, 2, 9), d = 4;
    auto q = random_matrix(t, d, rng), k = random_matrix(t, d, rng), v = random_matrix(t, d, rng);
    const auto base = kernels::attention(q, k, v, BoolMask::causal(t), 2);
    const std::size_t cut = pick(rng, 0, t - 2);
    std::normal_distribution<double> n(0.0, 3.0);
    for (std::size_t r = cut + 1; r < t; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        q(r, c) += n(rng);
        k(r, c) += n(rng);
        v(r, c) += n(rng);
      }
    const auto moved = kernels::attention(q, k, v, BoolMask::causal(t), 2);
    for (std::size_t r = 0; r <= cut; ++r)
      for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(base(r, c), moved(r, c));
  }
}

TEST(Attention, EmptyMaskRowIsRejected) {
  std::mt19937_64 rng(11);
  const auto x = random_matrix(3, 2, rng);
  BoolMask m = BoolMask::causal(3);
  m.set(1, 0, false);
  m.set(1, 1, false);
  EXPECT_THROW(kernels::attention(x, x, x, m, 1), InvalidMask);
  EXPECT_THROW(kernels::attention(x, x, x, BoolMask::causal(2), 1), InvalidMask);
}

// ---------------------------------------------------------------------------
// Slot cross-entropy
// ---------------------------------------------------------------------------

TEST(SlotCrossEntropy, UniformLogitsGiveLogC) {
  const auto logits = Tensor<double>::matrix(2, 4);
  const std::vector<int> t{0, 3};
  const bool mask[] = {false, true};
  EXPECT_NEAR(kernels::slot_cross_entropy(logits, std::span<const int>(t), std::span<const bool>(mask, 2)),
              std::log(4.0), 1e-12);
}

TEST(SlotCrossEntropy, ConfidentCorrectLogitsApproachZero) {
  Tensor<double> logits({1, 3}, {0, 60, 0});
  const std::vector<int> t{1};
  const bool mask[] = {true};
  EXPECT_LT(kernels::slot_cross_entropy(logits, std::span<const int>(t), std::span<const bool>(mask, 1)), 1e-20);
}

TEST(SlotCrossEntropy, UnmaskedRowsNeverMatter) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rows = pick(rng, 2, 8), c = pick(rng, 2, 9);
    auto logits = random_matrix(rows, c, rng, 3.0);
    std::vector<int> t(rows);
    std::vector<bool> mask(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      t[i] = static_cast<int>(pick(rng, 0, c - 1));
      mask[i] = pick(rng, 0, 1) == 1;
    }
    mask[0] = true;
    Graph<double> g;
    Var x = g.input(logits, true);
    Var loss = slot_cross_entropy(g, x, t, mask);
    const double before = g.value(loss)[0];
    g.backward(loss);
    for (std::size_t i = 0; i < rows; ++i) {
      if (mask[i]) continue;
      for (double v : g.grad(x).row(i)) EXPECT_EQ(v, 0.0);
      std::normal_distribution<double> wild(0.0, 1e6);
      for (auto& v : logits.row(i)) v = wild(rng);
      t[i] = -7;  // never read
    }
    Graph<double> g2;
    const double after = g2.value(slot_cross_entropy(g2, g2.input(logits), t, mask))[0];
    EXPECT_EQ(before, after);
  }
}

TEST(SlotCrossEntropy, AllFalseMaskAndBadTargetsRejected) {
  const auto logits = Tensor<double>::matrix(2, 3);
  const std::vector<int> t{0, 5};
  const bool none[] = {false, false};
  const bool second[] = {false, true};
  EXPECT_THROW(kernels::slot_cross_entropy(logits, std::span<const int>(t), std::span<const bool>(none, 2)),
               InvalidInput);
  EXPECT_THROW(kernels::slot_cross_entropy(logits, std::span<const int>(t), std::span<const bool>(second, 2)),
               InvalidInput);
}

// ---------------------------------------------------------------------------
// Gradient checks, wide precision, >= 10 random shapes per primitive
// ---------------------------------------------------------------------------

TEST(GradCheck, SumHasUnitGradient) {
  std::mt19937_64 rng(13);
  const auto r = check_gradients<double>([](Graph<double>& g, Var x) { return sum(g, x); },
                                         random_matrix(3, 4, rng), 1e-8);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, NonFiniteFunctionIsANumericError) {
  Tensor<double> x({1, 1}, {0.0});
  auto f = [](Graph<double>& g, Var v) {
    return g.record(Tensor<double>({1}, {std::log(g.value(v)[0])}), {v}, "log", nullptr);
  };
  EXPECT_THROW(check_gradients<double>(f, x, 1e-4), NumericError);
}

class PrimitiveGrad : public ::testing::TestWithParam<std::tuple<std::size_t, int>> {};

TEST_P(PrimitiveGrad, MatchesCentralDifferences) {
  static const auto cases = grad_cases::all();
  const auto& c = cases.at(std::get<0>(GetParam()));
  const auto r = c.run(std::get<1>(GetParam()));
  EXPECT_TRUE(r.passed) << c.name << " max relative error " << r.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, PrimitiveGrad,
                         ::testing::Combine(::testing::Range<std::size_t>(0, grad_cases::all().size()),
                                            ::testing::Range(0, grad_cases::kShapes)),
                         [](const auto& info) {
                           return grad_cases::all()[std::get<0>(info.param)].name + "_" +
                                  std::to_string(std::get<1>(info.param));
                         });

// ---------------------------------------------------------------------------
// Graph bookkeeping
// ---------------------------------------------------------------------------

TEST(Graph, ParamGradientsAccumulateAcrossGraphs) {
  Param<double> p("p", Tensor<double>({2}, {1.0, 2.0}));
  for (int i = 0; i < 3; ++i) {
    Graph<double> g;
    g.backward(sum(g, g.param(p)));
  }
  EXPECT_EQ(p.grad.values(), (std::vector<double>{3.0, 3.0}));
}

TEST(Graph, NonFiniteValuesAreRejected) {
  Graph<double> g;
  Var x = g.input(Tensor<double>({1, 2}, {1e308, 1e308}));
  EXPECT_THROW(scale(g, x, 10.0), NumericError);
}

TEST(Graph, SliceBeyondEndIsACapacityError) {
  Graph<double> g;
  Var x = g.input(Tensor<double>::matrix(3, 2));
  EXPECT_THROW(slice_rows(g, x, 2, 2), CapacityError);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesValueAndCountsStep) {
  Param<double> p("p", Tensor<double>({3}, {1, -2, 3}));
  std::vector<Param<double>*> ps{&p};
  auto st = make_adam_states<double>(std::span<Param<double>* const>(ps), {});
  adam_step<double>(std::span<Param<double>* const>(ps), std::span<AdamState<double>>(st));
  EXPECT_EQ(p.value.values(), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(st[0].step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param<double> p("p", Tensor<double>({2}, {0.5, 0.5}));
  p.grad = Tensor<double>({2}, {0.3, -7.0});
  std::vector<Param<double>*> ps{&p};
  AdamHyper h;
  h.lr = 0.01;
  auto st = make_adam_states<double>(std::span<Param<double>* const>(ps), h);
  adam_step<double>(std::span<Param<double>* const>(ps), std::span<AdamState<double>>(st));
  EXPECT_NEAR(p.value[0], 0.49, 1e-6);
  EXPECT_NEAR(p.value[1], 0.51, 1e-6);
  for (double g : p.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Adam, QuadraticBowlConverges) {
  Param<double> w("w", Tensor<double>({1}, {1.0}));
  std::vector<Param<double>*> ps{&w};
  AdamHyper h;
  h.lr = 0.05;
  auto st = make_adam_states<double>(std::span<Param<double>* const>(ps), h);
  for (int i = 0; i < 200; ++i) {
    w.grad[0] = 2.0 * w.value[0];  // d/dw of w^2
    adam_step<double>(std::span<Param<double>* const>(ps), std::span<AdamState<double>>(st));
  }
  EXPECT_LT(std::abs(w.value[0]), 1e-2);
}

TEST(Adam, MismatchedStatesAreRejected) {
  Param<double> a("a", Tensor<double>({2}, 0.0)), b("b", Tensor<double>({3}, 0.0));
  std::vector<Param<double>*> one{&a}, two{&a, &b};
  auto st = make_adam_states<double>(std::span<Param<double>* const>(one), {});
  EXPECT_THROW(adam_step<double>(std::span<Param<double>* const>(two), std::span<AdamState<double>>(st)),
               InvalidInput);
  std::vector<Param<double>*> swapped{&b};
  EXPECT_THROW(adam_step<double>(std::span<Param<double>* const>(swapped), std::span<AdamState<double>>(st)),
               InvalidInput);
  AdamHyper bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(AdamState<double>(a, bad), InvalidInput);
}

TEST(Adam, ClipRescalesToMaxNorm) {
  Param<double> p("p", Tensor<double>({2}, 0.0));
  p.grad = Tensor<double>({2}, {3.0, 4.0});
  std::vector<Param<double>*> ps{&p};
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>(std::span<Param<double>* const>(ps), 1.0), 5.0);
  EXPECT_NEAR(p.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(p.grad[1], 0.8, 1e-15);
}
