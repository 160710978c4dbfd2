#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "stclip/autodiff.hpp"
#include "stclip/error.hpp"

using namespace stclip;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Wraps an op output into a nonlinear scalar so that every output entry
// influences the objective differently.
Var probe(Var out, const Tensor& offset) {
  return squared_norm(add(out, out.tape->constant(offset)));
}

void expect_grad_ok(const std::function<Var(Tape&)>& fn, std::vector<Parameter*> ps,
                    double tol = 1e-5) {
  const auto report = grad_check(fn, ps);
  EXPECT_LT(report.max_rel_error, tol);
}

}  // namespace

TEST(Autodiff, SoftmaxOfEqualLogitsIsUniform) {
  Tape t;
  for (std::size_t k : {1u, 2u, 5u, 16u}) {
    Var y = softmax_rows(t.constant(Tensor(1, k, 3.7)));
    for (std::size_t j = 0; j < k; ++j) EXPECT_DOUBLE_EQ(y.value()[j], 1.0 / double(k));
  }
}

TEST(Autodiff, CosineOfSelfIsOne) {
  std::mt19937_64 rng(1);
  Tape t;
  for (int trial = 0; trial < 20; ++trial) {
    Var x = t.constant(random_tensor(rng, 1, 7));
    EXPECT_NEAR(cosine_similarity(x, x).value()[0], 1.0, 1e-15);
  }
}

TEST(Autodiff, CosineOfZeroVectorIsNumericError) {
  Tape t;
  Var z = t.constant(Tensor(1, 3));
  Var x = t.constant(Tensor(1, 3, 1.0));
  EXPECT_THROW(cosine_similarity(z, x), NumericError);
}

TEST(Autodiff, CrossEntropyIsNegativeLogAtHotIndex) {
  Tape t;
  Var p = t.constant(Tensor::row_vector({0.2, 0.5, 0.3}));
  EXPECT_DOUBLE_EQ(cross_entropy(p, 1).value()[0], -std::log(0.5));
  EXPECT_DOUBLE_EQ(cross_entropy(p, 0).value()[0], -std::log(0.2));
}

TEST(Autodiff, CrossEntropyClampsExactZero) {
  Tape t;
  Var p = t.constant(Tensor::row_vector({0.0, 1.0}));
  EXPECT_DOUBLE_EQ(cross_entropy(p, 0).value()[0], -std::log(kProbabilityFloor));
}

TEST(Autodiff, GradCheckExactForQuadratic) {
  Parameter theta("theta", Tensor(1, 1, 3.0));
  std::vector<Parameter*> ps{&theta};
  const auto report = grad_check([&](Tape& t) { return squared_norm(t.param(theta)); }, ps);
  EXPECT_NEAR(theta.grad[0], 6.0, 1e-12);
  EXPECT_LT(report.max_rel_error, 1e-8);
  ASSERT_EQ(report.params.size(), 1u);
}

TEST(Autodiff, GradCheckSkipsFrozenParameters) {
  std::mt19937_64 rng(2);
  Parameter w("w", random_tensor(rng, 3, 3));
  Parameter frozen("frozen", random_tensor(rng, 3, 3), true);
  std::vector<Parameter*> ps{&w, &frozen};
  const auto report = grad_check(
      [&](Tape& t) { return squared_norm(matmul(t.param(w), t.param(frozen))); }, ps);
  ASSERT_EQ(report.params.size(), 1u);
  EXPECT_EQ(report.params[0].name, "w");
  EXPECT_EQ(report.frozen_grad_entries, 0u);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(Autodiff, GradientPassesThroughFrozenOps) {
  std::mt19937_64 rng(3);
  Parameter x("x", random_tensor(rng, 1, 4));
  Parameter frozen("m", random_tensor(rng, 4, 4), true);
  Tape t;
  Var y = squared_norm(matmul(t.param(x), t.param(frozen)));
  t.backward(y);
  ASSERT_FALSE(x.grad.empty());
  double norm = 0.0;
  for (double g : x.grad.data()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
  EXPECT_TRUE(frozen.grad.empty());
}

TEST(Autodiff, DiscardingATapeLeavesParametersUnchanged) {
  std::mt19937_64 rng(4);
  Parameter w("w", random_tensor(rng, 2, 3));
  const Tensor before = w.value;
  {
    Tape t;
    Var y = squared_norm(tanh(t.param(w)));
    (void)y;
  }
  EXPECT_EQ(w.value, before);
}

TEST(Autodiff, ShapeErrorNamesBothShapes) {
  Tape t;
  Var a = t.constant(Tensor(2, 3));
  Var b = t.constant(Tensor(2, 4));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x4]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Autodiff, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(5);
  Tape t;
  for (int trial = 0; trial < 100; ++trial) {
    Var y = softmax_rows(t.constant(random_tensor(rng, 3, 6, 4.0)));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : y.value().row(r)) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Autodiff, MaskedSoftmaxZeroesMaskedAndRenormalizes) {
  std::mt19937_64 rng(6);
  Tape t;
  const std::vector<bool> mask{true, false, true, false, true};
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor logits = random_tensor(rng, 2, 5, 3.0);
    Var y = masked_softmax_rows(t.constant(logits), mask);
    for (std::size_t r = 0; r < 2; ++r) {
      double denom = 0.0;
      for (std::size_t c = 0; c < 5; ++c)
        if (mask[c]) denom += std::exp(logits(r, c));
      for (std::size_t c = 0; c < 5; ++c) {
        if (!mask[c]) {
          EXPECT_EQ(y.value()(r, c), 0.0);
        } else {
          EXPECT_NEAR(y.value()(r, c), std::exp(logits(r, c)) / denom, 1e-12);
        }
      }
    }
  }
}

TEST(Autodiff, LayerNormUnitGainHasZeroMeanUnitVariance) {
  std::mt19937_64 rng(7);
  Tape t;
  Var y = layer_norm(t.constant(random_tensor(rng, 3, 8, 5.0)), t.constant(Tensor(1, 8, 1.0)),
                     t.constant(Tensor(1, 8)));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (double x : y.value().row(r)) m += x;
    m /= 8;
    for (double x : y.value().row(r)) v += (x - m) * (x - m);
    v /= 8;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

// Each core op's backward against central differences, >= 100 random shapes.
class OpGradient : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
  std::size_t dim() { return std::uniform_int_distribution<std::size_t>(1, 4)(rng); }
};

TEST_F(OpGradient, Matmul) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim(), k = dim(), m = dim();
    Parameter a("a", random_tensor(rng, n, k)), b("b", random_tensor(rng, k, m));
    const Tensor off = random_tensor(rng, n, m);
    expect_grad_ok([&](Tape& t) { return probe(matmul(t.param(a), t.param(b)), off); }, {&a, &b});
  }
}

TEST_F(OpGradient, MatmulNt) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim(), k = dim(), m = dim();
    Parameter a("a", random_tensor(rng, n, k)), b("b", random_tensor(rng, m, k));
    const Tensor off = random_tensor(rng, n, m);
    expect_grad_ok([&](Tape& t) { return probe(matmul_nt(t.param(a), t.param(b)), off); },
                   {&a, &b});
  }
}

TEST_F(OpGradient, AddAndAddRowAndScaleAndSum) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim(), m = dim();
    Parameter a("a", random_tensor(rng, n, m)), b("b", random_tensor(rng, n, m)),
        bias("bias", random_tensor(rng, 1, m));
    const Tensor off = random_tensor(rng, n, m);
    expect_grad_ok(
        [&](Tape& t) {
          Var s = add_row(add(t.param(a), scale(t.param(b), -1.7)), t.param(bias));
          std::vector<Var> parts{s, t.param(a), s};
          return probe(sum(parts), off);
        },
        {&a, &b, &bias});
  }
}

TEST_F(OpGradient, TanhAndGelu) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim(), m = dim();
    Parameter a("a", random_tensor(rng, n, m, 1.5));
    const Tensor off = random_tensor(rng, n, m);
    expect_grad_ok([&](Tape& t) { return probe(tanh(t.param(a)), off); }, {&a});
    expect_grad_ok([&](Tape& t) { return probe(gelu(t.param(a)), off); }, {&a});
  }
}

TEST_F(OpGradient, LayerNorm) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim(), m = dim() + 1;
    Parameter x("x", random_tensor(rng, n, m)), g("g", random_tensor(rng, 1, m)),
        b("b", random_tensor(rng, 1, m));
    const Tensor off = random_tensor(rng, n, m);
    expect_grad_ok(
        [&](Tape& t) { return probe(layer_norm(t.param(x), t.param(g), t.param(b)), off); },
        {&x, &g, &b}, 1e-4);
  }
}

TEST_F(OpGradient, SoftmaxAndMaskedSoftmax) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim(), m = dim() + 1;
    Parameter x("x", random_tensor(rng, n, m));
    const Tensor off = random_tensor(rng, n, m);
    std::vector<bool> mask(m, true);
    mask[std::uniform_int_distribution<std::size_t>(1, m - 1)(rng)] = false;
    expect_grad_ok([&](Tape& t) { return probe(softmax_rows(t.param(x)), off); }, {&x});
    expect_grad_ok([&](Tape& t) { return probe(masked_softmax_rows(t.param(x), mask), off); },
                   {&x});
  }
}

TEST_F(OpGradient, ReshapingOps) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = dim() + 1, m = dim() + 1;
    Parameter a("a", random_tensor(rng, n, m)), b("b", random_tensor(rng, n, m));
    const Tensor off_c = random_tensor(rng, n, 2 * m);
    const Tensor off_r = random_tensor(rng, 2 * n, m);
    expect_grad_ok(
        [&](Tape& t) {
          std::vector<Var> parts{t.param(a), t.param(b)};
          return probe(concat_cols(parts), off_c);
        },
        {&a, &b});
    expect_grad_ok(
        [&](Tape& t) {
          std::vector<Var> parts{t.param(a), t.param(b)};
          return probe(concat_rows(parts), off_r);
        },
        {&a, &b});
    const Tensor off_s = random_tensor(rng, n, m - 1);
    expect_grad_ok([&](Tape& t) { return probe(slice_cols(t.param(a), 1, m - 1), off_s); },
                   {&a});
    const Tensor off_row = random_tensor(rng, 1, m);
    expect_grad_ok([&](Tape& t) { return probe(gather_row(t.param(a), n - 1), off_row); }, {&a});
    expect_grad_ok([&](Tape& t) { return probe(mean_rows(t.param(a)), off_row); }, {&a});
    expect_grad_ok([&](Tape& t) { return squared_norm(sum_all(t.param(a))); }, {&a});
  }
}

TEST_F(OpGradient, CosineAndCrossEntropy) {
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = dim() + 1;
    Parameter a("a", random_tensor(rng, 1, m)), b("b", random_tensor(rng, 1, m));
    expect_grad_ok([&](Tape& t) { return squared_norm(cosine_similarity(t.param(a), t.param(b))); },
                   {&a, &b});
    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
    expect_grad_ok(
        [&](Tape& t) { return cross_entropy(softmax_rows(t.param(a)), target); }, {&a});
  }
}
