#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "model_fixtures.hpp"
#include "stclip/error.hpp"
#include "stclip/scamp.hpp"

using namespace stclip;
using fixtures::max_abs_diff;
using fixtures::random_tensor;

namespace {

Tensor softmax_rows_ref(Tensor s) {
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double hi = -HUGE_VAL, z = 0;
    for (double v : s.row(r)) hi = std::max(hi, v);
    for (double& v : s.row(r)) z += (v = std::exp(v - hi));
    for (double& v : s.row(r)) v /= z;
  }
  return s;
}

Tensor transpose(const Tensor& a) {
  Tensor t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

Tensor scaled(Tensor a, double s) {
  for (double& v : a.data()) v *= s;
  return a;
}

std::vector<std::vector<Parameter*>> pair_params(std::vector<std::vector<Parameter>>& store) {
  std::vector<std::vector<Parameter*>> out;
  for (auto& row : store) {
    auto& o = out.emplace_back();
    for (auto& p : row) o.push_back(&p);
  }
  return out;
}

std::vector<std::vector<Parameter>> random_pairs(std::mt19937_64& rng, std::size_t n, std::size_t d, double scale) {
  std::vector<std::vector<Parameter>> w(n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q)
      w[p].emplace_back("w" + std::to_string(p) + std::to_string(q), random_tensor(rng, d, d, scale), false);
  return w;
}

}  // namespace

// ---- context injection ----------------------------------------------------------

TEST(Inject, ZeroContextLeavesPromptsUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor w = random_tensor(rng, 4, 6);
  Tape t;
  EXPECT_EQ(inject_context(t.constant(w), t.constant(Tensor(1, 6))).value(), w);
}

TEST(Inject, ZeroPromptsBecomeContextRows) {
  std::mt19937_64 rng(2);
  const Tensor r = random_tensor(rng, 1, 6);
  Tape t;
  const Tensor v = inject_context(t.constant(Tensor(4, 6)), t.constant(r)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(v(i, j), r[j]);
}

TEST(Inject, RowwiseSums) {
  std::mt19937_64 rng(3);
  const Tensor w = random_tensor(rng, 5, 6), r = random_tensor(rng, 1, 6);
  Tape t;
  const Tensor v = inject_context(t.constant(w), t.constant(r)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(v(i, j), w(i, j) + r[j]);
  EXPECT_THROW(inject_context(t.constant(w), t.constant(Tensor(1, 5))), ShapeError);
}

// ---- cross-modal attention ----------------------------------------------------------

TEST(CrossModal, IdenticalPatchesGiveProjectedValue) {
  std::mt19937_64 rng(4);
  ParamStore store;
  const auto att = make_attention(store, "cm", 8, 2, rng, false);
  const Tensor u = random_tensor(rng, 1, 8);
  Tensor patches(5, 8);
  for (std::size_t r = 0; r < 5; ++r) std::copy(u.data().begin(), u.data().end(), patches.row(r).begin());
  const Tensor expect = matmul(matmul(u, att.wv->value), att.wo->value);
  Tape t;
  const Tensor out = cross_modal_attention(t, t.constant(random_tensor(rng, 3, 8)), t.constant(patches), att).value();
  ASSERT_EQ(out.rows(), 3u);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out(r, j), expect[j], 1e-12);
}

TEST(CrossModal, ZeroQueryWeightsAverageThePatches) {
  std::mt19937_64 rng(5);
  ParamStore store;
  const auto att = make_attention(store, "cm", 8, 2, rng, false);
  att.wq->value.fill(0.0);
  const Tensor patches = random_tensor(rng, 4, 8);
  Tensor mean(1, 8);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 8; ++j) mean[j] += patches(r, j) / 4.0;
  const Tensor expect = matmul(matmul(mean, att.wv->value), att.wo->value);
  Tape t;
  AttentionTrace trace;
  const Tensor out =
      cross_modal_attention(t, t.constant(random_tensor(rng, 3, 8)), t.constant(patches), att, &trace).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out(r, j), expect[j], 1e-12);
  ASSERT_EQ(trace.heads.size(), 2u);
  for (const auto& h : trace.heads)
    for (double w : h.data()) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(CrossModal, SingleHeadMatchesHandComputation) {
  std::mt19937_64 rng(6);
  ParamStore store;
  const auto att = make_attention(store, "cm", 4, 1, rng, false);
  const Tensor prompts = random_tensor(rng, 2, 4), patches = random_tensor(rng, 3, 4);
  const Tensor q = matmul(prompts, att.wq->value);
  const Tensor k = matmul(patches, att.wk->value);
  const Tensor v = matmul(patches, att.wv->value);
  const Tensor a = softmax_rows_ref(scaled(matmul(q, transpose(k)), 0.5));
  const Tensor expect = matmul(matmul(a, v), att.wo->value);
  Tape t;
  const Tensor out = cross_modal_attention(t, t.constant(prompts), t.constant(patches), att).value();
  ASSERT_EQ(out.rows(), 2u);
  ASSERT_EQ(out.cols(), 4u);
  EXPECT_LT(max_abs_diff(out, expect), 1e-12);
}

TEST(CrossModal, DuplicatingEveryPatchChangesNothing) {
  std::mt19937_64 rng(7);
  ParamStore store;
  const auto att = make_attention(store, "cm", 8, 2, rng, false);
  const Tensor prompts = random_tensor(rng, 4, 8), patches = random_tensor(rng, 3, 8);
  Tensor doubled(6, 8);
  for (std::size_t r = 0; r < 6; ++r)
    std::copy(patches.row(r % 3).begin(), patches.row(r % 3).end(), doubled.row(r).begin());
  Tape t;
  const Tensor a = cross_modal_attention(t, t.constant(prompts), t.constant(patches), att).value();
  const Tensor b = cross_modal_attention(t, t.constant(prompts), t.constant(doubled), att).value();
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

// ---- cross-aspect attention -----------------------------------------------------------

TEST(CrossAspect, SingleAspectZeroWeightsGiveRowMean) {
  std::mt19937_64 rng(8);
  auto w = random_pairs(rng, 1, 6, 0.0);
  const Tensor v = random_tensor(rng, 4, 6);
  Tape t;
  const auto out = cross_aspect_attention(t, {t.constant(v)}, pair_params(w));
  Tensor mean(1, 6);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 6; ++j) mean[j] += v(r, j) / 4.0;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out[0].value()(r, j), mean[j], 1e-12);
}

TEST(CrossAspect, IdenticalInputsMatchDirectEvaluation) {
  std::mt19937_64 rng(9);
  auto w = random_pairs(rng, 2, 4, 0.5);
  const Tensor v = random_tensor(rng, 2, 4);
  Tape t;
  const auto out = cross_aspect_attention(t, {t.constant(v), t.constant(v)}, pair_params(w));
  for (std::size_t p = 0; p < 2; ++p) {
    Tensor expect(2, 4);
    for (std::size_t q = 0; q < 2; ++q) {
      const Tensor a = softmax_rows_ref(scaled(matmul(matmul(v, w[p][q].value), transpose(v)), 0.5));
      expect.add_inplace(matmul(a, v));
    }
    EXPECT_LT(max_abs_diff(out[p].value(), expect), 1e-12);
  }
}

TEST(CrossAspect, AttentionRowsAreDistributions) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = random_pairs(rng, 3, 6, 1.0);
    Tape t;
    std::vector<Var> v;
    for (int p = 0; p < 3; ++p) v.push_back(t.constant(random_tensor(rng, 4, 6, 3.0)));
    std::vector<Tensor> att;
    cross_aspect_attention(t, v, pair_params(w), &att);
    ASSERT_EQ(att.size(), 9u);
    for (const auto& a : att)
      for (std::size_t r = 0; r < a.rows(); ++r) {
        double sum = 0;
        for (double x : a.row(r)) {
          EXPECT_GT(x, 0.0);
          sum += x;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
  }
}

TEST(CrossAspect, SwappingAspectsSwapsOutputsExactly) {
  std::mt19937_64 rng(11);
  auto w = random_pairs(rng, 2, 6, 0.4);
  std::vector<std::vector<Parameter>> swapped(2);
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t q = 0; q < 2; ++q) swapped[p].push_back(w[1 - p][1 - q]);
  const Tensor a = random_tensor(rng, 4, 6), b = random_tensor(rng, 4, 6);
  Tape t;
  const auto out = cross_aspect_attention(t, {t.constant(a), t.constant(b)}, pair_params(w));
  const auto perm = cross_aspect_attention(t, {t.constant(b), t.constant(a)}, pair_params(swapped));
  EXPECT_EQ(perm[0].value(), out[1].value());
  EXPECT_EQ(perm[1].value(), out[0].value());
}

TEST(CrossAspect, PermutationEquivarianceForThreeAspects) {
  std::mt19937_64 rng(12);
  const std::size_t n = 3;
  auto w = random_pairs(rng, n, 5, 0.4);
  const std::vector<std::size_t> pi{2, 0, 1};
  std::vector<std::vector<Parameter>> wp(n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q) wp[p].push_back(w[pi[p]][pi[q]]);
  std::vector<Tensor> v;
  for (std::size_t p = 0; p < n; ++p) v.push_back(random_tensor(rng, 3, 5));
  Tape t;
  std::vector<Var> in, inp;
  for (std::size_t p = 0; p < n; ++p) {
    in.push_back(t.constant(v[p]));
    inp.push_back(t.constant(v[pi[p]]));
  }
  const auto out = cross_aspect_attention(t, in, pair_params(w));
  const auto outp = cross_aspect_attention(t, inp, pair_params(wp));
  for (std::size_t p = 0; p < n; ++p) EXPECT_LT(max_abs_diff(outp[p].value(), out[pi[p]].value()), 1e-13);
}

TEST(CrossAspect, KernelMatchesTapeVersion) {
  std::mt19937_64 rng(13);
  auto w = random_pairs(rng, 4, 8, 0.35);
  std::vector<Tensor> v;
  for (int p = 0; p < 4; ++p) v.push_back(random_tensor(rng, 6, 8));
  Tape t;
  std::vector<Var> in;
  for (const auto& x : v) in.push_back(t.constant(x));
  const auto out = cross_aspect_attention(t, in, pair_params(w));
  std::vector<std::vector<const Tensor*>> cw(4);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t q = 0; q < 4; ++q) cw[p].push_back(&w[p][q].value);
  const auto k = cross_aspect_kernel(v, cw);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_LT(max_abs_diff(k[p], out[p].value()), 1e-12);
}

TEST(CrossAspect, WrongWeightCountIsShapeError) {
  std::mt19937_64 rng(14);
  auto w = random_pairs(rng, 1, 4, 1.0);
  Tape t;
  EXPECT_THROW(cross_aspect_attention(t, {t.constant(Tensor(2, 4)), t.constant(Tensor(2, 4))}, pair_params(w)),
               ShapeError);
}

// ---- full text path -----------------------------------------------------------------

TEST(TextPath, PromptsInitializedSmall) {
  auto m = ModelState::init(ModelConfig::desk(), traffic_scene_aspects());
  for (Parameter* p : m.scamp().prompts) {
    double ss = 0;
    for (double v : p->value.data()) ss += v * v;
    const double sd = std::sqrt(ss / double(p->value.size()));
    EXPECT_GT(sd, 0.01);
    EXPECT_LT(sd, 0.03);
    EXPECT_EQ(p->value.rows(), 8u);
    EXPECT_FALSE(p->frozen);
  }
}

TEST(TextPath, AspectsAreCoupled) {
  std::mt19937_64 rng(15);
  auto m = ModelState::init(fixtures::toy_config(), fixtures::toy_aspects());
  const auto s = fixtures::random_sample(rng, m);
  Tape t;
  const Tensor before = forward(t, m, s).text_features[0][0].value();
  m.scamp().prompts[1]->value.fill(0.0);
  EXPECT_GT(max_abs_diff(forward(t, m, s).text_features[0][0].value(), before), 1e-9);
}

TEST(TextPath, SkippingCrossAspectDecouplesAspects) {
  std::mt19937_64 rng(16);
  auto cfg = fixtures::toy_config();
  cfg.ablation.nca = true;
  auto m = ModelState::init(cfg, fixtures::toy_aspects());
  const auto s = fixtures::random_sample(rng, m);
  Tape t;
  const auto before = forward(t, m, s);
  std::vector<Tensor> left;
  for (const Var& v : before.text_features[0]) left.push_back(v.value());
  m.scamp().prompts[1]->value.fill(0.0);
  for (Parameter* p : {m.scamp().cross_modal[1].wq, m.scamp().cross_modal[1].wv}) p->value.fill(0.3);
  const auto after = forward(t, m, s);
  for (std::size_t k = 0; k < left.size(); ++k) EXPECT_EQ(after.text_features[0][k].value(), left[k]);
  EXPECT_GT(max_abs_diff(after.text_features[1][0].value(), before.text_features[1][0].value()), 1e-9);
}

TEST(TextPath, AllSwitchesOffLeaveStaticPrompts) {
  std::mt19937_64 rng(17);
  auto cfg = fixtures::toy_config();
  cfg.ablation = AblationFlags::parse("nst+ncm+nca");
  auto m = ModelState::init(cfg, fixtures::toy_aspects());
  const auto s = fixtures::random_sample(rng, m);
  Tape t;
  const auto r = forward(t, m, s);
  for (std::size_t p = 0; p < 2; ++p) {
    std::vector<Var> words;
    for (Parameter* w : m.class_words().words[p]) words.push_back(t.param(*w));
    const auto direct = encode_text_classes(t, m.text_stub(), t.param(*m.scamp().prompts[p]), words, cfg.class_position);
    for (std::size_t k = 0; k < direct.size(); ++k) {
      const Tensor d = direct[k].value();
      EXPECT_EQ(r.text_features[p][k].value(), d);
    }
  }
}

TEST(TextPath, FullChainGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(18);
  auto m = ModelState::init(fixtures::toy_config(), fixtures::toy_aspects());
  // Spread the prompt rows apart; near-identical rows leave the cross-aspect
  // weights with gradients too small to difference.
  fixtures::jitter_trainables(m, rng, 0.3);
  const auto s = fixtures::random_sample(rng, m);
  const std::vector<std::size_t> labels{1, 0};
  const auto report = grad_check(
      [&](Tape& t) {
        const auto r = forward(t, m, s);
        std::vector<Var> losses;
        for (std::size_t p = 0; p < labels.size(); ++p) losses.push_back(cross_entropy(r.probabilities[p], labels[p]));
        return sum(losses);
      },
      m.params().all());
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.frozen_grad_entries, 0u);
  EXPECT_EQ(report.params.size(), m.params().trainable().size());
  for (const auto& p : report.params) EXPECT_LT(p.max_rel_error, 1e-4) << p.name;
}
