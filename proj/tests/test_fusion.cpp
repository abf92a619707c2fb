#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "ehrfuse/fusion.hpp"
#include "ehrfuse/model.hpp"
#include "ehrfuse/random.hpp"
#include "gradcheck.hpp"

namespace ehrfuse {
namespace {

FusionConfig small_config() {
  FusionConfig c;
  c.dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.ffn_dim = 64;
  return c;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal(0.0, sd);
  return m;
}

TEST(Init, GlorotBoundAndRange) {
  EXPECT_NEAR(glorot_bound(16, 64), std::sqrt(6.0 / 80.0), 1e-15);
  EXPECT_NEAR(glorot_bound(16, 64), 0.2739, 5e-5);
  const auto p = init_fusion_params(small_config(), 3);
  for (const auto& b : p.blocks) {
    for (double v : b.w1.data) EXPECT_LE(std::abs(v), glorot_bound(16, 64));
    for (double v : b.w2.data) EXPECT_LE(std::abs(v), glorot_bound(64, 16));
    for (double v : b.wq.data) EXPECT_LE(std::abs(v), glorot_bound(16, 8));
  }
}

TEST(Init, NormParametersAndBiases) {
  const auto p = init_fusion_params(small_config(), 1);
  for (const auto& b : p.blocks) {
    for (const Matrix* g : {&b.ln1_gamma, &b.ln2_gamma}) {
      for (double v : g->data) EXPECT_EQ(v, 1.0);
    }
    for (const Matrix* z : {&b.ln1_beta, &b.ln2_beta, &b.b1, &b.b2}) {
      for (double v : z->data) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Init, SeedDeterminism) {
  EXPECT_EQ(init_fusion_params(small_config(), 7), init_fusion_params(small_config(), 7));
  EXPECT_NE(init_fusion_params(small_config(), 7), init_fusion_params(small_config(), 8));
}

TEST(Config, RejectsZeroLayersAndBadHeads) {
  auto c = small_config();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Softmax, StableAndNormalized) {
  std::vector<double> big{1000.0, 0.0};
  softmax_inplace(big);
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);
  std::vector<double> half{std::log(2.0), 0.0};
  softmax_inplace(half);
  EXPECT_NEAR(half[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(half[1], 1.0 / 3.0, 1e-15);
}

TEST(LayerNorm, Examples) {
  const std::vector<double> one(3, 1.0), zero(3, 0.0);
  for (double v : layer_norm(std::vector<double>{5, 5, 5}, one, zero, 1e-5)) EXPECT_EQ(v, 0.0);
  const auto y = layer_norm(std::vector<double>{1, 2, 3}, one, zero, 1e-15);
  const double s = std::sqrt(1.5);
  EXPECT_NEAR(y[0], -s, 1e-9);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], s, 1e-9);
  EXPECT_NEAR(s, 1.2247, 1e-4);
  const std::vector<double> beta{0.5, -1.0, 2.0};
  EXPECT_EQ(layer_norm(std::vector<double>{3, -7, 11}, zero, beta, 1e-5), beta);
}

TEST(LayerNorm, RowMomentsProperty) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_matrix(rng, 4, 16, 5.0);
    LayerNormTrace tr;
    const auto y = layer_norm_rows(x, Matrix(1, 16, 1.0), Matrix(1, 16, 0.0), 1e-5, tr);
    for (std::size_t r = 0; r < y.rows; ++r) {
      const auto row = y.row(r);
      const double mean = std::accumulate(row.begin(), row.end(), 0.0) / 16.0;
      const auto in = x.row(r);
      const double in_mean = std::accumulate(in.begin(), in.end(), 0.0) / 16.0;
      double var = 0.0, in_var = 0.0;
      for (double v : row) var += (v - mean) * (v - mean);
      for (double v : in) in_var += (v - in_mean) * (v - in_mean);
      in_var /= 16.0;
      EXPECT_LT(std::abs(mean), 1e-9);
      // eps shrinks the unit variance by var / (var + eps).
      EXPECT_NEAR(var / 16.0, in_var / (in_var + 1e-5), 1e-9);
    }
  }
}

TEST(Attention, ZeroWeightsGiveZero) {
  auto p = init_fusion_params(small_config(), 0);
  auto& b = p.blocks[0];
  for (Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo}) m->fill(0.0);
  Rng rng(1);
  const auto u = multi_head_attention(random_matrix(rng, 6, 16), b, 2);
  EXPECT_EQ(max_abs(u), 0.0);
}

TEST(Attention, SingleTokenPassesValueThrough) {
  auto p = init_fusion_params(small_config(), 0);
  auto& b = p.blocks[0];
  b.wo.fill(0.0);
  for (std::size_t k = 0; k < 16; ++k) b.wo(k, k) = 1.0;
  Rng rng(2);
  const auto g = random_matrix(rng, 1, 16);
  AttentionTrace tr;
  const auto u = multi_head_attention(g, b, 2, tr);
  EXPECT_EQ(tr.probs[0](0, 0), 1.0);
  EXPECT_EQ(u, matmul(g, b.wv));
}

TEST(Attention, RejectsNonFinite) {
  const auto p = init_fusion_params(small_config(), 0);
  Matrix g(3, 16);
  g(1, 2) = std::nan("");
  EXPECT_THROW(multi_head_attention(g, p.blocks[0], 2), NumericalError);
}

TEST(Forward, ProbabilityRowsSumToOne) {
  const auto cfg = small_config();
  const auto p = init_fusion_params(cfg, 5);
  Rng rng(5);
  const auto out = fusion_forward(p, cfg, random_matrix(rng, 7, 16, 3.0));
  for (const auto& block : out.trace.blocks) {
    for (const auto& probs : block.attention.probs) {
      for (std::size_t i = 0; i < probs.rows; ++i) {
        const auto row = probs.row(i);
        EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
        for (double v : row) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
      }
    }
  }
}

TEST(Forward, PermutationInvariantClsOutput) {
  const auto cfg = small_config();
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto p = init_fusion_params(cfg, static_cast<std::uint64_t>(t));
    const std::size_t m = 1 + rng.below(9);
    const auto z = random_matrix(rng, m, 16);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Matrix zp(m, 16);
    for (std::size_t r = 0; r < m; ++r) std::copy(z.row(perm[r]).begin(), z.row(perm[r]).end(), zp.row(r).begin());
    const auto a = fusion_forward(p, cfg, z).patient;
    const auto b = fusion_forward(p, cfg, zp).patient;
    for (std::size_t k = 0; k < 16; ++k) ASSERT_LT(std::abs(a[k] - b[k]), 1e-9);
  }
}

TEST(Forward, InputErrors) {
  const auto cfg = small_config();
  const auto p = init_fusion_params(cfg, 0);
  EXPECT_THROW(fusion_forward(p, cfg, Matrix(0, 16)), DataError);
  EXPECT_THROW(fusion_forward(p, cfg, Matrix(2, 8)), DataError);
  Matrix z(2, 16);
  z(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fusion_forward(p, cfg, z), NumericalError);
}

TEST(Backward, ClassificationMatchesFiniteDifferences) {
  const auto g = testing::gradcheck_instance(TaskKind::classification, 11);
  EXPECT_GT(testing::relu_margin(g.model, g.inputs), 1e-2);
  const auto r = testing::gradient_check(g.model, g.inputs, g.labels, &*g.weights, 1e-4, 1e-6);
  EXPECT_GT(r.checked, 6000u);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Backward, RegressionMatchesFiniteDifferences) {
  const auto g = testing::gradcheck_instance(TaskKind::regression, 12);
  const auto r = testing::gradient_check(g.model, g.inputs, g.labels, nullptr, 1e-4, 1e-6);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
}

TEST(Backward, KinkClearingOnlyMovesBiases) {
  auto g = testing::gradcheck_instance(TaskKind::classification, 13);
  auto moved = g.model;
  testing::clear_relu_kinks(moved, g.inputs);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(moved.fusion.blocks[l].w1, g.model.fusion.blocks[l].w1);
    EXPECT_EQ(moved.fusion.blocks[l].wq, g.model.fusion.blocks[l].wq);
  }
  EXPECT_GE(testing::relu_margin(moved, g.inputs), testing::relu_margin(g.model, g.inputs) - 1e-12);
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  const auto cfg = small_config();
  const auto p = init_fusion_params(cfg, 13);
  Rng rng(13);
  auto z = random_matrix(rng, 5, 16);
  const auto direction = random_matrix(rng, 1, 16);
  auto objective = [&](const Matrix& x) {
    const auto e = fusion_forward(p, cfg, x).patient;
    double s = 0.0;
    for (std::size_t k = 0; k < 16; ++k) s += e[k] * direction.data[k];
    return s;
  };
  const auto out = fusion_forward(p, cfg, z);
  auto grads = zeros_like(p);
  Matrix dz;
  fusion_backward(p, cfg, out.trace, direction.data, grads, &dz);
  ASSERT_EQ(dz.rows, 5u);
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double saved = z.data[k];
    z.data[k] = saved + 1e-4;
    const double up = objective(z);
    z.data[k] = saved - 1e-4;
    const double down = objective(z);
    z.data[k] = saved;
    EXPECT_LT(testing::relative_error(dz.data[k], (up - down) / 2e-4, 1e-6), 1e-4) << k;
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto cfg = small_config();
  const auto p = init_fusion_params(cfg, 14);
  Rng rng(14);
  const auto out = fusion_forward(p, cfg, random_matrix(rng, 4, 16));
  auto grads = zeros_like(p);
  fusion_backward(p, cfg, out.trace, std::vector<double>(16, 0.0), grads);
  FusionParams::visit(grads, [](const std::string& name, const Matrix& m) { EXPECT_EQ(max_abs(m), 0.0) << name; });
}

TEST(Backward, DeadReluUnitHasNoOutputWeightGradient) {
  const auto cfg = small_config();
  auto p = init_fusion_params(cfg, 15);
  const std::size_t unit = 5;
  p.blocks[1].b1.data[unit] = -1e6;
  Rng rng(15);
  const auto out = fusion_forward(p, cfg, random_matrix(rng, 4, 16));
  auto grads = zeros_like(p);
  fusion_backward(p, cfg, out.trace, random_matrix(rng, 1, 16).data, grads);
  for (double v : grads.blocks[1].w2.row(unit)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(grads.blocks[1].b1.data[unit], 0.0);
  for (std::size_t r = 0; r < 16; ++r) EXPECT_EQ(grads.blocks[1].w1(r, unit), 0.0);
}

TEST(Backward, Accumulates) {
  const auto cfg = small_config();
  const auto p = init_fusion_params(cfg, 16);
  Rng rng(16);
  const auto out = fusion_forward(p, cfg, random_matrix(rng, 3, 16));
  const auto up = random_matrix(rng, 1, 16).data;
  auto once = zeros_like(p);
  fusion_backward(p, cfg, out.trace, up, once);
  auto twice = zeros_like(p);
  fusion_backward(p, cfg, out.trace, up, twice);
  fusion_backward(p, cfg, out.trace, up, twice);
  auto a = tensor_list(once);
  auto b = tensor_list(twice);
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t k = 0; k < a[t]->size(); ++k) EXPECT_NEAR(2.0 * a[t]->data[k], b[t]->data[k], 1e-12);
  }
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  HeadParams p = init_head_params(4, 4, 2, 0);
  HeadParams g = zeros_like(p);
  Rng rng(17);
  for (auto* m : tensor_list(g)) {
    for (double& v : m->data) v = rng.normal(0.0, 3.0);
  }
  const HeadParams before = p;
  auto state = init_adam(p);
  const AdamConfig cfg{1e-3, 0.9, 0.999, 1e-12};
  adam_step(p, g, state, cfg);
  EXPECT_EQ(state.step, 1u);
  const auto pa = tensor_list(p);
  const auto pb = tensor_list(before);
  const auto ga = tensor_list(g);
  for (std::size_t t = 0; t < pa.size(); ++t) {
    for (std::size_t k = 0; k < pa[t]->size(); ++k) {
      const double sign = ga[t]->data[k] > 0 ? 1.0 : -1.0;
      EXPECT_NEAR(pa[t]->data[k] - pb[t]->data[k], -1e-3 * sign, 1e-12);
    }
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  HeadParams p = init_head_params(4, 4, 2, 1);
  const HeadParams before = p;
  const HeadParams g = zeros_like(p);
  auto state = init_adam(p);
  for (int k = 0; k < 10; ++k) adam_step(p, g, state, AdamConfig{});
  EXPECT_EQ(p, before);
}

TEST(Adam, Deterministic) {
  HeadParams p1 = init_head_params(4, 4, 2, 2), p2 = p1;
  HeadParams g = init_head_params(4, 4, 2, 3);
  auto s1 = init_adam(p1), s2 = init_adam(p2);
  for (int k = 0; k < 5; ++k) {
    adam_step(p1, g, s1, AdamConfig{});
    adam_step(p2, g, s2, AdamConfig{});
  }
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(s1, s2);
}

}  // namespace
}  // namespace ehrfuse
