#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hacd/attention.hpp"
#include "oracles.hpp"

using namespace hacd;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Meta-path graph with a hand-built pattern and unit weights.
MetaPathGraph hand_path(std::size_t n, const std::vector<std::vector<std::size_t>>& rows) {
  auto pat = std::make_shared<ad::RowPattern>();
  pat->rows = pat->cols = n;
  for (const auto& r : rows) {
    for (auto j : r) pat->col_idx.push_back(j);
    pat->row_ptr.push_back(pat->col_idx.size());
  }
  MetaPathGraph mp;
  mp.entity_count = n;
  mp.weights.assign(pat->nnz(), 1.0);
  mp.self_extra.assign(pat->nnz(), 0.0);
  mp.components = Tensor(pat->nnz(), 0);
  mp.pattern = pat;
  return mp;
}

// Six entities on a ring with chords, each row holding itself and its neighbors.
MetaPathGraph six_node_path() {
  return hand_path(6, {{0, 1, 5}, {0, 1, 2, 4}, {1, 2, 3}, {2, 3, 4}, {1, 3, 4, 5}, {0, 4, 5}});
}

}  // namespace

TEST(Projection, IdentityAndZero) {
  auto g = AttributedGraph::create(2, {{0, 1}}, SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {1, 1, 2.0}}));
  auto h = to_heterogeneous(g);
  Tape t;
  Tensor x(2, 2, std::vector<double>{1.0, 0.0, 0.0, 2.0});
  NodeAttentionParams p;
  p.entity_proj = t.parameter(Tensor(2, 2, std::vector<double>{1, 0, 0, 1}));
  p.attribute_proj = t.parameter(Tensor(2, 2, 0.0));
  auto pf = project_features(h, t.constant(x), p);
  EXPECT_EQ(pf.entity.value(), x);

  p.entity_proj = t.parameter(Tensor(2, 2, 0.0));
  auto z = project_features(h, t.constant(x), p);
  for (double v : z.entity.value().data()) EXPECT_EQ(v, 0.0);
  // Zero features give equal logits and so uniform coefficients.
  auto mp = hand_path(2, {{0, 1}, {0, 1}});
  std::mt19937_64 rng(1);
  auto a = node_attention_coeffs(z.entity, mp, t.constant(random_tensor(rng, 4, 1))).value();
  for (double v : a.data()) EXPECT_NEAR(v, 0.5, 1e-15);

  p.attribute_proj = t.parameter(Tensor(3, 2, 0.0));
  EXPECT_THROW(project_features(h, t.constant(x), p), ShapeError);
}

TEST(Projection, MatchesMatmulOracle) {
  std::mt19937_64 rng(2);
  auto x = random_tensor(rng, 5, 4), w = random_tensor(rng, 4, 3);
  std::vector<Triplet> f;
  for (std::size_t i = 0; i < 5; ++i) f.push_back({i, i % 4, 1.0});
  auto g = AttributedGraph::create(5, {}, SparseMatrix::from_triplets(5, 4, f));
  auto h = to_heterogeneous(g);
  Tape t;
  NodeAttentionParams p{t.parameter(w), t.parameter(random_tensor(rng, 4, 3)), {}};
  auto out = project_features(h, t.constant(x), p).entity.value();
  oracle::Dense dx(5, std::vector<double>(4)), dw(4, std::vector<double>(3));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) dx[i][j] = x(i, j);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) dw[i][j] = w(i, j);
  auto ref = oracle::matmul(dx, dw);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(i, j), ref[i][j], 1e-14);
}

TEST(NodeAttention, SingletonAndIdenticalNeighbors) {
  Tape t;
  std::mt19937_64 rng(3);
  auto single = hand_path(3, {{0}, {1}, {2}});
  auto a = node_attention_coeffs(t.constant(random_tensor(rng, 3, 2)), single, t.constant(random_tensor(rng, 4, 1)));
  for (double v : a.value().data()) EXPECT_DOUBLE_EQ(v, 1.0);

  auto full = hand_path(3, {{0, 1, 2}, {0, 1, 2}, {0, 1, 2}});
  Tensor same(3, 2, std::vector<double>{0.3, -0.7, 0.3, -0.7, 0.3, -0.7});
  auto b = node_attention_coeffs(t.constant(same), full, t.constant(random_tensor(rng, 4, 1)));
  for (double v : b.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(NodeAttention, HandSetLogits) {
  // d' = 1, a = [0, 1]: logit(i, j) = leaky(h_j) with h_j in {0, 1, 2}.
  Tape t;
  auto mp = hand_path(3, {{0, 1, 2}, {0, 1, 2}, {0, 1, 2}});
  auto a = node_attention_coeffs(t.constant(Tensor::column({0.0, 1.0, 2.0})), mp, t.constant(Tensor::column({0.0, 1.0})));
  EXPECT_NEAR(a.value()[0], 0.0900305731703805, 1e-12);
  EXPECT_NEAR(a.value()[1], 0.2447284710547976, 1e-12);
  EXPECT_NEAR(a.value()[2], 0.6652409557748219, 1e-12);
  EXPECT_THROW(node_attention_coeffs(t.constant(Tensor::column({0.0, 1.0, 2.0})), mp, t.constant(Tensor::column({1.0}))),
               ShapeError);
}

TEST(NodeAttention, RowsSumToOne) {
  std::mt19937_64 rng(4);
  auto mp = six_node_path();
  for (int rep = 0; rep < 20; ++rep) {
    Tape t;
    auto a = node_attention_coeffs(t.constant(random_tensor(rng, 6, 3)), mp, t.constant(random_tensor(rng, 6, 1))).value();
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k) s += a[k];
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
  }
}

// The literal variant normalizes over pairs (j, k), so its rows need not sum
// to 1; with identical features it still collapses to uniform weights.
TEST(NodeAttention, LiteralVariantUniformOnIdenticalFeatures) {
  auto mp = six_node_path();
  Tape t;
  AttentionOptions opt;
  opt.paper_literal = true;
  std::mt19937_64 rng(14);
  auto a = node_attention_coeffs(t.constant(Tensor(6, 3, 0.4)), mp, t.constant(random_tensor(rng, 6, 1)), opt).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double deg = static_cast<double>(mp.pattern->row_ptr[i + 1] - mp.pattern->row_ptr[i]);
    for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k) EXPECT_NEAR(a[k], 1.0 / deg, 1e-14);
  }
}

TEST(NodeAttention, LogPriorOfOnesIsNeutral) {
  std::mt19937_64 rng(5);
  auto mp = six_node_path();
  Tape t;
  auto h = t.constant(random_tensor(rng, 6, 3));
  auto att = t.constant(random_tensor(rng, 6, 1));
  auto zero = t.constant(Tensor(mp.nnz(), 1, 0.0));
  AttentionOptions opt;
  opt.log_weights = &zero;
  auto a = node_attention_coeffs(h, mp, att).value();
  auto b = node_attention_coeffs(h, mp, att, opt).value();
  for (std::size_t k = 0; k < mp.nnz(); ++k) EXPECT_NEAR(a[k], b[k], 1e-15);
}

// Relabeling the nodes permutes the coefficients and embeddings the same way.
TEST(NodeAttention, PermutationEquivariance) {
  std::mt19937_64 rng(6);
  auto mp = six_node_path();
  auto h = random_tensor(rng, 6, 3);
  auto att = random_tensor(rng, 6, 1);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};  // new id of old node i
  std::vector<std::vector<std::size_t>> rows(6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k)
      rows[perm[i]].push_back(perm[mp.pattern->col_idx[k]]);
    std::sort(rows[perm[i]].begin(), rows[perm[i]].end());
  }
  auto mq = hand_path(6, rows);
  Tensor hq(6, 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) hq(perm[i], c) = h(i, c);

  Tape t;
  auto hv = t.constant(h), hqv = t.constant(hq);
  auto a = node_attention_coeffs(hv, mp, t.constant(att));
  auto b = node_attention_coeffs(hqv, mq, t.constant(att));
  auto ea = aggregate(hv, a, mp).value();
  auto eb = aggregate(hqv, b, mq).value();
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(ea(i, c), eb(perm[i], c), 1e-14);
    for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k) {
      std::size_t j = perm[mp.pattern->col_idx[k]];
      std::size_t r = perm[i];
      for (std::size_t q = mq.pattern->row_ptr[r]; q < mq.pattern->row_ptr[r + 1]; ++q)
        if (mq.pattern->col_idx[q] == j) {
          EXPECT_NEAR(a.value()[k], b.value()[q], 1e-14);
        }
    }
  }
}

TEST(NodeAttention, GradientsBothVariants) {
  std::mt19937_64 rng(7);
  auto mp = six_node_path();
  auto h = random_tensor(rng, 6, 3), att = random_tensor(rng, 6, 1), prior = random_tensor(rng, mp.nnz(), 1);
  for (bool literal : {false, true}) {
    auto rep = ad::finite_diff_check(
        [&](Tape&, const std::vector<Var>& p) {
          AttentionOptions opt;
          opt.paper_literal = literal;
          opt.log_weights = &p[2];
          auto a = node_attention_coeffs(p[0], mp, p[1], opt);
          return ad::sum(ad::tanh(aggregate(p[0], a, mp)));
        },
        {{"h", h}, {"a", att}, {"prior", prior}});
    EXPECT_LT(rep.max_rel_err, 1e-6) << "literal=" << literal << " worst " << rep.worst_param;
  }
}

TEST(Aggregate, SelfOnlyAndDenseOracle) {
  std::mt19937_64 rng(8);
  Tape t;
  auto h = random_tensor(rng, 5, 2);
  auto self = hand_path(5, {{0}, {1}, {2}, {3}, {4}});
  auto out = aggregate(t.constant(h), t.constant(Tensor(5, 1, 1.0)), self).value();
  auto elu = [](double x) { return x > 0 ? x : std::expm1(x); };
  for (std::size_t k = 0; k < h.size(); ++k) EXPECT_NEAR(out[k], elu(h[k]), 1e-15);

  auto mp = hand_path(5, {{0, 2}, {1, 3, 4}, {0, 2}, {3}, {1, 2, 4}});
  auto coeff = random_tensor(rng, mp.nnz(), 1);
  auto got = aggregate(t.constant(h), t.constant(coeff), mp).value();
  oracle::Dense dense(5, std::vector<double>(5, 0.0)), dh(5, std::vector<double>(2));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k)
      dense[i][mp.pattern->col_idx[k]] = coeff[k];
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 2; ++c) dh[i][c] = h(i, c);
  auto ref = oracle::matmul(dense, dh);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(got(i, c), elu(ref[i][c]), 1e-14);
}

TEST(Semantic, ImportanceExamples) {
  std::mt19937_64 rng(9);
  Tape t;
  auto H = t.constant(random_tensor(rng, 4, 2));
  SemanticAttentionParams sem{t.constant(random_tensor(rng, 2, 2)), t.constant(random_tensor(rng, 1, 2)),
                              t.constant(random_tensor(rng, 2, 1))};
  auto w = metapath_importance({H, H}, sem);
  EXPECT_DOUBLE_EQ(w[0].value().item(), w[1].value().item());
  SemanticAttentionParams zero_q{sem.weight, sem.bias, t.constant(Tensor(2, 1, 0.0))};
  for (auto v : metapath_importance({H, H}, zero_q)) EXPECT_EQ(v.value().item(), 0.0);
  EXPECT_THROW(metapath_importance({}, sem), ConfigError);

  // Two 2x2 paths with W = I, b = 0, q = (1, -1): w = mean(tanh(h1) - tanh(h2)).
  Tensor h1(2, 2, std::vector<double>{0.5, 0.1, -0.2, 0.3}), h2(2, 2, std::vector<double>{1.0, 0.0, 0.0, 1.0});
  SemanticAttentionParams hand{t.constant(Tensor(2, 2, std::vector<double>{1, 0, 0, 1})), t.constant(Tensor(1, 2, 0.0)),
                               t.constant(Tensor::column({1.0, -1.0}))};
  auto ws = metapath_importance({t.constant(h1), t.constant(h2)}, hand);
  auto expect = [](const Tensor& h) {
    return ((std::tanh(h(0, 0)) - std::tanh(h(0, 1))) + (std::tanh(h(1, 0)) - std::tanh(h(1, 1)))) / 2.0;
  };
  EXPECT_NEAR(ws[0].value().item(), expect(h1), 1e-15);
  EXPECT_NEAR(ws[1].value().item(), expect(h2), 1e-15);
}

TEST(AttrSimilarity, Examples) {
  std::vector<double> xi{1, 2}, xj{3, 1}, u{0.5, 2};
  EXPECT_DOUBLE_EQ(attr_similarity(xi, xj, u), 5.5);
  std::vector<double> ones{1, 1};
  EXPECT_DOUBLE_EQ(attr_similarity(xi, xj, ones), 5.0);
  std::vector<double> a{1, 0, 1, 0}, b{0, 1, 0, 1}, u4{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(attr_similarity(a, b, u4), 0.0);
}

TEST(AttrSimilarity, PairProductsMatchScalar) {
  auto x = SparseMatrix::from_triplets(3, 3, {{0, 0, 1.0}, {0, 1, 2.0}, {1, 0, 3.0}, {1, 1, 1.0}, {2, 2, 4.0}});
  auto mp = hand_path(3, {{0, 1}, {0, 1, 2}, {1, 2}});
  auto prods = std::make_shared<const SparseMatrix>(pair_products(x, mp));
  Tensor u = Tensor::column({0.5, 2.0, 1.5});
  Tape t;
  auto s = attr_similarity(prods, t.constant(u)).value();
  auto dense = x.to_dense();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k) {
      std::size_t j = mp.pattern->col_idx[k];
      std::span<const double> xi(&dense[i * 3], 3), xj(&dense[j * 3], 3);
      EXPECT_NEAR(s[k], attr_similarity(xi, xj, u.data()), 1e-15);
    }
  EXPECT_NEAR(s[1], 5.5, 1e-15);
}

TEST(AttrCoeffs, Examples) {
  Tape t;
  auto mp = hand_path(3, {{0}, {0, 1}, {0, 1, 2}});
  auto g = attr_coeffs(t.constant(Tensor::column({4.0, 1.0, 3.0, 2.0, 2.0, 2.0})), mp).value();
  EXPECT_DOUBLE_EQ(g[0], 1.0);
  EXPECT_NEAR(g[1], 0.11920292202211755, 1e-12);
  EXPECT_NEAR(g[2], 0.8807970779778824, 1e-12);
  for (std::size_t k = 3; k < 6; ++k) EXPECT_NEAR(g[k], 1.0 / 3.0, 1e-15);
}

TEST(Balance, Examples) {
  auto [qs, qa] = balance_weights(0.4, 0.4);
  EXPECT_DOUBLE_EQ(qs, 0.5);
  EXPECT_DOUBLE_EQ(qa, 0.5);
  auto [qs3, qa3] = balance_weights(0.0, std::log(3.0));
  EXPECT_NEAR(qa3, 0.75, 1e-15);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> d(-50, 50);
  for (int rep = 0; rep < 100; ++rep) {
    auto [a, b] = balance_weights(d(rng), d(rng));
    EXPECT_EQ(a + b, 1.0);
  }
}

TEST(AttributeLevel, SingleAndSymmetricPaths) {
  Tape t;
  auto bal = t.constant(Tensor(1, 2, std::vector<double>{0.3, -0.1}));
  auto beta = attribute_level_coeffs({t.constant(Tensor::scalar(0.4))}, {t.constant(Tensor::scalar(-2.0))}, bal);
  EXPECT_DOUBLE_EQ(beta.value().item(), 1.0);

  auto bal2 = t.constant(Tensor(2, 2, std::vector<double>{0.3, -0.1, 0.3, -0.1}));
  auto g = t.constant(Tensor::scalar(0.2)), w = t.constant(Tensor::scalar(0.7));
  auto b2 = attribute_level_coeffs({g, g}, {w, w}, bal2).value();
  EXPECT_DOUBLE_EQ(b2[0], 0.5);
  EXPECT_DOUBLE_EQ(b2[1], 0.5);
  EXPECT_THROW(attribute_level_coeffs({g}, {w, w}, bal2), ShapeError);
}

TEST(AttributeLevel, GammaTermSkipsSelfPairs) {
  Tape t;
  auto mp = hand_path(2, {{0, 1}, {0, 1}});
  auto gamma = t.constant(Tensor::column({0.9, 0.1, 0.4, 0.6}));
  EXPECT_NEAR(gamma_term(gamma, mp).value().item(), (0.1 + 0.4) / 2.0, 1e-15);
  auto self = hand_path(2, {{0}, {1}});
  EXPECT_EQ(gamma_term(t.constant(Tensor::column({1.0, 1.0})), self).value().item(), 0.0);
}

TEST(Fuse, Examples) {
  Tape t;
  std::mt19937_64 rng(11);
  auto h0 = random_tensor(rng, 3, 2), h1 = random_tensor(rng, 3, 2);
  auto H0 = t.constant(h0), H1 = t.constant(h1);
  EXPECT_EQ(fuse(t.constant(Tensor::row({1.0})), {H0}).value(), h0);
  auto one_zero = fuse(t.constant(Tensor::row({1.0, 0.0})), {H0, H1}).value();
  for (std::size_t k = 0; k < h0.size(); ++k) EXPECT_DOUBLE_EQ(one_zero[k], h0[k]);
  auto mix = fuse(t.constant(Tensor::row({0.25, 0.75})), {H0, H1}).value();
  for (std::size_t k = 0; k < h0.size(); ++k) EXPECT_NEAR(mix[k], 0.25 * h0[k] + 0.75 * h1[k], 1e-15);
  EXPECT_THROW(fuse(t.constant(Tensor::row({0.5, 0.5})), {H0}), ShapeError);
}
