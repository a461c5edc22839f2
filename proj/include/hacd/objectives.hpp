#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "hacd/diffmath.hpp"
#include "hacd/graph.hpp"
#include "hacd/rng.hpp"

namespace hacd {

/// Hard partition: one community id in [0, k) per entity.
class CommunityAssignment {
 public:
  CommunityAssignment() = default;
  CommunityAssignment(std::vector<int> labels, int k) : labels_(std::move(labels)), k_(k) {
    if (k_ < 1) throw ValidationError("community count must be >= 1");
    for (int c : labels_) {
      if (c < 0 || c >= k_) throw ValidationError("community id " + std::to_string(c) + " outside [0, k)");
    }
  }
  // k inferred as max id + 1.
  explicit CommunityAssignment(std::vector<int> labels)
      : CommunityAssignment(labels, labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1) {}

  const std::vector<int>& labels() const noexcept { return labels_; }
  int k() const noexcept { return k_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int operator[](std::size_t i) const { return labels_[i]; }

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> m(static_cast<std::size_t>(k_));
    for (std::size_t i = 0; i < labels_.size(); ++i) m[static_cast<std::size_t>(labels_[i])].push_back(i);
    return m;
  }

  friend bool operator==(const CommunityAssignment&, const CommunityAssignment&) = default;

 private:
  std::vector<int> labels_;
  int k_ = 1;
};

/// Newman modularity of a hard partition on the unweighted EE graph,
/// Q = (1/2M) sum_ij (A_ij - k_i k_j / 2M) delta(c_i, c_j), evaluated per
/// community as sum_c [ L_c / M - (D_c / 2M)^2 ].
inline double classic_modularity(const AttributedGraph& g, const CommunityAssignment& c) {
  if (c.size() != g.n_nodes()) throw ValidationError("classic_modularity: assignment does not cover all nodes");
  if (g.n_edges() == 0) throw ValidationError("classic_modularity: graph has no edges");
  const double m = static_cast<double>(g.n_edges());
  std::vector<double> internal(static_cast<std::size_t>(c.k()), 0.0), degree(static_cast<std::size_t>(c.k()), 0.0);
  for (const auto& e : g.edges()) {
    auto cu = static_cast<std::size_t>(c[e.u]), cv = static_cast<std::size_t>(c[e.v]);
    degree[cu] += 1.0;
    degree[cv] += 1.0;
    if (cu == cv) internal[cu] += 1.0;
  }
  double q = 0.0;
  for (std::size_t k = 0; k < internal.size(); ++k) {
    double f = degree[k] / (2.0 * m);
    q += internal[k] / m - f * f;
  }
  return q;
}

/// Higher-order proximity and its null model: A~, k~ (row sums of A~),
/// M~ = half the total weight, P~ = A~ - k~ k~^T / 2M~ (materialized on request).
struct ModularityContext {
  SparseMatrix a_tilde;
  std::vector<double> k_tilde;
  double m_tilde = 0.0;

  std::size_t n() const { return k_tilde.size(); }

  Tensor p_tilde() const {
    const std::size_t n = k_tilde.size();
    Tensor p(n, n, a_tilde.to_dense());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) p(i, j) -= k_tilde[i] * k_tilde[j] / (2.0 * m_tilde);
    return p;
  }
};

inline ModularityContext make_modularity_context(SparseMatrix a_tilde) {
  ModularityContext ctx;
  ctx.k_tilde = a_tilde.row_sums();
  double total = 0.0;
  for (double v : ctx.k_tilde) total += v;
  if (!(total > 0.0)) throw ValidationError("modularity context: proximity matrix has no weight");
  ctx.m_tilde = total / 2.0;
  ctx.a_tilde = std::move(a_tilde);
  return ctx;
}

/// A~ = sum_{t=1..T} decay^(t-1) A^t with the diagonal zeroed.
inline ModularityContext higher_order_adjacency(const AttributedGraph& g, std::size_t order, double decay) {
  if (order < 1) throw ConfigError("higher_order_adjacency: order must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("higher_order_adjacency: decay must lie in (0, 1]");
  const SparseMatrix a = g.adjacency();
  SparseMatrix power = a;
  SparseMatrix acc = a;
  double w = 1.0;
  for (std::size_t t = 2; t <= order; ++t) {
    power = multiply(power, a);
    w *= decay;
    acc = acc + power.scaled(w);
  }
  std::vector<Triplet> off;
  for (const auto& t : acc.triplets())
    if (t.row != t.col) off.push_back(t);
  return make_modularity_context(SparseMatrix::from_triplets(acc.rows(), acc.cols(), std::move(off)));
}

/// Q~ = tr(B^T P~ B) / 2M~ with P~ B formed as A~ B - k~ (k~^T B) / 2M~.
inline ad::Var generalized_modularity(ad::Var membership, const ModularityContext& ctx,
                                      std::shared_ptr<const SparseMatrix> a_tilde = nullptr) {
  if (membership.rows() != ctx.n()) {
    throw ShapeError("generalized_modularity: membership " + membership.value().shape_string() + " for " +
                     std::to_string(ctx.n()) + " nodes");
  }
  ad::Tape& tape = *membership.tape;
  if (!a_tilde) a_tilde = std::make_shared<const SparseMatrix>(ctx.a_tilde);
  ad::Var k_col = tape.constant(Tensor::column(ctx.k_tilde));
  ad::Var k_row = tape.constant(Tensor::row(ctx.k_tilde));
  const double inv2m = 1.0 / (2.0 * ctx.m_tilde);
  ad::Var null_term = ad::scale(ad::matmul(k_col, ad::matmul(k_row, membership)), inv2m);
  ad::Var pb = ad::sub(ad::spmm(std::move(a_tilde), membership), null_term);
  return ad::scale(ad::trace(ad::matmul(ad::transpose(membership), pb)), inv2m);
}

inline double generalized_modularity(const Tensor& membership, const ModularityContext& ctx) {
  ad::Tape tape;
  return generalized_modularity(tape.constant(membership), ctx).value().item();
}

/// L_M = -Q~.
inline ad::Var cmf_loss(ad::Var membership, const ModularityContext& ctx,
                        std::shared_ptr<const SparseMatrix> a_tilde = nullptr) {
  return ad::scale(generalized_modularity(membership, ctx, std::move(a_tilde)), -1.0);
}

// ---------------------------------------------------------------------------
// Attribute cohesiveness (contrastive) terms

struct NodePairs {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::size_t size() const { return first.size(); }
};

/// Uniform draws (with replacement) from all unordered same-community pairs:
/// a community is chosen with probability proportional to C(size, 2), then
/// two distinct members uniformly.
inline NodePairs sample_intra_pairs(const CommunityAssignment& c, std::size_t budget, Rng& rng) {
  if (budget < 1) throw ConfigError("pair budget must be >= 1");
  auto members = c.members();
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& m : members) {
    double s = static_cast<double>(m.size());
    total += s * (s - 1.0) / 2.0;
    cum.push_back(total);
  }
  NodePairs out;
  if (total <= 0.0) return out;
  for (std::size_t q = 0; q < budget; ++q) {
    double r = rng.uniform() * total;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), r) - cum.begin());
    k = std::min(k, members.size() - 1);
    const auto& m = members[k];
    std::size_t a = rng.below(m.size());
    std::size_t b = rng.below(m.size() - 1);
    if (b >= a) ++b;
    out.first.push_back(m[a]);
    out.second.push_back(m[b]);
  }
  return out;
}

/// Uniform draws from ordered cross-community node pairs (rejection).
inline NodePairs sample_inter_pairs(const CommunityAssignment& c, std::size_t budget, Rng& rng) {
  if (budget < 1) throw ConfigError("pair budget must be >= 1");
  NodePairs out;
  std::set<int> used(c.labels().begin(), c.labels().end());
  if (used.size() < 2) return out;
  const std::size_t n = c.size();
  while (out.size() < budget) {
    std::size_t i = rng.below(n), j = rng.below(n);
    if (c[i] == c[j]) continue;
    out.first.push_back(i);
    out.second.push_back(j);
  }
  return out;
}

/// Literal cut-edge reading: uniform draws from EE edges whose endpoints
/// fall in different communities.
inline NodePairs sample_cut_edge_pairs(const AttributedGraph& g, const CommunityAssignment& c, std::size_t budget,
                                       Rng& rng) {
  if (budget < 1) throw ConfigError("pair budget must be >= 1");
  std::vector<Edge> cut;
  for (const auto& e : g.edges())
    if (c[e.u] != c[e.v]) cut.push_back(e);
  NodePairs out;
  if (cut.empty()) return out;
  for (std::size_t q = 0; q < budget; ++q) {
    const auto& e = cut[rng.below(cut.size())];
    out.first.push_back(e.u);
    out.second.push_back(e.v);
  }
  return out;
}

struct PairLoss {
  ad::Var value;            // 1 x 1
  bool degenerate = false;  // no pairs available; value is 0
};

/// Mean squared Euclidean distance between L2-normalized embedding rows.
inline PairLoss pair_distance_loss(ad::Var embedding, const NodePairs& pairs) {
  ad::Tape& tape = *embedding.tape;
  if (pairs.size() == 0) return {tape.constant(Tensor::scalar(0.0)), true};
  ad::Var hn = ad::l2_normalize_rows(embedding);
  ad::Var diff = ad::sub(ad::gather_rows(hn, pairs.first), ad::gather_rows(hn, pairs.second));
  ad::Var per = ad::hadamard(diff, diff);
  return {ad::scale(ad::sum(per), 1.0 / static_cast<double>(pairs.size())), false};
}

inline PairLoss intra_loss(ad::Var embedding, const CommunityAssignment& c, std::size_t budget, Rng& rng) {
  return pair_distance_loss(embedding, sample_intra_pairs(c, budget, rng));
}

inline PairLoss inter_loss(ad::Var embedding, const CommunityAssignment& c, std::size_t budget, Rng& rng) {
  return pair_distance_loss(embedding, sample_inter_pairs(c, budget, rng));
}

/// L_A = r1 L_intra - r2 L_inter.
inline ad::Var attribute_cohesiveness_loss(ad::Var intra, ad::Var inter, double r1, double r2) {
  return ad::sub(ad::scale(intra, r1), ad::scale(inter, r2));
}

inline double attribute_cohesiveness_loss(double intra, double inter, double r1, double r2) {
  return r1 * intra - r2 * inter;
}

/// Total objective L = L_M + lambda L_A.
inline ad::Var total_loss(ad::Var l_m, ad::Var l_a, double lambda) { return ad::add(l_m, ad::scale(l_a, lambda)); }

inline double total_loss(double l_m, double l_a, double lambda) { return l_m + lambda * l_a; }

// ---------------------------------------------------------------------------
// Ascore

struct AttributeRecord {
  std::vector<double> numeric;
  std::set<std::string> text;
};

struct AscoreParams {
  double alpha = 0.5;
  double sdist_max = 1.0;
  double tdist_max = 1.0;
};

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ValidationError("ascore: numeric dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

// 1 - |A n B| / |A u B|; two empty sets are at distance 0.
inline double jaccard_distance(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  std::size_t uni = a.size() + b.size() - inter;
  if (uni == 0) return 0.0;
  return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

/// alpha * Sdist / Sdist_max + (1 - alpha) * Tdist / Tdist_max, in [0, 1]
/// when the maxima are dataset-wide.
inline double ascore(const AttributeRecord& u, const AttributeRecord& v, const AscoreParams& p) {
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) throw ConfigError("ascore: alpha must lie in [0, 1]");
  double score = 0.0;
  if (p.alpha > 0.0) {
    if (!(p.sdist_max > 0.0)) throw ConfigError("ascore: Sdist_max must be > 0");
    score += p.alpha * euclidean_distance(u.numeric, v.numeric) / p.sdist_max;
  }
  if (p.alpha < 1.0) {
    if (!(p.tdist_max > 0.0)) throw ConfigError("ascore: Tdist_max must be > 0");
    score += (1.0 - p.alpha) * jaccard_distance(u.text, v.text) / p.tdist_max;
  }
  return score;
}

/// Dataset-global maxima of both distances over all record pairs.
inline AscoreParams ascore_maxima(const std::vector<AttributeRecord>& records, double alpha) {
  AscoreParams p{alpha, 0.0, 0.0};
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      p.sdist_max = std::max(p.sdist_max, euclidean_distance(records[i].numeric, records[j].numeric));
      p.tdist_max = std::max(p.tdist_max, jaccard_distance(records[i].text, records[j].text));
    }
  return p;
}

}  // namespace hacd
