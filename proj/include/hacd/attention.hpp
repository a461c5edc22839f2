#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "hacd/diffmath.hpp"
#include "hacd/graph.hpp"
#include "hacd/metapath.hpp"

namespace hacd {

// Per-type projections into the shared d' space and one attention vector
// (length 2d') per meta-path.
struct NodeAttentionParams {
  ad::Var entity_proj;                // d_in x d'
  ad::Var attribute_proj;             // a x d' (row k projects the one-hot of attribute node k)
  std::vector<ad::Var> path_attention;  // 2d' x 1 each
};

struct SemanticAttentionParams {
  ad::Var weight;  // d' x d'
  ad::Var bias;    // 1 x d'
  ad::Var query;   // d' x 1
};

struct A2MParams {
  ad::Var feature_weight_raw;  // d x 1, effective u = softplus(raw) >= 0
  ad::Var balance_logits;      // P x 2, columns (l_s, l_a)
};

struct ProjectedFeatures {
  ad::Var entity;     // n x d'
  ad::Var attribute;  // a x d'
};

/// h' for every node of the heterogeneous graph: entity rows are the entity
/// features times the entity projection, attribute rows are their one-hot
/// times the attribute projection (that is, the projection's rows).
inline ProjectedFeatures project_features(const HeteroGraph& hetero, ad::Var entity_features,
                                          const NodeAttentionParams& params) {
  if (params.entity_proj.tape == nullptr) throw ConfigError("project_features: missing entity projection");
  if (hetero.attribute_count() > 0 && params.attribute_proj.tape == nullptr) {
    throw ConfigError("project_features: missing attribute projection");
  }
  if (entity_features.rows() != hetero.entity_count()) {
    throw ShapeError("project_features: entity features have " + std::to_string(entity_features.rows()) + " rows, graph has " +
                     std::to_string(hetero.entity_count()) + " entities");
  }
  if (params.attribute_proj.rows() != hetero.attribute_count()) {
    throw ShapeError("project_features: attribute projection rows != attribute nodes");
  }
  return {ad::matmul(entity_features, params.entity_proj), params.attribute_proj};
}

// Row-normalized EA block: each entity averages its attribute nodes.
inline SparseMatrix attribute_mixing(const HeteroGraph& hetero) {
  const SparseMatrix& ea = hetero.block(EdgeType::EA);
  auto sums = ea.row_sums();
  std::vector<Triplet> t;
  for (const auto& x : ea.triplets()) t.push_back({x.row, x.col, x.value / sums[x.row]});
  return SparseMatrix::from_triplets(ea.rows(), ea.cols(), std::move(t));
}

/// Entity inputs to node-level attention: the entity's own projection plus
/// the mean projection of its attribute nodes (one EA hop).
inline ad::Var entity_inputs(const ProjectedFeatures& h, std::shared_ptr<const SparseMatrix> mixing) {
  return ad::add(h.entity, ad::spmm(std::move(mixing), h.attribute));
}

struct AttentionOptions {
  double slope = 0.2;
  // Literal denominator: sum over k in N_i of exp(sigma(a^T [h_j || h_k])).
  bool paper_literal = false;
  // Optional per-entry log prior added to the logits (log of composed
  // meta-path weights). Unit weights reduce to plain attention.
  const ad::Var* log_weights = nullptr;
};

/// alpha_ij over j in N_i: softmax of leaky_relu(a^T [h_i || h_j]).
/// Returns one coefficient per stored entry of the meta-path pattern.
inline ad::Var node_attention_coeffs(ad::Var h, const MetaPathGraph& mp, ad::Var attention,
                                     const AttentionOptions& opt = {}) {
  ad::Tape& tape = *h.tape;
  const std::size_t dim = h.cols();
  if (attention.rows() != 2 * dim || attention.cols() != 1) {
    throw ShapeError("node_attention_coeffs: attention vector " + attention.value().shape_string() + " for d'=" +
                     std::to_string(dim));
  }
  std::vector<std::size_t> top(dim), bottom(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    top[c] = c;
    bottom[c] = dim + c;
  }
  ad::Var src = ad::matmul(h, ad::gather_rows(attention, top));     // n x 1
  ad::Var dst = ad::matmul(h, ad::gather_rows(attention, bottom));  // n x 1
  const auto& pat = *mp.pattern;
  auto rows = pat.entry_rows();

  if (!opt.paper_literal) {
    ad::Var e = ad::leaky_relu(ad::add(ad::gather_rows(src, rows), ad::gather_rows(dst, pat.col_idx)), opt.slope);
    if (opt.log_weights) e = ad::add(e, *opt.log_weights);
    return ad::segment_softmax(e, mp.pattern);
  }

  // Literal form: numerator from (i, j), denominator over k in N_i of (j, k).
  std::vector<std::size_t> t_src, t_dst, t_seg, t_wk;
  for (std::size_t i = 0; i < pat.rows; ++i) {
    for (std::size_t e = pat.row_ptr[i]; e < pat.row_ptr[i + 1]; ++e) {
      for (std::size_t k = pat.row_ptr[i]; k < pat.row_ptr[i + 1]; ++k) {
        t_src.push_back(pat.col_idx[e]);
        t_dst.push_back(pat.col_idx[k]);
        t_seg.push_back(e);
        t_wk.push_back(k);
      }
    }
  }
  ad::Var num = ad::leaky_relu(ad::add(ad::gather_rows(src, rows), ad::gather_rows(dst, pat.col_idx)), opt.slope);
  ad::Var den_terms = ad::leaky_relu(ad::add(ad::gather_rows(src, t_src), ad::gather_rows(dst, t_dst)), opt.slope);
  if (opt.log_weights) {
    num = ad::add(num, *opt.log_weights);
    den_terms = ad::add(den_terms, ad::gather_rows(*opt.log_weights, t_wk));
  }
  ad::Var den = ad::segment_sum(ad::exp(den_terms), t_seg, pat.nnz());
  (void)tape;
  return ad::exp(ad::sub(num, ad::log(den)));
}

/// H_p[i] = elu(sum_j alpha_ij h_j).
inline ad::Var aggregate(ad::Var h, ad::Var coeffs, const MetaPathGraph& mp) {
  return ad::elu(ad::spmm_pattern(mp.pattern, coeffs, h));
}

/// w_p = mean over entities of q^T tanh(W h_i^p + b), one 1 x 1 per path.
inline std::vector<ad::Var> metapath_importance(const std::vector<ad::Var>& embeddings,
                                                const SemanticAttentionParams& sem) {
  if (embeddings.empty()) throw ConfigError("metapath_importance: no meta-paths");
  std::vector<ad::Var> out;
  for (auto H : embeddings) {
    ad::Var z = ad::tanh(ad::add(ad::matmul(H, sem.weight), sem.bias));
    out.push_back(ad::mean(ad::matmul(z, sem.query)));
  }
  return out;
}

/// Constant nnz x d matrix with row (i, j) = x_i (elementwise) x_j, so that
/// s = pair_products * u gives s_ij = (x_i . u)^T x_j for every stored pair.
inline SparseMatrix pair_products(const SparseMatrix& features, const MetaPathGraph& mp) {
  const auto& pat = *mp.pattern;
  std::vector<Triplet> t;
  for (std::size_t i = 0; i < pat.rows; ++i) {
    auto ci = features.row_cols(i);
    auto vi = features.row_values(i);
    for (std::size_t e = pat.row_ptr[i]; e < pat.row_ptr[i + 1]; ++e) {
      std::size_t j = pat.col_idx[e];
      auto cj = features.row_cols(j);
      auto vj = features.row_values(j);
      std::size_t a = 0, b = 0;
      while (a < ci.size() && b < cj.size()) {
        if (ci[a] < cj[b]) {
          ++a;
        } else if (cj[b] < ci[a]) {
          ++b;
        } else {
          t.push_back({e, ci[a], vi[a] * vj[b]});
          ++a;
          ++b;
        }
      }
    }
  }
  return SparseMatrix::from_triplets(pat.nnz(), features.cols(), std::move(t));
}

// s_ij for one pair, for reference use.
inline double attr_similarity(std::span<const double> xi, std::span<const double> xj, std::span<const double> u) {
  double s = 0.0;
  for (std::size_t f = 0; f < xi.size(); ++f) s += xi[f] * u[f] * xj[f];
  return s;
}

/// Attention-based similarity for every stored meta-path pair; u is the
/// effective (non-negative) d x 1 weight vector.
inline ad::Var attr_similarity(std::shared_ptr<const SparseMatrix> products, ad::Var u) {
  return ad::spmm(std::move(products), u);
}

/// gamma_ij: softmax of s_ij over j in N_i.
inline ad::Var attr_coeffs(ad::Var similarity, const MetaPathGraph& mp) {
  return ad::segment_softmax(similarity, mp.pattern);
}

// (q_s, q_a) from (l_s, l_a).
inline std::pair<double, double> balance_weights(double l_s, double l_a) {
  double m = std::max(l_s, l_a);
  double es = std::exp(l_s - m), ea = std::exp(l_a - m);
  double qs = es / (es + ea);
  return {qs, 1.0 - qs};
}

// P x 2 logits -> P x 2 (q_s, q_a) rows.
inline ad::Var balance_weights(ad::Var logits) { return ad::row_softmax(logits); }

/// Mean of gamma over the meta-path's neighbor pairs (i, j), j != i. The
/// forced self entries are not pairs of the path. 1 x 1; a path whose rows
/// hold only self entries contributes 0.
inline ad::Var gamma_term(ad::Var gamma, const MetaPathGraph& mp) {
  if (mp.nnz() == 0) throw ValidationError("attribute_level_coeffs: meta-path has no pairs");
  const auto& pat = *mp.pattern;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pat.rows; ++i)
    for (std::size_t e = pat.row_ptr[i]; e < pat.row_ptr[i + 1]; ++e)
      if (pat.col_idx[e] != i) idx.push_back(e);
  if (idx.empty()) return ad::scale(ad::sum(gamma), 0.0);
  return ad::mean(ad::gather_rows(gamma, std::move(idx)));
}

/// raw beta_p = q_a^p * gamma_term_p + q_s^p * w_p, then a softmax across
/// paths. Returns 1 x P.
inline ad::Var attribute_level_coeffs(const std::vector<ad::Var>& gamma_terms, const std::vector<ad::Var>& importance,
                                      ad::Var balance) {
  if (gamma_terms.size() != importance.size() || balance.rows() != importance.size() || balance.cols() != 2) {
    throw ShapeError("attribute_level_coeffs: inconsistent per-path inputs");
  }
  ad::Tape& tape = *balance.tape;
  ad::Var pick_s = tape.constant(Tensor::column({1.0, 0.0}));
  ad::Var pick_a = tape.constant(Tensor::column({0.0, 1.0}));
  std::vector<ad::Var> raw;
  for (std::size_t p = 0; p < importance.size(); ++p) {
    ad::Var row = ad::gather_rows(balance, {p});
    ad::Var qs = ad::matmul(row, pick_s);
    ad::Var qa = ad::matmul(row, pick_a);
    raw.push_back(ad::add(ad::hadamard(qa, gamma_terms[p]), ad::hadamard(qs, importance[p])));
  }
  return ad::row_softmax(ad::concat_cols(raw));
}

/// H = sum_p beta_p H_p.
inline ad::Var fuse(ad::Var beta, const std::vector<ad::Var>& embeddings) {
  if (beta.cols() != embeddings.size() || beta.rows() != 1) throw ShapeError("fuse: beta/embedding count mismatch");
  ad::Tape& tape = *beta.tape;
  ad::Var acc;
  for (std::size_t p = 0; p < embeddings.size(); ++p) {
    std::vector<double> pick(embeddings.size(), 0.0);
    pick[p] = 1.0;
    ad::Var bp = ad::matmul(beta, tape.constant(Tensor::column(pick)));
    ad::Var term = ad::hadamard(embeddings[p], bp);
    acc = p == 0 ? term : ad::add(acc, term);
  }
  return acc;
}

}  // namespace hacd
