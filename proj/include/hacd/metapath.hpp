#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <utility>
#include <vector>

#include "hacd/diffmath.hpp"
#include "hacd/graph.hpp"

namespace hacd {

/// One heterogeneous convolution layer: a free logit per edge type, turned
/// into non-negative weights that sum to 1 by a softmax.
struct HeteroConvLayer {
  std::vector<EdgeType> types{EdgeType::EE, EdgeType::EA, EdgeType::AE};
  std::vector<double> logits{0.0, 0.0, 0.0};

  std::vector<double> weights() const {
    if (types.empty() || logits.size() != types.size()) throw ConfigError("hetero conv layer: empty or mismatched edge types");
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> w(logits.size());
    double z = 0.0;
    for (std::size_t e = 0; e < w.size(); ++e) z += (w[e] = std::exp(logits[e] - mx));
    for (auto& v : w) v /= z;
    return w;
  }

  double weight(EdgeType t) const {
    auto w = weights();
    for (std::size_t e = 0; e < types.size(); ++e)
      if (types[e] == t) return w[e];
    return 0.0;
  }
};

/// A_conv = sum_e alpha_e A_e over the layer's edge types, in the full node
/// index space.
inline SparseMatrix hetero_convolve(const HeteroConvLayer& layer, const HeteroGraph& hetero) {
  if (layer.types.empty()) throw ConfigError("hetero_convolve: empty edge-type set");
  auto w = layer.weights();
  SparseMatrix acc(hetero.node_count(), hetero.node_count());
  for (std::size_t e = 0; e < layer.types.size(); ++e) acc = acc + hetero.type_adjacency(layer.types[e]).scaled(w[e]);
  return acc;
}

// Sequence of edge types whose node-type chain runs Entity -> ... -> Entity.
using TypeSequence = std::vector<EdgeType>;

/// Neighbor structure of one meta-path over the entity nodes.
///
/// Each stored entry (i, j) carries its composed weight and the split of
/// that weight over type sequences, so the weight can be re-evaluated
/// differentiably from the layer logits:
///   weight = components * coef(sequences) + self_extra.
struct MetaPathGraph {
  std::size_t path_id = 0;
  std::size_t entity_count = 0;
  std::shared_ptr<const ad::RowPattern> pattern;
  std::vector<double> weights;
  std::vector<TypeSequence> sequences;
  Tensor components;               // nnz x |sequences|
  std::vector<double> self_extra;  // 1 on the diagonal, 0 elsewhere
  std::vector<std::size_t> provenance;

  std::size_t nnz() const { return pattern->nnz(); }
};

/// Stable (by node id) weighted neighbor list of entity i.
inline std::vector<std::pair<std::size_t, double>> metapath_neighbors(const MetaPathGraph& mp, std::size_t i) {
  if (i >= mp.entity_count) {
    throw ValidationError("metapath_neighbors: node " + std::to_string(i) + " out of range");
  }
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k) {
    out.emplace_back(mp.pattern->col_idx[k], mp.weights[k]);
  }
  return out;
}

/// Precomputes, for every prefix length l = 1..L, the entity-entity product
/// of typed blocks for each valid type sequence. Only the per-layer edge
/// type weights change between epochs, so compose() re-weights and
/// re-sparsifies without redoing sparse products.
class MetaPathComposer {
 public:
  MetaPathComposer(const HeteroGraph& hetero, std::size_t layers) : n_(hetero.entity_count()) {
    if (layers < 1) throw ConfigError("compose_metapaths: need at least one layer");
    struct Prefix {
      TypeSequence seq;
      SparseMatrix product;  // n x (n or a)
    };
    std::vector<Prefix> frontier;
    for (EdgeType t : {EdgeType::EE, EdgeType::EA}) {
      if (hetero.block(t).nnz() > 0 || t == EdgeType::EE) frontier.push_back({{t}, hetero.block(t)});
    }
    for (std::size_t l = 1; l <= layers; ++l) {
      Level level;
      for (const auto& p : frontier) {
        if (target_type(p.seq.back()) == NodeType::Entity && p.product.nnz() > 0) {
          level.sequences.push_back(p.seq);
          level.blocks.push_back(p.product);
        }
      }
      levels_.push_back(std::move(level));
      if (l == layers) break;
      std::vector<Prefix> next;
      for (const auto& p : frontier) {
        NodeType at = target_type(p.seq.back());
        for (EdgeType t : kEdgeTypes) {
          if (source_type(t) != at) continue;
          if (hetero.block(t).nnz() == 0) continue;
          auto seq = p.seq;
          seq.push_back(t);
          next.push_back({std::move(seq), multiply(p.product, hetero.block(t))});
        }
      }
      frontier = std::move(next);
    }
  }

  std::size_t layers() const { return levels_.size(); }

  // Coefficient of a type sequence: product over layers of that layer's
  // weight for the sequence's edge type at the same position.
  static double sequence_coefficient(const TypeSequence& seq, const std::vector<HeteroConvLayer>& layers) {
    double c = 1.0;
    for (std::size_t l = 0; l < seq.size(); ++l) c *= layers[l].weight(seq[l]);
    return c;
  }

  // Dense entity-entity weight matrix of meta-path l (1-based) before
  // sparsification and without the forced diagonal.
  std::vector<double> dense_product(std::size_t l, const std::vector<HeteroConvLayer>& layers) const {
    const Level& lv = levels_.at(l - 1);
    std::vector<double> d(n_ * n_, 0.0);
    for (std::size_t s = 0; s < lv.sequences.size(); ++s) {
      double c = sequence_coefficient(lv.sequences[s], layers);
      for (const auto& t : lv.blocks[s].triplets()) d[t.row * n_ + t.col] += c * t.value;
    }
    return d;
  }

  std::vector<MetaPathGraph> compose(const std::vector<HeteroConvLayer>& layers, std::size_t top_k) const {
    if (top_k == 0) throw ConfigError("compose_metapaths: top_k must be >= 1");
    if (layers.size() != levels_.size()) throw ConfigError("compose_metapaths: layer count mismatch");
    std::vector<MetaPathGraph> out;
    for (std::size_t l = 0; l < levels_.size(); ++l) out.push_back(compose_level(l, layers, top_k));
    return out;
  }

 private:
  struct Level {
    std::vector<TypeSequence> sequences;
    std::vector<SparseMatrix> blocks;
  };

  MetaPathGraph compose_level(std::size_t l, const std::vector<HeteroConvLayer>& layers, std::size_t top_k) const {
    const Level& lv = levels_[l];
    const std::size_t S = lv.sequences.size();
    std::vector<double> coef(S);
    for (std::size_t s = 0; s < S; ++s) coef[s] = sequence_coefficient(lv.sequences[s], layers);

    MetaPathGraph mp;
    mp.path_id = l;
    mp.entity_count = n_;
    mp.sequences = lv.sequences;
    for (std::size_t q = 0; q <= l; ++q) mp.provenance.push_back(q);

    auto pat = std::make_shared<ad::RowPattern>();
    pat->rows = pat->cols = n_;
    std::vector<double> comp_rows;  // flattened nnz x S

    std::vector<double> acc(n_ * std::max<std::size_t>(S, 1), 0.0);
    std::vector<char> touched(n_, 0);
    std::vector<std::size_t> cand;
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t i = 0; i < n_; ++i) {
      cand.clear();
      for (std::size_t s = 0; s < S; ++s) {
        auto cols = lv.blocks[s].row_cols(i);
        auto vals = lv.blocks[s].row_values(i);
        for (std::size_t k = 0; k < cols.size(); ++k) {
          if (!touched[cols[k]]) {
            touched[cols[k]] = 1;
            cand.push_back(cols[k]);
          }
          acc[cols[k] * S + s] = vals[k];
        }
      }
      ranked.clear();
      for (auto j : cand) {
        if (j == i) continue;
        double w = 0.0;
        for (std::size_t s = 0; s < S; ++s) w += coef[s] * acc[j * S + s];
        if (w > 0.0) ranked.emplace_back(w, j);
      }
      std::size_t keep = std::min(top_k, ranked.size());
      std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
      std::vector<std::size_t> kept;
      kept.reserve(keep + 1);
      for (std::size_t q = 0; q < keep; ++q) kept.push_back(ranked[q].second);
      kept.push_back(i);
      std::sort(kept.begin(), kept.end());
      for (auto j : kept) {
        pat->col_idx.push_back(j);
        double w = j == i ? 1.0 : 0.0;
        mp.self_extra.push_back(w);
        for (std::size_t s = 0; s < S; ++s) {
          double v = touched[j] ? acc[j * S + s] : 0.0;
          comp_rows.push_back(v);
          w += coef[s] * v;
        }
        mp.weights.push_back(w);
      }
      pat->row_ptr.push_back(pat->col_idx.size());
      for (auto j : cand) {
        touched[j] = 0;
        for (std::size_t s = 0; s < S; ++s) acc[j * S + s] = 0.0;
      }
    }
    mp.components = Tensor(pat->nnz(), S, std::move(comp_rows));
    mp.pattern = std::move(pat);
    return mp;
  }

  std::size_t n_;
  std::vector<Level> levels_;
};

/// Meta-path p_l for l = 1..L: the entity-entity block of
/// A_conv(1) ... A_conv(l), diagonal forced present, each row cut to its
/// top_k heaviest off-diagonal entries.
inline std::vector<MetaPathGraph> compose_metapaths(const std::vector<HeteroConvLayer>& layers,
                                                    const HeteroGraph& hetero, std::size_t top_k) {
  if (layers.empty()) throw ConfigError("compose_metapaths: need at least one layer");
  return MetaPathComposer(hetero, layers.size()).compose(layers, top_k);
}

/// Differentiable composed weights of the stored entries of mp, given the
/// L x 3 matrix of edge-type logits (columns EE, EA, AE). Returns nnz x 1.
inline ad::Var metapath_weights(const MetaPathGraph& mp, ad::Var type_logits) {
  ad::Tape& tape = *type_logits.tape;
  ad::Var probs = ad::row_softmax(type_logits);  // L x 3
  const std::size_t S = mp.sequences.size();
  if (S == 0) return tape.constant(Tensor::column(mp.self_extra));
  // Flatten probs to a column so each (layer, type) is one row index.
  ad::Var flat = ad::transpose(probs);  // 3 x L, entry (t, l)
  const std::size_t L = type_logits.value().rows();
  std::vector<ad::Var> coefs;
  for (const auto& seq : mp.sequences) {
    ad::Var c;
    for (std::size_t l = 0; l < seq.size(); ++l) {
      auto t = static_cast<std::size_t>(seq[l]);
      std::vector<double> pick(L, 0.0);
      pick[l] = 1.0;
      ad::Var entry = ad::matmul(ad::gather_rows(flat, {t}), tape.constant(Tensor::column(pick)));  // 1 x 1
      c = l == 0 ? entry : ad::hadamard(c, entry);
    }
    coefs.push_back(c);
  }
  ad::Var coef_row = ad::concat_cols(coefs);  // 1 x S
  ad::Var comps = tape.constant(mp.components);
  ad::Var w = ad::matmul(comps, ad::transpose(coef_row));
  return ad::add(w, tape.constant(Tensor::column(mp.self_extra)));
}

}  // namespace hacd
