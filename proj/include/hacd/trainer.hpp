#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hacd/attention.hpp"
#include "hacd/diffmath.hpp"
#include "hacd/error.hpp"
#include "hacd/graph.hpp"
#include "hacd/kmeans.hpp"
#include "hacd/metapath.hpp"
#include "hacd/objectives.hpp"
#include "hacd/rng.hpp"

namespace hacd {

enum class LossMode { Full, A2M, CMF };
enum class InitMode { Labels, KMeans, Random };

inline const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::Full: return "full";
    case LossMode::A2M: return "a2m";
    case LossMode::CMF: return "cmf";
  }
  return "?";
}

inline const char* to_string(InitMode m) {
  switch (m) {
    case InitMode::Labels: return "labels";
    case InitMode::KMeans: return "kmeans";
    case InitMode::Random: return "random";
  }
  return "?";
}

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "full") return LossMode::Full;
  if (s == "a2m") return LossMode::A2M;
  if (s == "cmf") return LossMode::CMF;
  throw ConfigError("unknown loss mode '" + s + "' (expected full, a2m or cmf)");
}

inline InitMode parse_init_mode(const std::string& s) {
  if (s == "labels") return InitMode::Labels;
  if (s == "kmeans") return InitMode::KMeans;
  if (s == "random") return InitMode::Random;
  throw ConfigError("unknown init mode '" + s + "' (expected labels, kmeans or random)");
}

struct TrainConfig {
  std::size_t epochs = 400;
  std::size_t dim = 32;
  double learning_rate = 0.01;
  double weight_decay = 0.2;
  double lambda = 0.1;
  double r1 = 1.0;
  double r2 = 1.0;
  std::size_t layers = 2;
  std::size_t top_k = 10;
  std::size_t order = 2;
  double decay = 0.5;
  std::size_t pair_budget = 4096;
  std::uint64_t seed = 7;
  LossMode loss_mode = LossMode::Full;
  InitMode init_mode = InitMode::KMeans;
  std::size_t k = 0;           // 0: taken from labels
  std::size_t heads = 1;       // only single-head attention is implemented
  double init_margin = 3.0;    // membership-head bias = margin * M_init
  double head_init_scale = 0.1;
  std::size_t kmeans_restarts = 10;
  bool binary_lift = false;
  bool paper_literal_eq3 = false;
  bool cut_edge_inter = false;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
    if (!(weight_decay >= 0.0) || learning_rate * weight_decay >= 1.0) {
      throw ConfigError("weight decay must be >= 0 with lr * wd < 1");
    }
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (order < 1) throw ConfigError("order must be >= 1");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must lie in (0, 1]");
    if (pair_budget < 1) throw ConfigError("pair budget must be >= 1");
    if (!(lambda >= 0.0) || !(r1 >= 0.0) || !(r2 >= 0.0)) throw ConfigError("lambda, r1, r2 must be >= 0");
    if (heads != 1) throw ConfigError("only --heads 1 is supported");
    if (!(init_margin >= 0.0) || !(head_init_scale >= 0.0)) throw ConfigError("init margin and head scale must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Membership initialization

struct InitMembership {
  Tensor one_hot;  // n x k
  Tensor x_prime;  // n x (d + k), [X || M_init]
  std::vector<int> labels;
};

inline Tensor concat_features(const SparseMatrix& x, const Tensor& m) {
  const std::size_t d = x.cols(), k = m.cols();
  Tensor out(x.rows(), d + k, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto cols = x.row_cols(i);
    auto vals = x.row_values(i);
    for (std::size_t q = 0; q < cols.size(); ++q) out(i, cols[q]) = vals[q];
    for (std::size_t c = 0; c < k; ++c) out(i, d + c) = m(i, c);
  }
  return out;
}

inline Tensor one_hot(const std::vector<int>& labels, std::size_t k) {
  Tensor m(labels.size(), k, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ValidationError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(k) + ")");
    }
    m(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return m;
}

/// One-hot M_init from ground-truth labels, seeded k-means on the raw
/// features, or a seeded uniform draw; X' = [X || M_init].
inline InitMembership init_membership(const AttributedGraph& g, InitMode mode, std::size_t k, Rng& rng,
                                      std::size_t kmeans_restarts = 10) {
  if (k < 2) throw ConfigError("need k >= 2 communities");
  if (k > g.n_nodes()) throw ConfigError("k exceeds the number of nodes");
  InitMembership out;
  switch (mode) {
    case InitMode::Labels:
      if (!g.has_labels()) throw ConfigError("init mode 'labels' needs a labels file");
      out.labels = *g.labels();
      break;
    case InitMode::KMeans:
      out.labels = kmeans(g.features(), k, rng, kmeans_restarts).labels;
      break;
    case InitMode::Random:
      out.labels.resize(g.n_nodes());
      for (auto& l : out.labels) l = static_cast<int>(rng.below(k));
      break;
  }
  out.one_hot = one_hot(out.labels, k);
  out.x_prime = concat_features(g.features(), out.one_hot);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam step with decoupled decay (p <- p (1 - lr wd) before the moment
/// update). t is the 1-based step used for bias correction.
inline void adam_step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads, std::vector<Tensor>& m,
                      std::vector<Tensor>& v, double lr, double weight_decay, std::uint64_t t,
                      const AdamConstants& c = {}) {
  if (t < 1) throw ConfigError("adam_step: t must be >= 1");
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/moment counts differ");
  }
  for (std::size_t q = 0; q < params.size(); ++q) {
    const Tensor& g = grads[q];
    if (g.rows() != params[q].value.rows() || g.cols() != params[q].value.cols() || m[q].size() != g.size() ||
        v[q].size() != g.size()) {
      throw ShapeError("adam_step: shape mismatch for '" + params[q].name + "'");
    }
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!std::isfinite(g[k])) {
        throw NumericError("non-finite gradient for '" + params[q].name + "' at entry " + std::to_string(k));
      }
    }
  }
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const double shrink = 1.0 - lr * weight_decay;
  for (std::size_t q = 0; q < params.size(); ++q) {
    Tensor& p = params[q].value;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[q][k];
      m[q][k] = c.beta1 * m[q][k] + (1.0 - c.beta1) * g;
      v[q][k] = c.beta2 * v[q][k] + (1.0 - c.beta2) * g * g;
      const double mhat = m[q][k] / bc1;
      const double vhat = v[q][k] / bc2;
      p[k] = p[k] * shrink - lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Model state

struct ModelState {
  std::vector<NamedTensor> params;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
  std::string rng_state;  // "pairs" stream
  std::vector<int> communities;
  Tensor init_membership;

  const Tensor& param(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return p.value;
    throw ValidationError("no parameter named '" + name + "'");
  }

  friend bool operator==(const ModelState& a, const ModelState& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t q = 0; q < a.params.size(); ++q)
      if (a.params[q].name != b.params[q].name || !(a.params[q].value == b.params[q].value)) return false;
    return a.m == b.m && a.v == b.v && a.step == b.step && a.rng_state == b.rng_state &&
           a.communities == b.communities && a.init_membership == b.init_membership;
  }
};

/// Argmax per row of B; ties go to the lowest community index.
inline CommunityAssignment assign_communities(const Tensor& b) {
  std::vector<int> labels(b.rows(), 0);
  for (std::size_t i = 0; i < b.rows(); ++i) {
    std::size_t arg = 0;
    for (std::size_t c = 1; c < b.cols(); ++c)
      if (b(i, c) > b(i, arg)) arg = c;
    labels[i] = static_cast<int>(arg);
  }
  return CommunityAssignment(std::move(labels), static_cast<int>(b.cols()));
}

// Fixed parameter order; path attention vectors sit at [3, 3 + L).
struct ParamLayout {
  std::size_t L = 0;
  static constexpr std::size_t type_logits = 0;
  static constexpr std::size_t entity_proj = 1;
  static constexpr std::size_t attribute_proj = 2;
  std::size_t path(std::size_t p) const { return 3 + p; }
  std::size_t semantic_weight() const { return 3 + L; }
  std::size_t semantic_bias() const { return 4 + L; }
  std::size_t semantic_query() const { return 5 + L; }
  std::size_t feature_weight() const { return 6 + L; }
  std::size_t balance_logits() const { return 7 + L; }
  std::size_t membership_weight() const { return 8 + L; }
  std::size_t membership_bias() const { return 9 + L; }
  std::size_t count() const { return 10 + L; }
};

struct EpochPlan {
  std::vector<MetaPathGraph> metapaths;
  std::vector<std::shared_ptr<const SparseMatrix>> products;
  NodePairs intra;
  NodePairs inter;
};

struct ForwardResult {
  ad::Var loss;
  ad::Var l_m;
  ad::Var l_a;
  ad::Var membership;
  ad::Var beta;
  ad::Var embedding;
  bool intra_degenerate = false;
  bool inter_degenerate = false;
};

struct HistoryRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double l_m = 0.0;
  double l_a = 0.0;
  double q_tilde = 0.0;
};

inline std::size_t resolve_k(const AttributedGraph& g, const TrainConfig& cfg) {
  if (cfg.k > 0) return cfg.k;
  if (g.has_labels()) return static_cast<std::size_t>(g.num_communities());
  throw ConfigError("community count unknown: supply labels or --k");
}

/// The static part of the model for one graph and configuration: lifted
/// graph, meta-path products, attribute mixing and the modularity context.
class HacdModel {
 public:
  HacdModel(const AttributedGraph& g, const TrainConfig& cfg)
      : graph_(&g),
        cfg_(cfg),
        k_(resolve_k(g, cfg)),
        hetero_(to_heterogeneous(g, LiftOptions{cfg.binary_lift})),
        composer_(hetero_, cfg.layers),
        mixing_(std::make_shared<const SparseMatrix>(attribute_mixing(hetero_))),
        ctx_(higher_order_adjacency(g, cfg.order, cfg.decay)),
        a_tilde_(std::make_shared<const SparseMatrix>(ctx_.a_tilde)) {
    cfg_.validate();
    if (k_ < 2) throw ConfigError("need k >= 2 communities");
    layout_.L = cfg.layers;
  }

  const TrainConfig& config() const { return cfg_; }
  const AttributedGraph& graph() const { return *graph_; }
  const HeteroGraph& hetero() const { return hetero_; }
  const ModularityContext& modularity_context() const { return ctx_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t k() const { return k_; }

  /// Fresh parameters (Glorot uniform from the "init" stream, after the
  /// membership initialization drew from the same stream).
  ModelState initial_state() const {
    Rng init = Rng::stream(cfg_.seed, "init");
    auto mi = init_membership(*graph_, cfg_.init_mode, k_, init, cfg_.kmeans_restarts);
    const std::size_t n = graph_->n_nodes(), d = graph_->d_features(), a = hetero_.attribute_count();
    const std::size_t dp = cfg_.dim, L = cfg_.layers;
    auto glorot = [&](std::size_t r, std::size_t c, double gain = 1.0) {
      const double lim = gain * std::sqrt(6.0 / static_cast<double>(r + c));
      Tensor t(r, c, 0.0);
      for (std::size_t q = 0; q < t.size(); ++q) t[q] = init.uniform(-lim, lim);
      return t;
    };
    ModelState s;
    s.params.push_back({"type_logits", Tensor(L, 3, 0.0)});
    s.params.push_back({"entity_proj", glorot(d + k_, dp)});
    s.params.push_back({"attribute_proj", glorot(a, dp)});
    for (std::size_t p = 0; p < L; ++p) s.params.push_back({"path_attention/" + std::to_string(p), glorot(2 * dp, 1)});
    s.params.push_back({"semantic_weight", glorot(dp, dp)});
    s.params.push_back({"semantic_bias", Tensor(1, dp, 0.0)});
    s.params.push_back({"semantic_query", glorot(dp, 1)});
    s.params.push_back({"feature_weight", Tensor(d, 1, std::log(std::expm1(1.0)))});  // softplus -> 1
    s.params.push_back({"balance_logits", Tensor(L, 2, 0.0)});
    s.params.push_back({"membership_weight", glorot(dp, k_, cfg_.head_init_scale)});
    Tensor bias = mi.one_hot;
    for (std::size_t q = 0; q < bias.size(); ++q) bias[q] *= cfg_.init_margin;
    s.params.push_back({"membership_bias", std::move(bias)});
    for (const auto& p : s.params) {
      s.m.emplace_back(p.value.rows(), p.value.cols(), 0.0);
      s.v.emplace_back(p.value.rows(), p.value.cols(), 0.0);
    }
    s.rng_state = Rng::stream(cfg_.seed, "pairs").save();
    s.communities = mi.labels;
    s.init_membership = std::move(mi.one_hot);
    (void)n;
    return s;
  }

  // Throws ValidationError when a (loaded) state does not fit this model.
  void check_state(const ModelState& s) const {
    ModelState ref = skeleton();
    if (s.params.size() != ref.params.size() || s.m.size() != ref.params.size() || s.v.size() != ref.params.size()) {
      throw ValidationError("checkpoint: parameter count does not match the model");
    }
    for (std::size_t q = 0; q < ref.params.size(); ++q) {
      const auto& a = s.params[q];
      const auto& b = ref.params[q];
      if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
          s.m[q].size() != b.value.size() || s.v[q].size() != b.value.size()) {
        throw ValidationError("checkpoint: parameter '" + a.name + "' " + a.value.shape_string() +
                              " does not match expected '" + b.name + "' " + b.value.shape_string());
      }
    }
    if (s.communities.size() != graph_->n_nodes() || s.init_membership.rows() != graph_->n_nodes() ||
        s.init_membership.cols() != k_) {
      throw ValidationError("checkpoint: node or community count does not match the dataset");
    }
  }

  std::vector<HeteroConvLayer> conv_layers(const Tensor& type_logits) const {
    std::vector<HeteroConvLayer> layers(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      for (std::size_t t = 0; t < 3; ++t) layers[l].logits[t] = type_logits(l, t);
    return layers;
  }

  std::vector<MetaPathGraph> metapaths(const ModelState& s) const {
    return composer_.compose(conv_layers(s.params[ParamLayout::type_logits].value), cfg_.top_k);
  }

  /// Meta-paths from the current edge-type weights and contrastive pairs
  /// from the current communities. Draws from rng.
  EpochPlan plan(const ModelState& s, Rng& rng, bool with_pairs = true) const {
    EpochPlan p;
    p.metapaths = metapaths(s);
    for (const auto& mp : p.metapaths)
      p.products.push_back(std::make_shared<const SparseMatrix>(pair_products(graph_->features(), mp)));
    if (with_pairs) {
      CommunityAssignment c(s.communities, static_cast<int>(k_));
      p.intra = sample_intra_pairs(c, cfg_.pair_budget, rng);
      p.inter = cfg_.cut_edge_inter ? sample_cut_edge_pairs(*graph_, c, cfg_.pair_budget, rng)
                                    : sample_inter_pairs(c, cfg_.pair_budget, rng);
    }
    return p;
  }

  /// Full forward pass; `params` follow the ParamLayout order.
  ForwardResult forward(ad::Tape& tape, const std::vector<ad::Var>& params, const Tensor& x_prime,
                        const EpochPlan& plan) const {
    const ParamLayout& lay = layout_;
    if (params.size() != lay.count()) throw ShapeError("forward: expected " + std::to_string(lay.count()) + " parameters");
    NodeAttentionParams nap{params[ParamLayout::entity_proj], params[ParamLayout::attribute_proj], {}};
    for (std::size_t p = 0; p < cfg_.layers; ++p) nap.path_attention.push_back(params[lay.path(p)]);
    SemanticAttentionParams sem{params[lay.semantic_weight()], params[lay.semantic_bias()], params[lay.semantic_query()]};

    ad::Var x = tape.constant(x_prime);
    ProjectedFeatures proj = project_features(hetero_, x, nap);
    ad::Var h = entity_inputs(proj, mixing_);

    std::vector<ad::Var> embeddings;
    for (std::size_t p = 0; p < plan.metapaths.size(); ++p) {
      const auto& mp = plan.metapaths[p];
      ad::Var log_w = ad::log(metapath_weights(mp, params[ParamLayout::type_logits]));
      AttentionOptions opt;
      opt.paper_literal = cfg_.paper_literal_eq3;
      opt.log_weights = &log_w;
      ad::Var alpha = node_attention_coeffs(h, mp, nap.path_attention[p], opt);
      embeddings.push_back(aggregate(h, alpha, mp));
    }

    auto importance = metapath_importance(embeddings, sem);
    ad::Var u = ad::softplus(params[lay.feature_weight()]);
    std::vector<ad::Var> gamma_terms;
    for (std::size_t p = 0; p < plan.metapaths.size(); ++p) {
      ad::Var gamma = attr_coeffs(attr_similarity(plan.products[p], u), plan.metapaths[p]);
      gamma_terms.push_back(gamma_term(gamma, plan.metapaths[p]));
    }
    ad::Var beta = attribute_level_coeffs(gamma_terms, importance, balance_weights(params[lay.balance_logits()]));
    ad::Var fused = fuse(beta, embeddings);

    ad::Var logits = ad::add(ad::matmul(fused, params[lay.membership_weight()]), params[lay.membership_bias()]);
    ad::Var b = ad::row_softmax(logits);

    ForwardResult r;
    r.membership = b;
    r.beta = beta;
    r.embedding = fused;
    r.l_m = cmf_loss(b, ctx_, a_tilde_);
    PairLoss intra = pair_distance_loss(fused, plan.intra);
    PairLoss inter = pair_distance_loss(fused, plan.inter);
    r.intra_degenerate = intra.degenerate;
    r.inter_degenerate = inter.degenerate;
    r.l_a = attribute_cohesiveness_loss(intra.value, inter.value, cfg_.r1, cfg_.r2);
    switch (cfg_.loss_mode) {
      case LossMode::Full: r.loss = total_loss(r.l_m, r.l_a, cfg_.lambda); break;
      case LossMode::A2M: r.loss = r.l_a; break;
      case LossMode::CMF: r.loss = r.l_m; break;
    }
    return r;
  }

 private:
  // Parameter names and shapes without drawing any randomness.
  ModelState skeleton() const {
    const std::size_t n = graph_->n_nodes(), d = graph_->d_features(), a = hetero_.attribute_count();
    const std::size_t dp = cfg_.dim, L = cfg_.layers;
    ModelState s;
    s.params.push_back({"type_logits", Tensor(L, 3, 0.0)});
    s.params.push_back({"entity_proj", Tensor(d + k_, dp, 0.0)});
    s.params.push_back({"attribute_proj", Tensor(a, dp, 0.0)});
    for (std::size_t p = 0; p < L; ++p) s.params.push_back({"path_attention/" + std::to_string(p), Tensor(2 * dp, 1, 0.0)});
    s.params.push_back({"semantic_weight", Tensor(dp, dp, 0.0)});
    s.params.push_back({"semantic_bias", Tensor(1, dp, 0.0)});
    s.params.push_back({"semantic_query", Tensor(dp, 1, 0.0)});
    s.params.push_back({"feature_weight", Tensor(d, 1, 0.0)});
    s.params.push_back({"balance_logits", Tensor(L, 2, 0.0)});
    s.params.push_back({"membership_weight", Tensor(dp, k_, 0.0)});
    s.params.push_back({"membership_bias", Tensor(n, k_, 0.0)});
    return s;
  }

  const AttributedGraph* graph_;
  TrainConfig cfg_;
  std::size_t k_;
  HeteroGraph hetero_;
  MetaPathComposer composer_;
  std::shared_ptr<const SparseMatrix> mixing_;
  ModularityContext ctx_;
  std::shared_ptr<const SparseMatrix> a_tilde_;
  ParamLayout layout_;
};

/// Owns one training run. step() is transactional: if the forward or
/// backward pass fails, the state is left as it was.
class Trainer {
 public:
  Trainer(const AttributedGraph& g, const TrainConfig& cfg) : model_(g, cfg) {
    state_ = model_.initial_state();
    x_prime_ = concat_features(g.features(), state_.init_membership);
  }

  Trainer(const AttributedGraph& g, const TrainConfig& cfg, ModelState resumed) : model_(g, cfg) {
    model_.check_state(resumed);
    state_ = std::move(resumed);
    x_prime_ = concat_features(g.features(), state_.init_membership);
  }

  const HacdModel& model() const { return model_; }
  const ModelState& state() const { return state_; }
  const Tensor& x_prime() const { return x_prime_; }

  HistoryRow step() {
    Rng rng;
    rng.restore(state_.rng_state);
    EpochPlan plan = model_.plan(state_, rng);
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : state_.params) vars.push_back(tape.parameter(p.value, p.name));
    ForwardResult fr = model_.forward(tape, vars, x_prime_, plan);
    tape.backward(fr.loss);
    std::vector<Tensor> grads;
    for (auto v : vars) grads.push_back(tape.grad(v));

    ModelState next = state_;
    adam_step(next.params, grads, next.m, next.v, model_.config().learning_rate, model_.config().weight_decay,
              next.step + 1);
    for (const auto& p : next.params)
      if (!p.value.all_finite()) throw NumericError("non-finite value in parameter '" + p.name + "' after update");
    next.step += 1;
    next.rng_state = rng.save();
    next.communities = assign_communities(fr.membership.value()).labels();

    HistoryRow row;
    row.epoch = static_cast<std::size_t>(next.step);
    row.loss = fr.loss.value().item();
    row.l_m = fr.l_m.value().item();
    row.l_a = fr.l_a.value().item();
    row.q_tilde = -row.l_m;
    last_grads_ = std::move(grads);
    state_ = std::move(next);
    return row;
  }

  // Gradients of the last step, in parameter order.
  const std::vector<Tensor>& last_gradients() const { return last_grads_; }

  /// Forward pass at the current parameters without pair sampling.
  struct Snapshot {
    Tensor membership;
    Tensor beta;
    Tensor embedding;
    std::vector<MetaPathGraph> metapaths;
  };

  Snapshot snapshot() const {
    Rng unused;
    EpochPlan plan = model_.plan(state_, unused, false);
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : state_.params) vars.push_back(tape.constant(p.value));
    ForwardResult fr = model_.forward(tape, vars, x_prime_, plan);
    return {fr.membership.value(), fr.beta.value(), fr.embedding.value(), std::move(plan.metapaths)};
  }

  CommunityAssignment assignment() const { return assign_communities(snapshot().membership); }

 private:
  HacdModel model_;
  ModelState state_;
  Tensor x_prime_;
  std::vector<Tensor> last_grads_;
};

/// Training stopped on a non-finite value; carries the last good state.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, ModelState last_good, std::vector<HistoryRow> history)
      : NumericError(what), last_good_(std::move(last_good)), history_(std::move(history)) {}
  const ModelState& last_good() const { return last_good_; }
  const std::vector<HistoryRow>& history() const { return history_; }

 private:
  ModelState last_good_;
  std::vector<HistoryRow> history_;
};

struct TrainResult {
  ModelState state;
  std::vector<HistoryRow> history;
  CommunityAssignment assignment;
};

inline TrainResult train(const AttributedGraph& g, const TrainConfig& cfg,
                         const std::function<void(const HistoryRow&)>& on_epoch = {}) {
  cfg.validate();
  Trainer trainer(g, cfg);
  std::vector<HistoryRow> history;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    try {
      history.push_back(trainer.step());
    } catch (const NumericError& err) {
      throw DivergenceError(std::string("training diverged at epoch ") + std::to_string(e + 1) + ": " + err.what(),
                            trainer.state(), history);
    }
    if (on_epoch) on_epoch(history.back());
  }
  return {trainer.state(), std::move(history), trainer.assignment()};
}

// ---------------------------------------------------------------------------
// Checkpoints: "HACD1", u16 version, then little-endian fields.

namespace detail {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t x) { buf_.push_back(static_cast<char>(x)); }
  void u16(std::uint16_t x) {
    for (int b = 0; b < 2; ++b) u8(static_cast<std::uint8_t>(x >> (8 * b)));
  }
  void u32(std::uint32_t x) {
    for (int b = 0; b < 4; ++b) u8(static_cast<std::uint8_t>(x >> (8 * b)));
  }
  void u64(std::uint64_t x) {
    for (int b = 0; b < 8; ++b) u8(static_cast<std::uint8_t>(x >> (8 * b)));
  }
  void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u64(t.rows());
    u64(t.cols());
    for (std::size_t k = 0; k < t.size(); ++k) f64(t[k]);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t x = 0;
    for (int b = 0; b < 2; ++b) x |= static_cast<std::uint16_t>(u8()) << (8 * b);
    return x;
  }
  std::uint32_t u32() {
    std::uint32_t x = 0;
    for (int b = 0; b < 4; ++b) x |= static_cast<std::uint32_t>(u8()) << (8 * b);
    return x;
  }
  std::uint64_t u64() {
    std::uint64_t x = 0;
    for (int b = 0; b < 8; ++b) x |= static_cast<std::uint64_t>(u8()) << (8 * b);
    return x;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str();
    std::uint64_t r = u64(), c = u64();
    if (c != 0 && r > (data_.size() - pos_) / 8 / c) throw ValidationError("checkpoint: tensor '" + t.name + "' overruns file");
    Tensor v(r, c, 0.0);
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = f64();
    t.value = std::move(v);
    return t;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ValidationError("checkpoint: truncated file");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ModelState& s) {
  detail::ByteWriter w;
  for (char c : std::string("HACD1")) w.u8(static_cast<std::uint8_t>(c));
  w.u16(detail::kCheckpointVersion);
  w.u64(s.step);
  w.str(s.rng_state);
  w.u64(s.communities.size());
  for (int c : s.communities) w.u32(static_cast<std::uint32_t>(c));
  w.tensor("init_membership", s.init_membership);
  w.u32(static_cast<std::uint32_t>(s.params.size()));
  for (std::size_t q = 0; q < s.params.size(); ++q) {
    w.tensor(s.params[q].name, s.params[q].value);
    w.tensor("adam.m/" + s.params[q].name, s.m[q]);
    w.tensor("adam.v/" + s.params[q].name, s.v[q]);
  }
  return w.bytes();
}

inline ModelState deserialize_checkpoint(std::string bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.raw(5) != "HACD1") throw ValidationError("checkpoint: bad magic");
  if (auto v = r.u16(); v != detail::kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(v));
  }
  ModelState s;
  s.step = r.u64();
  s.rng_state = r.str();
  std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) s.communities.push_back(static_cast<int>(r.u32()));
  s.init_membership = r.tensor().value;
  std::uint32_t count = r.u32();
  for (std::uint32_t q = 0; q < count; ++q) {
    s.params.push_back(r.tensor());
    s.m.push_back(r.tensor().value);
    s.v.push_back(r.tensor().value);
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return s;
}

/// Writes to a sibling temp file and renames, so a failed write never
/// clobbers the previous checkpoint.
inline void save_checkpoint(const ModelState& s, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint " + tmp.string());
    const std::string bytes = serialize_checkpoint(s);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("short write to checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline ModelState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(std::move(bytes));
}

// ---------------------------------------------------------------------------
// Gradient check on a small planted-partition fixture

struct GradcheckOptions {
  std::size_t blocks = 3;
  std::size_t block_size = 4;
  std::size_t attrs = 6;
  double epsilon = 1e-5;
  bool paper_literal_eq3 = false;
  std::uint64_t seed = 7;
};

struct GradcheckResult {
  ad::FiniteDiffReport report;
  std::size_t nodes = 0;
  std::size_t parameters = 0;
  bool passed = false;
};

/// Central differences against reverse-mode gradients of the full loss on
/// a <= 15-node fixture. Meta-path structure and pairs are frozen first so
/// the loss is a smooth function of the parameters.
inline GradcheckResult gradcheck(const GradcheckOptions& opt, double tolerance = 1e-4) {
  if (!(opt.epsilon > 0.0)) throw ConfigError("gradcheck: epsilon must be > 0");
  if (opt.blocks < 2 || opt.block_size < 2 || opt.blocks * opt.block_size > 15) {
    throw ConfigError("gradcheck: need >= 2 blocks of >= 2 nodes and at most 15 nodes");
  }
  if (opt.attrs < opt.blocks) throw ConfigError("gradcheck: need at least one attribute per block");
  SbmConfig sbm;
  sbm.blocks.assign(opt.blocks, opt.block_size);
  sbm.p_in = 0.7;
  sbm.p_out = 0.15;
  sbm.n_attrs = opt.attrs;
  sbm.signature_size = std::max<std::size_t>(1, opt.attrs / opt.blocks);
  sbm.p_sig = 0.8;
  sbm.p_noise = 0.2;
  sbm.seed = opt.seed;
  AttributedGraph g = generate_sbm(sbm);

  TrainConfig cfg;
  cfg.dim = 4;
  cfg.top_k = 3;
  cfg.pair_budget = 16;
  cfg.init_mode = InitMode::Labels;
  cfg.seed = opt.seed;
  cfg.paper_literal_eq3 = opt.paper_literal_eq3;
  cfg.init_margin = 1.0;
  cfg.head_init_scale = 1.0;
  Trainer trainer(g, cfg);
  const HacdModel& model = trainer.model();
  Rng rng;
  rng.restore(trainer.state().rng_state);
  EpochPlan plan = model.plan(trainer.state(), rng);
  const Tensor& xp = trainer.x_prime();

  ad::ScalarFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& vars) {
    return model.forward(tape, vars, xp, plan).loss;
  };
  GradcheckResult res;
  res.nodes = g.n_nodes();
  res.parameters = trainer.state().params.size();
  res.report = ad::finite_diff_check(fn, trainer.state().params, opt.epsilon);
  res.passed = res.report.all_finite && res.report.max_rel_err < tolerance;
  return res;
}

}  // namespace hacd
