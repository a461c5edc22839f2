#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "hacd/graph.hpp"
#include "hacd/metapath.hpp"
#include "hacd/metrics.hpp"
#include "hacd/trainer.hpp"

namespace hacd::report {

using json = nlohmann::ordered_json;

inline constexpr const char* kReportSchema = "hacd.report/1";
inline constexpr const char* kMetricsSchema = "hacd.metrics/1";
inline constexpr const char* kManifestSchema = "hacd.manifest/1";

inline json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"dim", c.dim},
              {"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"lambda", c.lambda},
              {"r1", c.r1},
              {"r2", c.r2},
              {"layers", c.layers},
              {"top_k", c.top_k},
              {"order", c.order},
              {"decay", c.decay},
              {"pair_budget", c.pair_budget},
              {"seed", c.seed},
              {"loss", to_string(c.loss_mode)},
              {"init", to_string(c.init_mode)},
              {"k", c.k},
              {"heads", c.heads},
              {"init_margin", c.init_margin},
              {"head_init_scale", c.head_init_scale},
              {"binary_lift", c.binary_lift},
              {"paper_literal_eq3", c.paper_literal_eq3},
              {"inter_on_cut_edges", c.cut_edge_inter}};
}

inline json to_json(const SbmConfig& c) {
  return json{{"blocks", c.blocks},   {"p_in", c.p_in},   {"p_out", c.p_out},     {"n_attrs", c.n_attrs},
              {"signature_size", c.signature_size}, {"p_sig", c.p_sig}, {"p_noise", c.p_noise}, {"seed", c.seed}};
}

inline json to_json(const HistoryRow& h) {
  return json{{"epoch", h.epoch}, {"loss", h.loss}, {"l_m", h.l_m}, {"l_a", h.l_a}, {"q_tilde", h.q_tilde}};
}

inline json to_json(const std::vector<HistoryRow>& history) {
  json arr = json::array();
  for (const auto& h : history) arr.push_back(to_json(h));
  return arr;
}

inline json to_json(const metrics::MetricReport& m) {
  return json{{"acc", m.acc}, {"nmi", m.nmi}, {"ari", m.ari}, {"f1", m.f1}, {"modularity", m.modularity}};
}

inline std::string metrics_csv_header() { return "acc,nmi,ari,f1,modularity"; }

inline std::string metrics_csv_row(const metrics::MetricReport& m) {
  using detail::format_double;
  return format_double(m.acc) + "," + format_double(m.nmi) + "," + format_double(m.ari) + "," + format_double(m.f1) +
         "," + format_double(m.modularity);
}

inline json dataset_summary(const AttributedGraph& g) {
  return json{{"nodes", g.n_nodes()},
              {"edges", g.n_edges()},
              {"features", g.d_features()},
              {"active_features", g.active_features()},
              {"labelled", g.has_labels()}};
}

inline std::string sequence_string(const TypeSequence& seq) {
  std::string s;
  for (std::size_t l = 0; l < seq.size(); ++l) {
    if (l) s += ">";
    s += to_string(seq[l]);
  }
  return s;
}

/// Which layers and edge types make up each meta-path, with the per-layer
/// type weights in effect and the path's fusion weight.
inline json metapath_provenance(const std::vector<MetaPathGraph>& paths, const std::vector<HeteroConvLayer>& layers,
                                const Tensor& beta) {
  json out = json::array();
  for (const auto& mp : paths) {
    json seqs = json::array();
    for (const auto& s : mp.sequences) seqs.push_back(sequence_string(s));
    json weights = json::array();
    for (auto l : mp.provenance) {
      json w = json::object();
      auto ws = layers.at(l).weights();
      for (std::size_t t = 0; t < layers[l].types.size(); ++t) w[to_string(layers[l].types[t])] = ws[t];
      weights.push_back(w);
    }
    out.push_back(json{{"path", mp.path_id},
                       {"layers", mp.provenance},
                       {"sequences", seqs},
                       {"edge_type_weights", weights},
                       {"nnz", mp.nnz()},
                       {"beta", beta.size() > mp.path_id ? beta[mp.path_id] : 0.0}});
  }
  return out;
}

}  // namespace hacd::report
