#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hacd/error.hpp"
#include "hacd/rng.hpp"
#include "hacd/sparse.hpp"

namespace hacd {

// Undirected edge, always stored with u < v.
struct Edge {
  std::size_t u;
  std::size_t v;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

namespace detail {

// Natural ordering: digit runs compare numerically, so "a2" < "a10" and
// purely numeric ids sort as numbers.
inline bool natural_less(std::string_view a, std::string_view b) {
  std::size_t i = 0, j = 0;
  auto is_digit = [](char c) { return c >= '0' && c <= '9'; };
  while (i < a.size() && j < b.size()) {
    if (is_digit(a[i]) && is_digit(b[j])) {
      std::size_t i2 = i, j2 = j;
      while (i2 < a.size() && is_digit(a[i2])) ++i2;
      while (j2 < b.size() && is_digit(b[j2])) ++j2;
      auto da = a.substr(i, i2 - i), db = b.substr(j, j2 - j);
      while (da.size() > 1 && da.front() == '0') da.remove_prefix(1);
      while (db.size() > 1 && db.front() == '0') db.remove_prefix(1);
      if (da.size() != db.size()) return da.size() < db.size();
      if (da != db) return da < db;
      i = i2;
      j = j2;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
  return a < b;
}

inline std::vector<std::string> split_fields(std::string_view line, char sep) {
  std::vector<std::string> out;
  if (sep == ',') {
    std::size_t start = 0;
    for (std::size_t k = 0; k <= line.size(); ++k) {
      if (k == line.size() || line[k] == ',') {
        auto f = line.substr(start, k - start);
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
        out.emplace_back(f);
        start = k + 1;
      }
    }
    return out;
  }
  std::size_t k = 0;
  while (k < line.size()) {
    while (k < line.size() && (line[k] == ' ' || line[k] == '\t' || line[k] == '\r')) ++k;
    std::size_t start = k;
    while (k < line.size() && line[k] != ' ' && line[k] != '\t' && line[k] != '\r') ++k;
    if (k > start) out.emplace_back(line.substr(start, k - start));
  }
  return out;
}

inline std::string_view strip_comment(std::string_view line) {
  auto pos = line.find('#');
  if (pos != std::string_view::npos) line = line.substr(0, pos);
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
  return line;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

struct Line {
  std::size_t number;
  std::string text;
};

inline std::vector<Line> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<Line> lines;
  std::string s;
  std::size_t n = 0;
  while (std::getline(in, s)) {
    ++n;
    auto body = strip_comment(s);
    if (body.find_first_not_of(" \t") == std::string_view::npos) continue;
    lines.push_back({n, std::string(body)});
  }
  return lines;
}

}  // namespace detail

/// Undirected attributed graph G = (V, E, X) with optional ground truth.
///
/// Immutable once built. Node and attribute names from the input files are
/// kept so results can be written back under the original ids.
class AttributedGraph {
 public:
  AttributedGraph() = default;

  // Canonicalizes edges (min id first, sorted, deduplicated) and validates
  // every invariant. Self-loops are an error unless drop_self_loops is set.
  static AttributedGraph create(std::size_t n_nodes, std::vector<Edge> edges, SparseMatrix features,
                                std::optional<std::vector<int>> labels = std::nullopt,
                                bool drop_self_loops = false) {
    AttributedGraph g;
    g.n_nodes_ = n_nodes;
    for (auto& e : edges) {
      if (e.u >= n_nodes || e.v >= n_nodes) {
        throw ValidationError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ") references node >= " +
                              std::to_string(n_nodes));
      }
      if (e.u == e.v) {
        if (drop_self_loops) continue;
        throw ValidationError("self-loop on node " + std::to_string(e.u));
      }
      g.edges_.push_back({std::min(e.u, e.v), std::max(e.u, e.v)});
    }
    std::sort(g.edges_.begin(), g.edges_.end());
    g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());

    if (features.rows() != n_nodes) {
      throw ValidationError("feature matrix has " + std::to_string(features.rows()) + " rows, expected " +
                            std::to_string(n_nodes));
    }
    for (double v : features.values()) {
      if (!std::isfinite(v) || v < 0.0) throw ValidationError("feature values must be finite and non-negative");
    }
    g.features_ = std::move(features);

    if (labels) {
      if (labels->size() != n_nodes) throw ValidationError("labels length does not match node count");
      std::set<int> seen(labels->begin(), labels->end());
      int expect = 0;
      for (int l : seen) {
        if (l != expect++) throw ValidationError("label ids must be contiguous 0..k-1");
      }
      g.labels_ = std::move(labels);
    }
    g.node_names_.resize(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) g.node_names_[i] = std::to_string(i);
    g.attr_names_.resize(g.features_.cols());
    for (std::size_t j = 0; j < g.features_.cols(); ++j) g.attr_names_[j] = "a" + std::to_string(j);
    return g;
  }

  std::size_t n_nodes() const noexcept { return n_nodes_; }
  std::size_t n_edges() const noexcept { return edges_.size(); }
  std::size_t d_features() const noexcept { return features_.cols(); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const SparseMatrix& features() const noexcept { return features_; }
  const std::optional<std::vector<int>>& labels() const noexcept { return labels_; }
  bool has_labels() const noexcept { return labels_.has_value(); }

  int num_communities() const {
    if (!labels_ || labels_->empty()) return 0;
    return *std::max_element(labels_->begin(), labels_->end()) + 1;
  }

  const std::vector<std::string>& node_names() const noexcept { return node_names_; }
  const std::vector<std::string>& attr_names() const noexcept { return attr_names_; }
  const std::vector<std::string>& label_names() const noexcept { return label_names_; }

  void set_names(std::vector<std::string> nodes, std::vector<std::string> attrs, std::vector<std::string> labels = {}) {
    if (nodes.size() != n_nodes_ || attrs.size() != d_features()) throw ValidationError("name table size mismatch");
    node_names_ = std::move(nodes);
    attr_names_ = std::move(attrs);
    label_names_ = std::move(labels);
  }

  // Symmetric 0/1 adjacency.
  SparseMatrix adjacency() const {
    std::vector<Triplet> t;
    t.reserve(2 * edges_.size());
    for (const auto& e : edges_) {
      t.push_back({e.u, e.v, 1.0});
      t.push_back({e.v, e.u, 1.0});
    }
    return SparseMatrix::from_triplets(n_nodes_, n_nodes_, std::move(t));
  }

  std::vector<double> degrees() const {
    std::vector<double> k(n_nodes_, 0.0);
    for (const auto& e : edges_) {
      k[e.u] += 1.0;
      k[e.v] += 1.0;
    }
    return k;
  }

  // Number of distinct nonzero feature columns.
  std::size_t active_features() const {
    std::vector<char> on(d_features(), 0);
    for (auto c : features_.col_idx()) on[c] = 1;
    return static_cast<std::size_t>(std::count(on.begin(), on.end(), 1));
  }

 private:
  std::size_t n_nodes_ = 0;
  std::vector<Edge> edges_;
  SparseMatrix features_;
  std::optional<std::vector<int>> labels_;
  std::vector<std::string> node_names_;
  std::vector<std::string> attr_names_;
  std::vector<std::string> label_names_;
};

struct LoadOptions {
  bool drop_self_loops = false;
};

/// Reads the edge / feature / label files into a dense-id graph.
///
/// The node universe is the labels file when given, else the node column of
/// a dense feature CSV, else every id seen in any file. Ids outside an
/// authoritative universe are a validation error. Dense ids follow the
/// natural order of the original names, so the result does not depend on
/// line order.
inline AttributedGraph load_attributed_graph(const std::filesystem::path& edges_path,
                                             const std::filesystem::path& features_path,
                                             const std::optional<std::filesystem::path>& labels_path = std::nullopt,
                                             const LoadOptions& opts = {}) {
  using detail::Line;
  struct RawEdge {
    std::string a, b;
    std::size_t line;
  };
  struct RawFeature {
    std::string node, attr;
    double value;
    std::size_t line;
  };

  std::vector<RawEdge> raw_edges;
  for (const Line& l : detail::read_lines(edges_path)) {
    auto f = detail::split_fields(l.text, '\t');
    if (f.size() != 2) throw ParseError(edges_path.string(), l.number, "expected 2 columns `src<TAB>dst`");
    raw_edges.push_back({f[0], f[1], l.number});
  }

  std::vector<RawFeature> raw_features;
  std::vector<std::string> dense_nodes;
  std::vector<std::string> dense_attrs;
  bool dense = false;
  {
    auto lines = detail::read_lines(features_path);
    if (!lines.empty() && lines.front().text.rfind("node,", 0) == 0) {
      dense = true;
      auto header = detail::split_fields(lines.front().text, ',');
      dense_attrs.assign(header.begin() + 1, header.end());
      std::set<std::string> seen_attr;
      for (const auto& a : dense_attrs) {
        if (!seen_attr.insert(a).second) throw ParseError(features_path.string(), lines.front().number, "duplicate column " + a);
      }
      for (std::size_t k = 1; k < lines.size(); ++k) {
        auto f = detail::split_fields(lines[k].text, ',');
        if (f.size() != header.size()) {
          throw ParseError(features_path.string(), lines[k].number,
                           "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        }
        dense_nodes.push_back(f[0]);
        for (std::size_t c = 1; c < f.size(); ++c) {
          auto v = detail::parse_double(f[c]);
          if (!v) throw ParseError(features_path.string(), lines[k].number, "bad number '" + f[c] + "'");
          raw_features.push_back({f[0], dense_attrs[c - 1], *v, lines[k].number});
        }
      }
    } else {
      for (const Line& l : lines) {
        auto f = detail::split_fields(l.text, '\t');
        if (f.size() != 3) throw ParseError(features_path.string(), l.number, "expected 3 columns `node<TAB>attr<TAB>value`");
        auto v = detail::parse_double(f[2]);
        if (!v) throw ParseError(features_path.string(), l.number, "bad number '" + f[2] + "'");
        raw_features.push_back({f[0], f[1], *v, l.number});
      }
    }
  }

  std::vector<std::pair<std::string, std::string>> raw_labels;
  if (labels_path) {
    for (const Line& l : detail::read_lines(*labels_path)) {
      auto f = detail::split_fields(l.text, '\t');
      if (f.size() != 2) throw ParseError(labels_path->string(), l.number, "expected 2 columns `node<TAB>label`");
      raw_labels.emplace_back(f[0], f[1]);
    }
  }

  auto natural = [](const std::string& a, const std::string& b) { return detail::natural_less(a, b); };
  std::set<std::string, decltype(natural)> universe(natural);
  bool authoritative = false;
  if (labels_path) {
    authoritative = true;
    for (const auto& [node, lab] : raw_labels) {
      if (!universe.insert(node).second) throw ValidationError("node '" + node + "' labeled twice");
    }
  } else if (dense) {
    authoritative = true;
    for (const auto& n : dense_nodes) {
      if (!universe.insert(n).second) throw ValidationError("node '" + n + "' listed twice in dense features");
    }
  } else {
    for (const auto& e : raw_edges) {
      universe.insert(e.a);
      universe.insert(e.b);
    }
    for (const auto& f : raw_features) universe.insert(f.node);
  }
  if (authoritative && dense && labels_path) {
    for (const auto& n : dense_nodes) {
      if (!universe.count(n)) throw ValidationError("features reference unknown node '" + n + "'");
    }
  }

  std::vector<std::string> node_names(universe.begin(), universe.end());
  std::unordered_map<std::string, std::size_t> node_id;
  for (std::size_t i = 0; i < node_names.size(); ++i) node_id.emplace(node_names[i], i);
  auto lookup = [&](const std::string& name, const std::filesystem::path& file, std::size_t line) {
    auto it = node_id.find(name);
    if (it == node_id.end()) {
      throw ValidationError(file.string() + ":" + std::to_string(line) + ": unknown node '" + name + "'");
    }
    return it->second;
  };

  std::vector<Edge> edges;
  edges.reserve(raw_edges.size());
  for (const auto& e : raw_edges) {
    std::size_t u = lookup(e.a, edges_path, e.line), v = lookup(e.b, edges_path, e.line);
    if (u == v && !opts.drop_self_loops) {
      throw ValidationError(edges_path.string() + ":" + std::to_string(e.line) + ": self-loop on '" + e.a + "'");
    }
    edges.push_back({u, v});
  }

  std::vector<std::string> attr_names;
  if (dense) {
    attr_names = dense_attrs;
    std::sort(attr_names.begin(), attr_names.end(), natural);
  } else {
    std::set<std::string, decltype(natural)> attrs(natural);
    for (const auto& f : raw_features) attrs.insert(f.attr);
    attr_names.assign(attrs.begin(), attrs.end());
  }
  std::unordered_map<std::string, std::size_t> attr_id;
  for (std::size_t j = 0; j < attr_names.size(); ++j) attr_id.emplace(attr_names[j], j);

  std::vector<Triplet> trips;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& f : raw_features) {
    std::size_t i = lookup(f.node, features_path, f.line);
    std::size_t j = attr_id.at(f.attr);
    if (!seen.emplace(i, j).second) {
      throw ValidationError(features_path.string() + ":" + std::to_string(f.line) + ": duplicate feature (" + f.node +
                            ", " + f.attr + ")");
    }
    if (!std::isfinite(f.value) || f.value < 0.0) {
      throw ValidationError(features_path.string() + ":" + std::to_string(f.line) + ": feature value must be >= 0");
    }
    if (f.value != 0.0) trips.push_back({i, j, f.value});
  }
  auto features = SparseMatrix::from_triplets(node_names.size(), attr_names.size(), std::move(trips));

  std::optional<std::vector<int>> labels;
  std::vector<std::string> label_names;
  if (labels_path) {
    std::set<std::string, decltype(natural)> lab_set(natural);
    for (const auto& [node, lab] : raw_labels) lab_set.insert(lab);
    label_names.assign(lab_set.begin(), lab_set.end());
    std::unordered_map<std::string, int> lab_id;
    for (std::size_t c = 0; c < label_names.size(); ++c) lab_id.emplace(label_names[c], static_cast<int>(c));
    labels.emplace(node_names.size(), 0);
    for (const auto& [node, lab] : raw_labels) (*labels)[node_id.at(node)] = lab_id.at(lab);
  }

  auto g = AttributedGraph::create(node_names.size(), std::move(edges), std::move(features), std::move(labels),
                                   opts.drop_self_loops);
  g.set_names(std::move(node_names), std::move(attr_names), std::move(label_names));
  return g;
}

inline void write_edges(const AttributedGraph& g, std::ostream& os) {
  const auto& names = g.node_names();
  for (const auto& e : g.edges()) os << names[e.u] << '\t' << names[e.v] << '\n';
}

inline void write_features(const AttributedGraph& g, std::ostream& os) {
  const auto& names = g.node_names();
  const auto& attrs = g.attr_names();
  for (const auto& t : g.features().triplets()) {
    os << names[t.row] << '\t' << attrs[t.col] << '\t' << detail::format_double(t.value) << '\n';
  }
}

inline void write_features_dense(const AttributedGraph& g, std::ostream& os) {
  os << "node";
  for (const auto& a : g.attr_names()) os << ',' << a;
  os << '\n';
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    os << g.node_names()[i];
    for (std::size_t j = 0; j < g.d_features(); ++j) os << ',' << detail::format_double(g.features().at(i, j));
    os << '\n';
  }
}

// Labels are written under their original names when known.
inline void write_labels(const AttributedGraph& g, std::ostream& os) {
  if (!g.labels()) return;
  const auto& ln = g.label_names();
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    int l = (*g.labels())[i];
    os << g.node_names()[i] << '\t'
       << (static_cast<std::size_t>(l) < ln.size() ? ln[static_cast<std::size_t>(l)] : std::to_string(l)) << '\n';
  }
}

struct DatasetPaths {
  std::filesystem::path edges;
  std::filesystem::path features;
  std::optional<std::filesystem::path> labels;

  static DatasetPaths in(const std::filesystem::path& dir) {
    DatasetPaths p;
    p.edges = dir / "edges.tsv";
    p.features = std::filesystem::exists(dir / "features.csv") && !std::filesystem::exists(dir / "features.tsv")
                     ? dir / "features.csv"
                     : dir / "features.tsv";
    if (std::filesystem::exists(dir / "labels.tsv")) p.labels = dir / "labels.tsv";
    return p;
  }
};

inline AttributedGraph load_dataset(const std::filesystem::path& dir, const LoadOptions& opts = {}) {
  if (!std::filesystem::is_directory(dir)) throw ValidationError("dataset directory not found: " + dir.string());
  auto p = DatasetPaths::in(dir);
  return load_attributed_graph(p.edges, p.features, p.labels, opts);
}

inline void write_attributed_graph(const AttributedGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "edges.tsv", std::ios::binary);
    write_edges(g, os);
  }
  {
    std::ofstream os(dir / "features.tsv", std::ios::binary);
    write_features(g, os);
  }
  if (g.labels()) {
    std::ofstream os(dir / "labels.tsv", std::ios::binary);
    write_labels(g, os);
  }
}

// ---------------------------------------------------------------------------
// Heterogeneity lifting

enum class NodeType : std::uint8_t { Entity, Attribute };
enum class EdgeType : std::uint8_t { EE, EA, AE };

inline constexpr EdgeType kEdgeTypes[] = {EdgeType::EE, EdgeType::EA, EdgeType::AE};

inline const char* to_string(EdgeType t) {
  switch (t) {
    case EdgeType::EE: return "EE";
    case EdgeType::EA: return "EA";
    case EdgeType::AE: return "AE";
  }
  return "?";
}

// Node type at the source / target end of an edge type.
inline NodeType source_type(EdgeType t) { return t == EdgeType::AE ? NodeType::Attribute : NodeType::Entity; }
inline NodeType target_type(EdgeType t) { return t == EdgeType::EA ? NodeType::Attribute : NodeType::Entity; }

struct TypedEdge {
  std::size_t src;
  std::size_t dst;
  EdgeType type;
  double weight;
};

struct LiftOptions {
  // Use 1 for every EA edge instead of the feature value.
  bool binary = false;
};

/// Entities and active attributes as one typed node set. Entities occupy
/// ids [0, n), attribute nodes [n, n + a). Typed adjacencies are kept both as
/// blocks (EE n x n, EA n x a, AE a x n) and embedded in the full space.
class HeteroGraph {
 public:
  std::size_t entity_count() const noexcept { return n_; }
  std::size_t attribute_count() const noexcept { return a_; }
  std::size_t node_count() const noexcept { return n_ + a_; }
  const std::vector<NodeType>& node_types() const noexcept { return node_types_; }
  const std::vector<TypedEdge>& typed_edges() const noexcept { return typed_edges_; }
  // Feature column of attribute node k (k in [0, a)).
  const std::vector<std::size_t>& attribute_columns() const noexcept { return attr_cols_; }

  const SparseMatrix& block(EdgeType t) const {
    switch (t) {
      case EdgeType::EE: return ee_;
      case EdgeType::EA: return ea_;
      case EdgeType::AE: return ae_;
    }
    return ee_;
  }

  // The typed adjacency A_e embedded in the (n + a) x (n + a) index space.
  SparseMatrix type_adjacency(EdgeType t) const {
    const SparseMatrix& b = block(t);
    std::size_t row_off = source_type(t) == NodeType::Entity ? 0 : n_;
    std::size_t col_off = target_type(t) == NodeType::Entity ? 0 : n_;
    std::vector<Triplet> trips;
    for (const auto& x : b.triplets()) trips.push_back({x.row + row_off, x.col + col_off, x.value});
    return SparseMatrix::from_triplets(node_count(), node_count(), std::move(trips));
  }

  std::size_t node_type_count() const {
    return (n_ > 0 ? 1 : 0) + (a_ > 0 ? 1 : 0);
  }
  std::size_t edge_type_count() const {
    return (ee_.nnz() > 0 ? 1 : 0) + (ea_.nnz() > 0 ? 2 : 0);
  }

 private:
  friend HeteroGraph to_heterogeneous(const AttributedGraph&, const LiftOptions&);
  std::size_t n_ = 0;
  std::size_t a_ = 0;
  std::vector<NodeType> node_types_;
  std::vector<TypedEdge> typed_edges_;
  std::vector<std::size_t> attr_cols_;
  SparseMatrix ee_, ea_, ae_;
};

inline HeteroGraph to_heterogeneous(const AttributedGraph& g, const LiftOptions& opts = {}) {
  HeteroGraph h;
  h.n_ = g.n_nodes();
  std::vector<std::size_t> col_to_attr(g.d_features(), SIZE_MAX);
  {
    std::vector<char> on(g.d_features(), 0);
    for (auto c : g.features().col_idx()) on[c] = 1;
    for (std::size_t j = 0; j < g.d_features(); ++j) {
      if (on[j]) {
        col_to_attr[j] = h.attr_cols_.size();
        h.attr_cols_.push_back(j);
      }
    }
  }
  h.a_ = h.attr_cols_.size();
  if (h.a_ == 0) throw ValidationError("graph has no active features; heterogeneity condition unmet");

  h.node_types_.assign(h.n_, NodeType::Entity);
  h.node_types_.resize(h.n_ + h.a_, NodeType::Attribute);

  h.ee_ = g.adjacency();
  for (const auto& e : g.edges()) h.typed_edges_.push_back({e.u, e.v, EdgeType::EE, 1.0});

  std::vector<Triplet> ea;
  for (const auto& t : g.features().triplets()) {
    double w = opts.binary ? 1.0 : t.value;
    std::size_t k = col_to_attr[t.col];
    ea.push_back({t.row, k, w});
    h.typed_edges_.push_back({t.row, h.n_ + k, EdgeType::EA, w});
  }
  h.ea_ = SparseMatrix::from_triplets(h.n_, h.a_, std::move(ea));
  h.ae_ = h.ea_.transpose();
  for (const auto& t : h.ae_.triplets()) h.typed_edges_.push_back({h.n_ + t.row, t.col, EdgeType::AE, t.value});
  return h;
}

// ---------------------------------------------------------------------------
// Planted-partition generator

struct SbmConfig {
  std::vector<std::size_t> blocks{50, 50, 50, 50};
  double p_in = 0.15;
  double p_out = 0.01;
  std::size_t n_attrs = 20;
  std::size_t signature_size = 5;
  double p_sig = 0.8;
  double p_noise = 0.05;
  std::uint64_t seed = 7;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (blocks.empty()) throw ConfigError("sbm: at least one block required");
    for (auto b : blocks) {
      if (b == 0) throw ConfigError("sbm: block sizes must be positive");
    }
    if (!prob(p_in) || !prob(p_out) || !prob(p_sig) || !prob(p_noise)) {
      throw ConfigError("sbm: probabilities must lie in [0, 1]");
    }
    if (!(p_in > p_out)) throw ConfigError("sbm: p_in must exceed p_out");
    if (signature_size * blocks.size() > n_attrs) {
      throw ConfigError("sbm: signature_size x blocks exceeds n_attrs");
    }
  }
};

/// Block b owns attribute columns [b*s, (b+1)*s). Its nodes carry those with
/// probability p_sig and every other attribute with p_noise.
inline AttributedGraph generate_sbm(const SbmConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::stream(cfg.seed, "sbm");
  std::size_t n = 0;
  std::vector<int> labels;
  for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
    labels.insert(labels.end(), cfg.blocks[b], static_cast<int>(b));
    n += cfg.blocks[b];
  }
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double p = labels[i] == labels[j] ? cfg.p_in : cfg.p_out;
      if (rng.bernoulli(p)) edges.push_back({i, j});
    }
  }
  std::vector<Triplet> feats;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = static_cast<std::size_t>(labels[i]) * cfg.signature_size;
    std::size_t hi = lo + cfg.signature_size;
    for (std::size_t f = 0; f < cfg.n_attrs; ++f) {
      double p = (f >= lo && f < hi) ? cfg.p_sig : cfg.p_noise;
      if (rng.bernoulli(p)) feats.push_back({i, f, 1.0});
    }
  }
  auto x = SparseMatrix::from_triplets(n, cfg.n_attrs, std::move(feats));
  return AttributedGraph::create(n, std::move(edges), std::move(x), std::move(labels));
}

}  // namespace hacd
