#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "hacd/error.hpp"

namespace hacd::metrics {

/// Counts of (predicted, true) label co-occurrence over dense relabelings of
/// both label vectors.
struct ContingencyTable {
  std::vector<std::vector<long>> counts;  // k_pred x k_true
  long n = 0;

  std::size_t k_pred() const { return counts.size(); }
  std::size_t k_true() const { return counts.empty() ? 0 : counts.front().size(); }

  std::vector<long> pred_sizes() const {
    std::vector<long> s(k_pred(), 0);
    for (std::size_t p = 0; p < k_pred(); ++p)
      for (long c : counts[p]) s[p] += c;
    return s;
  }
  std::vector<long> true_sizes() const {
    std::vector<long> s(k_true(), 0);
    for (const auto& row : counts)
      for (std::size_t t = 0; t < row.size(); ++t) s[t] += row[t];
    return s;
  }
};

namespace detail {

inline std::vector<std::size_t> densify(const std::vector<int>& labels, std::size_t& k) {
  std::map<int, std::size_t> ids;
  for (int l : labels) ids.emplace(l, 0);
  std::size_t next = 0;
  for (auto& [l, id] : ids) id = next++;
  k = next;
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = ids[labels[i]];
  return out;
}

inline void check_lengths(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size()) {
    throw ValidationError("metric: length mismatch (" + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()) + ")");
  }
}

}  // namespace detail

inline ContingencyTable contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
  detail::check_lengths(pred, truth);
  std::size_t kp = 0, kt = 0;
  auto p = detail::densify(pred, kp);
  auto t = detail::densify(truth, kt);
  ContingencyTable ct;
  ct.counts.assign(kp, std::vector<long>(kt, 0));
  for (std::size_t i = 0; i < p.size(); ++i) ++ct.counts[p[i]][t[i]];
  ct.n = static_cast<long>(pred.size());
  return ct;
}

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn-Munkres
/// with potentials, O(n^3)). Returns row -> column.
inline std::vector<std::size_t> hungarian_min(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

enum class F1Average { Macro, Weighted };

namespace detail {

inline double pair_f1(long tp, long pred_size, long true_size) {
  if (tp == 0) return 0.0;
  double precision = static_cast<double>(tp) / static_cast<double>(pred_size);
  double recall = static_cast<double>(tp) / static_cast<double>(true_size);
  return 2.0 * precision * recall / (precision + recall);
}

// Mapping true class -> predicted class (or >= k_pred for a padding row).
// Primary objective: matched count (the accuracy optimum). Among mappings
// reaching it, the per-class F1 sum is maximized so the reported F1 does not
// depend on how ties are broken.
inline std::vector<std::size_t> align(const ContingencyTable& ct, F1Average avg) {
  const std::size_t K = std::max(ct.k_pred(), ct.k_true());
  auto ps = ct.pred_sizes();
  auto ts = ct.true_sizes();
  const double big = static_cast<double>(K + 1);
  std::vector<std::vector<double>> cost(K, std::vector<double>(K, 0.0));
  for (std::size_t t = 0; t < K; ++t)
    for (std::size_t p = 0; p < K; ++p) {
      if (t >= ct.k_true() || p >= ct.k_pred()) continue;
      long c = ct.counts[p][t];
      double f1 = pair_f1(c, ps[p], ts[t]);
      if (avg == F1Average::Weighted) f1 *= static_cast<double>(ts[t]) / static_cast<double>(ct.n);
      cost[t][p] = -(static_cast<double>(c) * big + f1);
    }
  return hungarian_min(cost);
}

}  // namespace detail

/// Best-permutation accuracy: the largest fraction of nodes matched under
/// any one-to-one relabeling of predicted communities.
inline double accuracy_hungarian(const std::vector<int>& pred, const std::vector<int>& truth) {
  detail::check_lengths(pred, truth);
  if (pred.empty()) throw ValidationError("accuracy: empty labels");
  auto ct = contingency(pred, truth);
  auto map = detail::align(ct, F1Average::Macro);
  long matched = 0;
  for (std::size_t t = 0; t < ct.k_true(); ++t)
    if (map[t] < ct.k_pred()) matched += ct.counts[map[t]][t];
  return static_cast<double>(matched) / static_cast<double>(ct.n);
}

inline double entropy(const std::vector<long>& sizes, long n) {
  double h = 0.0;
  for (long s : sizes) {
    if (s == 0) continue;
    double p = static_cast<double>(s) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h;
}

/// NMI with geometric-mean normalization. 1 for identical partitions
/// (including two constant ones); 0 when exactly one side is constant.
inline double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  detail::check_lengths(pred, truth);
  if (pred.empty()) throw ValidationError("nmi: empty labels");
  auto ct = contingency(pred, truth);
  const double n = static_cast<double>(ct.n);
  double hp = entropy(ct.pred_sizes(), ct.n), ht = entropy(ct.true_sizes(), ct.n);
  if (hp == 0.0 && ht == 0.0) return 1.0;
  if (hp == 0.0 || ht == 0.0) return 0.0;
  auto ps = ct.pred_sizes();
  auto ts = ct.true_sizes();
  double mi = 0.0;
  for (std::size_t p = 0; p < ct.k_pred(); ++p)
    for (std::size_t t = 0; t < ct.k_true(); ++t) {
      long c = ct.counts[p][t];
      if (c == 0) continue;
      double pij = static_cast<double>(c) / n;
      mi += pij * std::log(static_cast<double>(c) * n / (static_cast<double>(ps[p]) * static_cast<double>(ts[t])));
    }
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

/// Adjusted Rand index (Hubert-Arabie). A zero denominator yields 1 when the
/// partitions coincide and 0 otherwise.
inline double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
  detail::check_lengths(pred, truth);
  if (pred.size() < 2) throw ValidationError("ari: need at least 2 elements");
  auto ct = contingency(pred, truth);
  auto comb2 = [](long x) { return static_cast<double>(x) * static_cast<double>(x - 1) / 2.0; };
  double index = 0.0;
  for (const auto& row : ct.counts)
    for (long c : row) index += comb2(c);
  double sp = 0.0, st = 0.0;
  for (long s : ct.pred_sizes()) sp += comb2(s);
  for (long s : ct.true_sizes()) st += comb2(s);
  double total = comb2(ct.n);
  double expected = sp * st / total;
  double max_index = (sp + st) / 2.0;
  double denom = max_index - expected;
  if (denom == 0.0) return index == max_index ? 1.0 : 0.0;
  return (index - expected) / denom;
}

/// F1 over true classes after aligning predicted communities with the
/// accuracy mapping. A true class left without a predicted partner scores 0.
inline double f1_score(const std::vector<int>& pred, const std::vector<int>& truth, F1Average avg = F1Average::Macro) {
  detail::check_lengths(pred, truth);
  if (pred.empty()) throw ValidationError("f1: empty labels");
  auto ct = contingency(pred, truth);
  auto map = detail::align(ct, avg);
  auto ps = ct.pred_sizes();
  auto ts = ct.true_sizes();
  double acc = 0.0;
  for (std::size_t t = 0; t < ct.k_true(); ++t) {
    double f1 = map[t] < ct.k_pred() ? detail::pair_f1(ct.counts[map[t]][t], ps[map[t]], ts[t]) : 0.0;
    acc += avg == F1Average::Macro ? f1 : f1 * static_cast<double>(ts[t]) / static_cast<double>(ct.n);
  }
  return avg == F1Average::Macro ? acc / static_cast<double>(ct.k_true()) : acc;
}

inline double f1_macro(const std::vector<int>& pred, const std::vector<int>& truth) {
  return f1_score(pred, truth, F1Average::Macro);
}

struct MetricReport {
  double acc = 0.0;
  double nmi = 0.0;
  double ari = 0.0;
  double f1 = 0.0;
  double modularity = 0.0;
};

inline MetricReport evaluate(const std::vector<int>& pred, const std::vector<int>& truth, double modularity,
                             F1Average avg = F1Average::Macro) {
  return {accuracy_hungarian(pred, truth), nmi(pred, truth), ari(pred, truth), f1_score(pred, truth, avg), modularity};
}

}  // namespace hacd::metrics
