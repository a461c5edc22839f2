// Acceptance driver: one PASS/FAIL/SKIP line per criterion, nonzero exit on
// any FAIL. Training criteria go through the CLI entry point so the artifacts
// checked are the ones a user would get.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <iostream>
#include <random>
#include <sstream>

#include "hacd/cli.hpp"
#include "oracles.hpp"

using namespace hacd;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome fail(std::string d) { return {Verdict::Fail, std::move(d)}; }
Outcome check(bool ok, std::string d) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(d)}; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

int hacd_run(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "hacd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

AttributedGraph random_plain(std::mt19937_64& rng, std::size_t n, double p) {
  std::bernoulli_distribution e(p);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (e(rng)) edges.push_back({i, j});
  if (edges.empty()) edges.push_back({0, 1});
  return AttributedGraph::create(n, edges, SparseMatrix(n, 1));
}

oracle::Dense dense_adj(const AttributedGraph& g) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (const auto& x : g.edges()) e.emplace_back(x.u, x.v);
  return oracle::adjacency(g.n_nodes(), e);
}

oracle::Dense dense_of(const SparseMatrix& s) {
  auto flat = s.to_dense();
  oracle::Dense d(s.rows(), std::vector<double>(s.cols()));
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < s.cols(); ++j) d[i][j] = flat[i * s.cols() + j];
  return d;
}

Tensor random_soft(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Tensor b(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (b(i, c) = u(rng));
    for (std::size_t c = 0; c < k; ++c) b(i, c) /= s;
  }
  return b;
}

oracle::Dense dense_of(const Tensor& t) {
  oracle::Dense d(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) d[i][j] = t(i, j);
  return d;
}

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Shared state between the training criteria.
struct Workspace {
  fs::path root;
  fs::path sbm;
  std::optional<json> full_report;  // criterion 6
  std::optional<json> ablation;     // criterion 7
  std::optional<fs::path> cora;     // criterion 8 output
  fs::path cora_data;
};

Outcome gradient_correctness(Workspace& ws) {
  auto t0 = std::chrono::steady_clock::now();
  std::string text;
  int code = hacd_run({"gradcheck", "-o", (ws.root / "gradcheck").string()}, &text);
  double secs = seconds_since(t0);
  auto j = read_json(ws.root / "gradcheck" / "gradcheck.json");
  double err = j["max_rel_err"].get<double>();
  bool ok = code == 0 && j["passed"].get<bool>() && err < 1e-4 && j["nodes"].get<std::size_t>() <= 15 && secs < 30;
  return check(ok, "max_rel_err " + fmt(err, 3) + ", " + std::to_string(j["nodes"].get<std::size_t>()) +
                       " nodes, worst " + j["worst_param"].get<std::string>() + ", " + fmt(secs, 3) + " s");
}

Outcome modularity_oracle(Workspace&) {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> nd(3, 12);
  double worst_hard = 0.0, worst_soft = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    auto g = random_plain(rng, nd(rng), 0.4);
    auto c = oracle::random_labels(rng, g.n_nodes(), 4);
    double q = classic_modularity(g, CommunityAssignment(c, 4));
    worst_hard = std::max(worst_hard, std::abs(q - oracle::modularity(dense_adj(g), c)));
  }
  for (int rep = 0; rep < 100; ++rep) {
    auto g = random_plain(rng, nd(rng), 0.4);
    auto ctx = higher_order_adjacency(g, 2, 0.5);
    auto b = random_soft(rng, g.n_nodes(), 3);
    double q = generalized_modularity(b, ctx);
    worst_soft = std::max(worst_soft, std::abs(q - oracle::soft_modularity(dense_of(ctx.a_tilde), dense_of(b))));
  }
  return check(worst_hard <= 1e-12 && worst_soft <= 1e-9,
               "classic max |diff| " + fmt(worst_hard, 3) + ", soft trace max |diff| " + fmt(worst_soft, 3));
}

Outcome reduction_law(Workspace&) {
  std::mt19937_64 rng(102);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    auto g = random_plain(rng, 10, 0.3);
    auto c = oracle::random_labels(rng, 10, 3);
    Tensor b(10, 3, 0.0);
    for (std::size_t i = 0; i < 10; ++i) b(i, static_cast<std::size_t>(c[i])) = 1.0;
    double d = generalized_modularity(b, higher_order_adjacency(g, 1, 0.5)) -
               classic_modularity(g, CommunityAssignment(c, 3));
    worst = std::max(worst, std::abs(d));
  }
  return check(worst <= 1e-12, "max |Q~ - Q| " + fmt(worst, 3) + " over 50 fixtures");
}

Outcome closed_forms(Workspace&) {
  auto mk = [](std::size_t n, std::vector<Edge> e) { return AttributedGraph::create(n, std::move(e), SparseMatrix(n, 1)); };
  auto tri = mk(3, {{0, 1}, {1, 2}, {0, 2}});
  auto two = mk(6, {{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}});
  double q1 = classic_modularity(tri, CommunityAssignment({0, 0, 0}));
  double q2 = classic_modularity(tri, CommunityAssignment({0, 1, 2}));
  double q3 = classic_modularity(two, CommunityAssignment({0, 0, 0, 1, 1, 1}));
  double q3_oracle = oracle::modularity(dense_adj(two), {0, 0, 0, 1, 1, 1});
  bool ok = std::abs(q1) <= 1e-12 && std::abs(q2 + 1.0 / 3.0) <= 1e-12 && std::abs(q3 - 0.5) <= 1e-12 &&
            std::abs(q3_oracle - 0.5) <= 1e-12;
  return check(ok, "Q = " + fmt(q1, 12) + ", " + fmt(q2, 12) + ", " + fmt(q3, 12));
}

Outcome metric_oracles(Workspace&) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nd(2, 20), kd(1, 5);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    std::size_t n = static_cast<std::size_t>(nd(rng));
    auto p = oracle::random_labels(rng, n, kd(rng));
    auto t = oracle::random_labels(rng, n, kd(rng));
    auto brute = oracle::brute_alignment(p, t);
    for (double d : {metrics::accuracy_hungarian(p, t) - brute.acc, metrics::f1_macro(p, t) - brute.f1_macro,
                     metrics::f1_score(p, t, metrics::F1Average::Weighted) - brute.f1_weighted,
                     metrics::nmi(p, t) - oracle::nmi(p, t), metrics::ari(p, t) - oracle::ari(p, t)})
      worst = std::max(worst, std::abs(d));
  }
  return check(worst <= 1e-10, "max |diff| " + fmt(worst, 3) + " over 200 fixtures");
}

std::vector<std::string> sbm_train_args(const Workspace& ws, const fs::path& out) {
  return {"train", ws.sbm.string(), "--epochs", "200", "--seed", "7", "--log-every", "0", "-o", out.string()};
}

Outcome planted_recovery(Workspace& ws) {
  auto t0 = std::chrono::steady_clock::now();
  int code = hacd_run(sbm_train_args(ws, ws.root / "c6"));
  double secs = seconds_since(t0);
  if (code != 0) return fail("train exited " + std::to_string(code));
  ws.full_report = read_json(ws.root / "c6" / "report.json");
  const auto& m = (*ws.full_report)["final"]["metrics"];
  double nmi = m["nmi"].get<double>(), acc = m["acc"].get<double>();
  return check(nmi >= 0.8 && acc >= 0.85 && secs < 120,
               "NMI " + fmt(nmi) + ", ACC " + fmt(acc) + ", " + fmt(secs, 3) + " s");
}

Outcome ablation_ordering(Workspace& ws) {
  auto t0 = std::chrono::steady_clock::now();
  int code = hacd_run({"ablate", ws.sbm.string(), "--epochs", "200", "--seed", "7", "--log-every", "0", "-o",
                       (ws.root / "c7").string()});
  double secs = seconds_since(t0);
  if (code != 0) return fail("ablate exited " + std::to_string(code));
  ws.ablation = read_json(ws.root / "c7" / "ablation.json");
  std::map<std::string, json> by_mode;
  for (const auto& r : (*ws.ablation)["runs"]) by_mode[r["mode"].get<std::string>()] = r;
  double q_cmf = by_mode["cmf"]["modularity"].get<double>(), q_a2m = by_mode["a2m"]["modularity"].get<double>();
  double n_full = by_mode["full"]["metrics"]["nmi"].get<double>();
  double n_cmf = by_mode["cmf"]["metrics"]["nmi"].get<double>();
  double n_a2m = by_mode["a2m"]["metrics"]["nmi"].get<double>();
  bool ok = q_cmf >= q_a2m && n_full >= std::max(n_cmf, n_a2m) - 0.02;
  return check(ok, "Q cmf " + fmt(q_cmf) + " vs a2m " + fmt(q_a2m) + "; NMI full " + fmt(n_full) + ", cmf " +
                       fmt(n_cmf) + ", a2m " + fmt(n_a2m) + ", " + fmt(secs, 3) + " s");
}

Outcome cora_check(Workspace& ws) {
  const char* dir = std::getenv("HACD_CORA_DIR");
  if (!dir || !*dir) return {Verdict::Skip, "HACD_CORA_DIR not set; Cora is user-supplied"};
  ws.cora_data = dir;
  auto t0 = std::chrono::steady_clock::now();
  std::string text;
  int code = hacd_run({"train", ws.cora_data.string(), "--seed", "7", "--log-every", "0", "-o",
                       (ws.root / "c8").string()},
                      &text);
  double secs = seconds_since(t0);
  if (code != 0) return fail("train exited " + std::to_string(code) + ": " + text);
  ws.cora = ws.root / "c8";
  auto rep = read_json(*ws.cora / "report.json");
  double q = rep["final"]["modularity"].get<double>();
  double nmi = rep["final"]["metrics"]["nmi"].get<double>();
  return check(q >= 0.55 && nmi >= 0.25 && secs < 300,
               "modularity " + fmt(q) + ", NMI " + fmt(nmi) + ", " + fmt(secs, 3) + " s");
}

Outcome determinism(Workspace& ws) {
  std::vector<std::string> notes;
  bool ok = true;
  auto same = [&](const fs::path& a, const fs::path& b, const std::string& what) {
    for (const char* f : {"report.json", "assignment.tsv", "model.ckpt"}) {
      if (read_bytes(a / f) != read_bytes(b / f)) {
        ok = false;
        notes.push_back(what + " " + f + " differs");
      }
    }
  };
  if (!ws.full_report) return fail("criterion 6 produced no run to repeat");
  if (hacd_run(sbm_train_args(ws, ws.root / "c9_full")) != 0) return fail("rerun of criterion 6 failed");
  same(ws.root / "c6", ws.root / "c9_full", "sbm");
  if (ws.ablation) {
    if (hacd_run({"ablate", ws.sbm.string(), "--epochs", "200", "--seed", "7", "--log-every", "0", "-o",
                  (ws.root / "c9_ablate").string()}) != 0)
      return fail("rerun of criterion 7 failed");
    for (const char* mode : {"full", "cmf", "a2m"}) same(ws.root / "c7" / mode, ws.root / "c9_ablate" / mode, mode);
  }
  std::string scope = ws.ablation ? "criteria 6 and 7" : "criterion 6";
  if (ws.cora) {
    if (hacd_run({"train", ws.cora_data.string(), "--seed", "7", "--log-every", "0", "-o",
                  (ws.root / "c9_cora").string()}) != 0)
      return fail("rerun of criterion 8 failed");
    same(*ws.cora, ws.root / "c9_cora", "cora");
    scope += " and 8";
  }
  std::string detail = "byte-identical report, assignment and checkpoint for " + scope;
  if (!ok) {
    detail.clear();
    for (const auto& n : notes) detail += n + "; ";
  }
  return check(ok, detail);
}

Outcome invariance(Workspace&) {
  std::mt19937_64 rng(303);
  double worst_row = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    ad::Tape t;
    auto s = ad::row_softmax(t.constant(random_tensor(rng, 7, 5, 10.0))).value();
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < s.cols(); ++j) sum += s(i, j);
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
  }

  // Node-attention, membership and semantic weights from real training states.
  double worst_model = 0.0;
  double worst_ckpt = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SbmConfig sc;
    sc.blocks = {8, 8, 8};
    sc.n_attrs = 9;
    sc.signature_size = 3;
    sc.p_in = 0.5;
    sc.p_out = 0.03;
    sc.seed = seed;
    auto g = generate_sbm(sc);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.dim = 8;
    cfg.top_k = 5;
    cfg.pair_budget = 64;
    cfg.seed = seed;
    Trainer tr(g, cfg);
    for (int e = 0; e < 3; ++e) tr.step();
    auto snap = tr.snapshot();
    for (std::size_t i = 0; i < snap.membership.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < snap.membership.cols(); ++c) sum += snap.membership(i, c);
      worst_model = std::max(worst_model, std::abs(sum - 1.0));
    }
    for (std::size_t i = 0; i < snap.beta.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < snap.beta.cols(); ++c) sum += snap.beta(i, c);
      worst_model = std::max(worst_model, std::abs(sum - 1.0));
    }
    for (const auto& mp : snap.metapaths) {
      ad::Tape t;
      auto a = node_attention_coeffs(t.constant(random_tensor(rng, g.n_nodes(), 4)), mp,
                                     t.constant(random_tensor(rng, 8, 1)))
                   .value();
      for (std::size_t i = 0; i < g.n_nodes(); ++i) {
        double sum = 0.0;
        for (std::size_t k = mp.pattern->row_ptr[i]; k < mp.pattern->row_ptr[i + 1]; ++k) sum += a[k];
        worst_model = std::max(worst_model, std::abs(sum - 1.0));
      }
    }

    // Save after three epochs, resume, and compare against an uninterrupted run.
    auto mid = serialize_checkpoint(tr.state());
    Trainer resumed(g, cfg, deserialize_checkpoint(mid));
    for (int e = 0; e < 3; ++e) {
      auto a = tr.step();
      auto b = resumed.step();
      worst_ckpt = std::max(worst_ckpt, std::abs(a.loss - b.loss));
    }
    if (!(tr.state() == resumed.state())) worst_ckpt = std::max(worst_ckpt, 1.0);
  }

  double worst_relabel = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    auto p = oracle::random_labels(rng, 15, 4);
    auto t = oracle::random_labels(rng, 15, 3);
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> q;
    for (int v : p) q.push_back(perm[static_cast<std::size_t>(v)] + 10);
    for (double d : {metrics::accuracy_hungarian(q, t) - metrics::accuracy_hungarian(p, t),
                     metrics::nmi(q, t) - metrics::nmi(p, t), metrics::ari(q, t) - metrics::ari(p, t),
                     metrics::f1_macro(q, t) - metrics::f1_macro(p, t)})
      worst_relabel = std::max(worst_relabel, std::abs(d));
  }
  bool ok = worst_row <= 1e-10 && worst_model <= 1e-10 && worst_relabel <= 1e-12 && worst_ckpt == 0.0;
  return check(ok, "softmax rows " + fmt(std::max(worst_row, worst_model), 3) + ", relabel " +
                       fmt(worst_relabel, 3) + ", resume loss diff " + fmt(worst_ckpt, 3));
}

}  // namespace

int main() {
  Workspace ws;
  std::random_device rd;
  ws.root = fs::temp_directory_path() / ("hacd_acceptance_" + std::to_string(rd()));
  fs::create_directories(ws.root);
  ws.sbm = ws.root / "sbm";

  int failures = 0;
  if (hacd_run({"synth", "--blocks", "50,50,50,50", "--p-in", "0.15", "--p-out", "0.01", "--attrs", "20",
                "--signature-size", "5", "--p-sig", "0.8", "--p-noise", "0.05", "--seed", "7", "-o",
                ws.sbm.string()}) != 0) {
    std::cout << "FAIL  setup: could not generate the SBM fixture\n";
    return 1;
  }

  const std::vector<std::pair<std::string, std::function<Outcome(Workspace&)>>> criteria{
      {"1 gradient correctness", gradient_correctness},
      {"2 modularity oracle equivalence", modularity_oracle},
      {"3 reduction law", reduction_law},
      {"4 closed-form fixtures", closed_forms},
      {"5 metric oracles", metric_oracles},
      {"6 planted-partition recovery", planted_recovery},
      {"7 ablation ordering", ablation_ordering},
      {"8 Cora directional check", cora_check},
      {"9 determinism", determinism},
      {"10 invariance suite", invariance},
  };

  for (const auto& [name, fn] : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ws);
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
    if (o.verdict == Verdict::Fail) ++failures;
    std::cout << tag << "  " << std::left << std::setw(34) << name << o.detail << "  [" << fmt(seconds_since(t0), 3)
              << " s]\n"
              << std::flush;
  }
  fs::remove_all(ws.root);
  std::cout << (failures ? std::to_string(failures) + " criterion(s) failed" : std::string("all criteria met"))
            << '\n';
  return failures ? 1 : 0;
}
