#pragma once

// Command-line front end: synth, ingest, train, evaluate, ablate, gradcheck.
// Exit codes: 0 success, 1 gradcheck failure or unexpected error,
// 2 input/config error, 3 numerical failure.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hacd/graph.hpp"
#include "hacd/metrics.hpp"
#include "hacd/objectives.hpp"
#include "hacd/report.hpp"
#include "hacd/trainer.hpp"

namespace hacd::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kFailed = 1, kInputError = 2, kNumericError = 3 };

inline std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// One per command invocation, written as <out>/<command>.manifest.json.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    started_at_ = buf;
  }

  void set_config(json c) { config_ = std::move(c); }
  void set_out_dir(fs::path dir) { out_dir_ = std::move(dir); }
  void add_input(const fs::path& p) {
    if (fs::is_regular_file(p)) inputs_.push_back({p.string(), sha256_file(p)});
  }
  void add_dataset(const fs::path& dir) {
    auto p = DatasetPaths::in(dir);
    add_input(p.edges);
    add_input(p.features);
    if (p.labels) add_input(*p.labels);
  }
  void add_output(const fs::path& p) { outputs_.push_back(p); }

  // Best effort: a manifest that cannot be written must not mask the
  // command's own exit status.
  void write(int status, std::ostream& err) const {
    if (out_dir_.empty()) return;
    try {
      fs::create_directories(out_dir_);
      json outs = json::array();
      for (const auto& p : outputs_) {
        json o{{"path", p.string()}};
        if (fs::is_regular_file(p)) o["sha256"] = sha256_file(p);
        outs.push_back(o);
      }
      json ins = json::array();
      for (const auto& [path, digest] : inputs_) ins.push_back(json{{"path", path}, {"sha256", digest}});
      json m{{"schema", report::kManifestSchema},
             {"command", command_},
             {"config", config_},
             {"inputs", ins},
             {"outputs", outs},
             {"threads", hacd::detail::kernel_threads()},
             {"started_at", started_at_},
             {"duration_seconds",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
             {"exit_status", status}};
      std::ofstream os(out_dir_ / (command_ + ".manifest.json"), std::ios::binary);
      os << m.dump(2) << '\n';
    } catch (const std::exception& e) {
      err << "warning: could not write manifest: " << e.what() << '\n';
    }
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::string started_at_;
  json config_ = json::object();
  fs::path out_dir_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<fs::path> outputs_;
};

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline std::string assignment_tsv(const AttributedGraph& g, const CommunityAssignment& c) {
  std::string out;
  for (std::size_t i = 0; i < g.n_nodes(); ++i) out += g.node_names()[i] + "\t" + std::to_string(c[i]) + "\n";
  return out;
}

/// Reads `node<TAB>community`. Every dataset node must appear exactly once.
inline std::vector<int> read_assignment(const fs::path& path, const AttributedGraph& g) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.n_nodes(); ++i) index[g.node_names()[i]] = i;
  std::vector<std::string> raw(g.n_nodes());
  std::vector<char> seen(g.n_nodes(), 0);
  for (const auto& l : detail::read_lines(path)) {
    auto f = detail::split_fields(l.text, '\t');
    if (f.size() != 2) throw ParseError(path.string(), l.number, "expected node<TAB>community");
    auto it = index.find(f[0]);
    if (it == index.end()) throw ParseError(path.string(), l.number, "unknown node '" + f[0] + "'");
    if (seen[it->second]) throw ParseError(path.string(), l.number, "duplicate node '" + f[0] + "'");
    seen[it->second] = 1;
    raw[it->second] = f[1];
  }
  std::size_t missing = 0;
  for (char s : seen) missing += s ? 0 : 1;
  if (missing) throw ValidationError("assignment covers " + std::to_string(g.n_nodes() - missing) + " of " +
                                     std::to_string(g.n_nodes()) + " nodes");
  std::map<std::string, int, bool (*)(std::string_view, std::string_view)> ids(&detail::natural_less);
  for (const auto& r : raw) ids.emplace(r, 0);
  int next = 0;
  for (auto& [name, id] : ids) id = next++;
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = ids[raw[i]];
  return out;
}

inline metrics::F1Average parse_f1(const std::string& s) {
  if (s == "macro") return metrics::F1Average::Macro;
  if (s == "weighted") return metrics::F1Average::Weighted;
  throw ConfigError("--f1 must be macro or weighted");
}

struct TrainOutcome {
  json report;
  CommunityAssignment assignment;
  bool diverged = false;
  std::string message;
};

/// Runs training (optionally resumed), writes report.json, model.ckpt and
/// assignment.tsv under `out`. Divergence keeps the last good checkpoint.
inline TrainOutcome run_training(const AttributedGraph& g, const TrainConfig& cfg, const fs::path& out,
                                 const std::optional<fs::path>& resume, metrics::F1Average f1, std::size_t log_every,
                                 std::ostream& log, Manifest* manifest) {
  fs::create_directories(out);
  std::optional<Trainer> trainer;
  std::uint64_t resumed_from = 0;
  if (resume) {
    trainer.emplace(g, cfg, load_checkpoint(*resume));
    resumed_from = trainer->state().step;
    if (manifest) manifest->add_input(*resume);
  } else {
    trainer.emplace(g, cfg);
  }
  std::vector<HistoryRow> history;
  TrainOutcome res;
  while (trainer->state().step < cfg.epochs) {
    try {
      history.push_back(trainer->step());
    } catch (const NumericError& e) {
      res.diverged = true;
      res.message = "training diverged at epoch " + std::to_string(trainer->state().step + 1) + ": " + e.what();
      break;
    }
    const auto& h = history.back();
    if (log_every && (h.epoch % log_every == 0 || h.epoch == 1)) {
      log << "epoch " << h.epoch << "  loss " << h.loss << "  Q~ " << h.q_tilde << "  L_A " << h.l_a << '\n';
    }
  }

  save_checkpoint(trainer->state(), out / "model.ckpt");
  json rep{{"schema", report::kReportSchema},
           {"status", res.diverged ? "diverged" : "ok"},
           {"dataset", report::dataset_summary(g)},
           {"config", report::to_json(cfg)},
           {"resumed_from_step", resumed_from},
           {"history", report::to_json(history)}};
  if (res.diverged) {
    rep["error"] = res.message;
  } else {
    auto snap = trainer->snapshot();
    res.assignment = assign_communities(snap.membership);
    double q = classic_modularity(g, res.assignment);
    json fin{{"communities", trainer->model().k()},
             {"q_tilde", generalized_modularity(snap.membership, trainer->model().modularity_context())},
             {"modularity", q}};
    if (g.has_labels()) fin["metrics"] = report::to_json(metrics::evaluate(res.assignment.labels(), *g.labels(), q, f1));
    fin["beta"] = std::vector<double>(snap.beta.data().begin(), snap.beta.data().end());
    rep["final"] = fin;
    auto layers = trainer->model().conv_layers(trainer->state().params[ParamLayout::type_logits].value);
    rep["metapaths"] = report::metapath_provenance(snap.metapaths, layers, snap.beta);
    write_text(out / "assignment.tsv", assignment_tsv(g, res.assignment));
    if (manifest) manifest->add_output(out / "assignment.tsv");
  }
  write_json(out / "report.json", rep);
  if (manifest) {
    manifest->add_output(out / "report.json");
    manifest->add_output(out / "model.ckpt");
  }
  res.report = std::move(rep);
  return res;
}

// Options shared by train and ablate.
struct TrainFlags {
  TrainConfig cfg;
  std::string loss = "full";
  std::string init = "kmeans";
  std::string f1 = "macro";
  bool drop_self_loops = false;
  std::size_t log_every = 50;

  void add_to(CLI::App* app, bool with_loss) {
    app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    app->add_option("--dim", cfg.dim, "Embedding width d'")->capture_default_str();
    app->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str();
    app->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
    app->add_option("--lambda", cfg.lambda, "Weight of the attribute cohesiveness loss")->capture_default_str();
    app->add_option("--r1", cfg.r1, "Intra-community pair weight")->capture_default_str();
    app->add_option("--r2", cfg.r2, "Inter-community pair weight")->capture_default_str();
    app->add_option("--layers", cfg.layers, "Heterogeneous convolution layers (meta-path count)")->capture_default_str();
    app->add_option("--topk,--top-k", cfg.top_k, "Neighbors kept per node and meta-path")->capture_default_str();
    app->add_option("--order", cfg.order, "Proximity order T")->capture_default_str();
    app->add_option("--decay", cfg.decay, "Proximity decay theta")->capture_default_str();
    app->add_option("--pair-budget", cfg.pair_budget, "Sampled pairs per contrastive term")->capture_default_str();
    app->add_option("--seed", cfg.seed, "Base seed")->capture_default_str();
    if (with_loss) app->add_option("--loss", loss, "full | a2m | cmf")->capture_default_str();
    app->add_option("--init", init, "Membership init: labels | kmeans | random")->capture_default_str();
    app->add_option("--k", cfg.k, "Community count (default: from labels)");
    app->add_option("--heads", cfg.heads, "Attention heads (only 1 supported)")->capture_default_str();
    app->add_option("--init-margin", cfg.init_margin, "Membership head bias scale on M_init")->capture_default_str();
    app->add_flag("--binary-lift", cfg.binary_lift, "Attribute edges weigh 1 instead of the feature value");
    app->add_flag("--paper-literal-eq3", cfg.paper_literal_eq3, "Literal node-attention denominator");
    app->add_flag("--inter-on-cut-edges", cfg.cut_edge_inter, "Inter-community pairs from cut edges only");
    app->add_flag("--drop-self-loops", drop_self_loops, "Drop self-loop edges instead of rejecting them");
    app->add_option("--f1", f1, "F1 averaging: macro | weighted")->capture_default_str();
    app->add_option("--log-every", log_every, "Progress line every N epochs (0: quiet)")->capture_default_str();
  }

  TrainConfig resolved() const {
    TrainConfig c = cfg;
    c.loss_mode = parse_loss_mode(loss);
    c.init_mode = parse_init_mode(init);
    c.validate();
    return c;
  }
};

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"hacd: attributed community detection with heterogeneous meta-path attention"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hacd 0.1.0");

  // synth
  SbmConfig sbm;
  std::string synth_out;
  bool synth_dense = false;
  auto* synth = app.add_subcommand("synth", "Generate a planted-partition attributed graph");
  synth->add_option("--blocks", sbm.blocks, "Block sizes, comma separated")->delimiter(',')->capture_default_str();
  synth->add_option("--p-in", sbm.p_in, "Within-block edge probability")->capture_default_str();
  synth->add_option("--p-out", sbm.p_out, "Between-block edge probability")->capture_default_str();
  synth->add_option("--attrs", sbm.n_attrs, "Attribute count")->capture_default_str();
  synth->add_option("--signature-size", sbm.signature_size, "Signature attributes per block")->capture_default_str();
  synth->add_option("--p-sig", sbm.p_sig, "Probability of carrying an own-signature attribute")->capture_default_str();
  synth->add_option("--p-noise", sbm.p_noise, "Probability of carrying any other attribute")->capture_default_str();
  synth->add_option("--seed", sbm.seed, "Seed")->capture_default_str();
  synth->add_option("-o,--out", synth_out, "Output dataset directory")->required();
  synth->add_flag("--dense-features", synth_dense, "Write features.csv (dense) instead of features.tsv");

  // ingest
  std::string in_edges, in_features, in_labels, ingest_out;
  bool ingest_drop = false;
  auto* ingest = app.add_subcommand("ingest", "Validate raw files and write a canonical dataset directory");
  ingest->add_option("--edges", in_edges, "Edge list (TSV)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--features", in_features, "Features (sparse TSV or dense CSV)")->required()->check(CLI::ExistingFile);
  ingest->add_option("--labels", in_labels, "Labels (TSV)")->check(CLI::ExistingFile);
  ingest->add_flag("--drop-self-loops", ingest_drop, "Drop self-loop edges instead of rejecting them");
  ingest->add_option("-o,--out", ingest_out, "Output dataset directory")->required();

  // train
  TrainFlags tf;
  std::string train_data, train_out = "hacd-run", train_resume;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset directory");
  train_cmd->add_option("data", train_data, "Dataset directory")->required();
  tf.add_to(train_cmd, true);
  train_cmd->add_option("-o,--out", train_out, "Output directory")->capture_default_str();
  train_cmd->add_option("--resume", train_resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  // evaluate
  std::string ev_assign, ev_data, ev_out, ev_f1 = "macro";
  auto* evaluate = app.add_subcommand("evaluate", "Score an assignment against dataset labels");
  evaluate->add_option("assignment", ev_assign, "assignment.tsv")->required();
  evaluate->add_option("data", ev_data, "Dataset directory")->required();
  evaluate->add_option("--f1", ev_f1, "F1 averaging: macro | weighted")->capture_default_str();
  evaluate->add_option("-o,--out", ev_out, "Output directory (default: the assignment's directory)");

  // ablate
  TrainFlags af;
  std::string ab_data, ab_out = "hacd-ablation";
  std::vector<std::string> ab_modes{"full", "cmf", "a2m"};
  auto* ablate = app.add_subcommand("ablate", "Train once per loss mode and compare");
  ablate->add_option("data", ab_data, "Dataset directory")->required();
  af.add_to(ablate, false);
  ablate->add_option("--modes", ab_modes, "Loss modes")->delimiter(',')->capture_default_str();
  ablate->add_option("-o,--out", ab_out, "Output directory")->capture_default_str();

  // gradcheck
  GradcheckOptions gc;
  double gc_tol = 1e-4;
  std::string gc_out = ".";
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full loss on a small fixture");
  gradcheck_cmd->add_option("--blocks", gc.blocks, "Planted blocks")->capture_default_str();
  gradcheck_cmd->add_option("--block-size", gc.block_size, "Nodes per block")->capture_default_str();
  gradcheck_cmd->add_option("--attrs", gc.attrs, "Attribute count")->capture_default_str();
  gradcheck_cmd->add_option("--epsilon", gc.epsilon, "Central-difference step")->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", gc_tol, "Pass threshold on max relative error")->capture_default_str();
  gradcheck_cmd->add_option("--seed", gc.seed, "Fixture seed")->capture_default_str();
  gradcheck_cmd->add_flag("--paper-literal-eq3", gc.paper_literal_eq3, "Literal node-attention denominator");
  gradcheck_cmd->add_option("-o,--out", gc_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    app.exit(e, out, err);
    return kInputError;
  }

  std::string command = app.get_subcommands().front()->get_name();
  Manifest manifest(command);
  int status = kOk;
  try {
    if (app.got_subcommand(synth)) {
      manifest.set_out_dir(synth_out);
      manifest.set_config(json{{"sbm", report::to_json(sbm)}, {"dense_features", synth_dense}});
      AttributedGraph g = generate_sbm(sbm);
      fs::create_directories(synth_out);
      write_attributed_graph(g, synth_out);
      if (synth_dense) {
        fs::remove(fs::path(synth_out) / "features.tsv");
        std::ofstream os(fs::path(synth_out) / "features.csv", std::ios::binary);
        write_features_dense(g, os);
      }
      auto p = DatasetPaths::in(synth_out);
      manifest.add_output(p.edges);
      manifest.add_output(p.features);
      manifest.add_output(*p.labels);
      out << "wrote " << g.n_nodes() << " nodes, " << g.n_edges() << " edges, " << g.d_features() << " attributes to "
          << synth_out << '\n';
    } else if (app.got_subcommand(ingest)) {
      manifest.set_out_dir(ingest_out);
      manifest.set_config(json{{"drop_self_loops", ingest_drop}});
      manifest.add_input(in_edges);
      manifest.add_input(in_features);
      std::optional<fs::path> labels;
      if (!in_labels.empty()) {
        labels = in_labels;
        manifest.add_input(in_labels);
      }
      AttributedGraph g = load_attributed_graph(in_edges, in_features, labels, LoadOptions{ingest_drop});
      write_attributed_graph(g, ingest_out);
      auto p = DatasetPaths::in(ingest_out);
      manifest.add_output(p.edges);
      manifest.add_output(p.features);
      if (p.labels) manifest.add_output(*p.labels);
      out << report::dataset_summary(g).dump() << '\n';
    } else if (app.got_subcommand(train_cmd)) {
      manifest.set_out_dir(train_out);
      TrainConfig cfg = tf.resolved();
      manifest.set_config(report::to_json(cfg));
      auto f1 = parse_f1(tf.f1);
      AttributedGraph g = load_dataset(train_data, LoadOptions{tf.drop_self_loops});
      manifest.add_dataset(train_data);
      std::optional<fs::path> resume;
      if (!train_resume.empty()) resume = train_resume;
      auto res = run_training(g, cfg, train_out, resume, f1, tf.log_every, err, &manifest);
      if (res.diverged) {
        err << "error: " << res.message << " (last good checkpoint kept in " << train_out << ")\n";
        status = kNumericError;
      } else {
        const json& fin = res.report["final"];
        out << "modularity " << fin["modularity"].get<double>();
        if (fin.contains("metrics")) {
          out << "  nmi " << fin["metrics"]["nmi"].get<double>() << "  acc " << fin["metrics"]["acc"].get<double>();
        }
        out << '\n';
      }
    } else if (app.got_subcommand(evaluate)) {
      fs::path out_dir = ev_out.empty() ? fs::path(ev_assign).parent_path() : fs::path(ev_out);
      if (out_dir.empty()) out_dir = ".";
      manifest.set_out_dir(out_dir);
      manifest.set_config(json{{"f1", ev_f1}});
      auto f1 = parse_f1(ev_f1);
      AttributedGraph g = load_dataset(ev_data);
      manifest.add_dataset(ev_data);
      manifest.add_input(ev_assign);
      auto pred = read_assignment(ev_assign, g);
      if (!g.has_labels()) throw ValidationError("dataset has no labels.tsv to evaluate against");
      CommunityAssignment c(pred);
      auto rep = metrics::evaluate(pred, *g.labels(), classic_modularity(g, c), f1);
      json j = report::to_json(rep);
      j["schema"] = report::kMetricsSchema;
      fs::create_directories(out_dir);
      write_json(out_dir / "metrics.json", j);
      write_text(out_dir / "metrics.csv", report::metrics_csv_header() + "\n" + report::metrics_csv_row(rep) + "\n");
      manifest.add_output(out_dir / "metrics.json");
      manifest.add_output(out_dir / "metrics.csv");
      out << report::to_json(rep).dump() << '\n';
    } else if (app.got_subcommand(ablate)) {
      manifest.set_out_dir(ab_out);
      TrainConfig base = af.resolved();
      json cfg_echo = report::to_json(base);
      cfg_echo.erase("loss");
      cfg_echo["modes"] = ab_modes;
      manifest.set_config(cfg_echo);
      auto f1 = parse_f1(af.f1);
      AttributedGraph g = load_dataset(ab_data, LoadOptions{af.drop_self_loops});
      manifest.add_dataset(ab_data);
      json rows = json::array();
      std::string csv = "mode," + report::metrics_csv_header() + "\n";
      for (const auto& mode : ab_modes) {
        TrainConfig cfg = base;
        cfg.loss_mode = parse_loss_mode(mode);
        err << "== " << mode << '\n';
        auto res = run_training(g, cfg, fs::path(ab_out) / mode, std::nullopt, f1, af.log_every, err, &manifest);
        if (res.diverged) {
          err << "error: " << mode << ": " << res.message << '\n';
          status = kNumericError;
          rows.push_back(json{{"mode", mode}, {"status", "diverged"}});
          continue;
        }
        const json& fin = res.report["final"];
        json row{{"mode", mode}, {"status", "ok"}, {"modularity", fin["modularity"]}};
        metrics::MetricReport m;
        m.modularity = fin["modularity"].get<double>();
        if (fin.contains("metrics")) {
          row["metrics"] = fin["metrics"];
          m.acc = fin["metrics"]["acc"].get<double>();
          m.nmi = fin["metrics"]["nmi"].get<double>();
          m.ari = fin["metrics"]["ari"].get<double>();
          m.f1 = fin["metrics"]["f1"].get<double>();
        }
        csv += mode + "," + report::metrics_csv_row(m) + "\n";
        rows.push_back(row);
      }
      write_json(fs::path(ab_out) / "ablation.json", json{{"schema", "hacd.ablation/1"}, {"runs", rows}});
      write_text(fs::path(ab_out) / "ablation.csv", csv);
      manifest.add_output(fs::path(ab_out) / "ablation.json");
      manifest.add_output(fs::path(ab_out) / "ablation.csv");
      out << csv;
    } else if (app.got_subcommand(gradcheck_cmd)) {
      manifest.set_out_dir(gc_out);
      manifest.set_config(json{{"blocks", gc.blocks},
                               {"block_size", gc.block_size},
                               {"attrs", gc.attrs},
                               {"epsilon", gc.epsilon},
                               {"tolerance", gc_tol},
                               {"seed", gc.seed},
                               {"paper_literal_eq3", gc.paper_literal_eq3}});
      auto res = gradcheck(gc, gc_tol);
      json j{{"schema", "hacd.gradcheck/1"},
             {"passed", res.passed},
             {"nodes", res.nodes},
             {"parameters", res.parameters},
             {"entries_checked", res.report.entries_checked},
             {"max_rel_err", res.report.max_rel_err},
             {"worst_param", res.report.worst_param},
             {"worst_index", res.report.worst_index},
             {"worst_analytic", res.report.worst_analytic},
             {"worst_numeric", res.report.worst_numeric},
             {"all_finite", res.report.all_finite}};
      fs::create_directories(gc_out);
      write_json(fs::path(gc_out) / "gradcheck.json", j);
      manifest.add_output(fs::path(gc_out) / "gradcheck.json");
      out << (res.passed ? "PASS" : "FAIL") << "  max_rel_err " << res.report.max_rel_err << "  worst "
          << res.report.worst_param << "[" << res.report.worst_index << "]  (" << res.report.entries_checked
          << " entries, " << res.nodes << " nodes)\n";
      status = res.passed ? kOk : kFailed;
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    status = kNumericError;
  } catch (const Error& e) {
    // Parse, validation, config and shape errors all stem from the inputs.
    err << "error: " << e.what() << '\n';
    status = kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    status = kFailed;
  }
  manifest.write(status, err);
  return status;
}

}  // namespace hacd::cli
