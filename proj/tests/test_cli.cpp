#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hacd/cli.hpp"

using namespace hacd;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run hacd_run(std::vector<std::string> args) {
  args.insert(args.begin(), "hacd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("hacd_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  // Small planted dataset: fast enough to train in a unit test.
  std::string small_dataset() {
    auto r = hacd_run({"synth", "--blocks", "10,10,10", "--p-in", "0.5", "--p-out", "0.02", "--attrs", "9",
                       "--signature-size", "3", "--seed", "5", "-o", path("data")});
    EXPECT_EQ(r.code, 0) << r.err;
    return path("data");
  }

  static nlohmann::json read_json(const std::string& p) {
    std::ifstream is(p);
    return nlohmann::json::parse(is);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SynthWritesDatasetAndManifest) {
  auto r = hacd_run({"synth", "--blocks", "50,50,50,50", "--p-in", "0.15", "--p-out", "0.01", "--seed", "7", "-o",
                     path("sbm")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"edges.tsv", "features.tsv", "labels.tsv", "synth.manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / "sbm" / f)) << f;
  auto m = read_json(path("sbm/synth.manifest.json"));
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["exit_status"], 0);
  EXPECT_EQ(m["outputs"].size(), 3u);
}

TEST_F(CliTest, SynthSameSeedSameDigests) {
  ASSERT_EQ(hacd_run({"synth", "--seed", "3", "-o", path("a")}).code, 0);
  ASSERT_EQ(hacd_run({"synth", "--seed", "3", "-o", path("b")}).code, 0);
  for (const char* f : {"edges.tsv", "features.tsv", "labels.tsv"})
    EXPECT_EQ(cli::sha256_file(dir_ / "a" / f), cli::sha256_file(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, SynthRejectsInvertedProbabilities) {
  auto r = hacd_run({"synth", "--p-in", "0.01", "--p-out", "0.15", "-o", path("bad")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST_F(CliTest, UnknownFlagIsInputError) { EXPECT_EQ(hacd_run({"synth", "--nope", "-o", path("x")}).code, 2); }

TEST_F(CliTest, TrainWritesArtifacts) {
  auto data = small_dataset();
  auto r = hacd_run({"train", data, "--epochs", "5", "--dim", "8", "--log-every", "0", "-o", path("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"report.json", "model.ckpt", "assignment.tsv", "train.manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  auto rep = read_json(path("run/report.json"));
  EXPECT_EQ(rep["history"].size(), 5u);
  EXPECT_EQ(rep["status"], "ok");
}

TEST_F(CliTest, TrainRejectsZeroEpochs) {
  auto data = small_dataset();
  EXPECT_EQ(hacd_run({"train", data, "--epochs", "0", "-o", path("run")}).code, 2);
}

TEST_F(CliTest, TrainLabelsInitWithoutLabelsIsInputError) {
  auto data = small_dataset();
  fs::remove(fs::path(data) / "labels.tsv");
  auto r = hacd_run({"train", data, "--init", "labels", "--k", "3", "--epochs", "2", "-o", path("run")});
  EXPECT_EQ(r.code, 2) << r.err;
}

TEST_F(CliTest, TrainResumeContinuesHistory) {
  auto data = small_dataset();
  ASSERT_EQ(hacd_run({"train", data, "--epochs", "3", "--dim", "8", "--log-every", "0", "-o", path("a")}).code, 0);
  auto r = hacd_run({"train", data, "--epochs", "6", "--dim", "8", "--log-every", "0", "--resume",
                     path("a/model.ckpt"), "-o", path("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(hacd_run({"train", data, "--epochs", "6", "--dim", "8", "--log-every", "0", "-o", path("c")}).code, 0);
  auto resumed = read_json(path("b/report.json"));
  auto straight = read_json(path("c/report.json"));
  EXPECT_EQ(resumed["resumed_from_step"], 3);
  ASSERT_EQ(resumed["history"].size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(resumed["history"][i], straight["history"][i + 3]);
}

TEST_F(CliTest, EvaluateGroundTruthIsPerfect) {
  auto data = small_dataset();
  fs::copy_file(fs::path(data) / "labels.tsv", dir_ / "truth.tsv");
  auto r = hacd_run({"evaluate", path("truth.tsv"), data, "-o", path("ev")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = read_json(path("ev/metrics.json"));
  for (const char* k : {"acc", "nmi", "ari", "f1"}) EXPECT_DOUBLE_EQ(m[k].get<double>(), 1.0) << k;
  EXPECT_TRUE(fs::exists(dir_ / "ev" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "ev" / "evaluate.manifest.json"));
}

TEST_F(CliTest, EvaluateConstantAssignment) {
  auto data = small_dataset();
  auto g = load_dataset(data);
  std::ofstream os(dir_ / "const.tsv");
  for (const auto& name : g.node_names()) os << name << "\tc\n";
  os.close();
  auto r = hacd_run({"evaluate", path("const.tsv"), data, "-o", path("ev")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = read_json(path("ev/metrics.json"));
  EXPECT_NEAR(m["modularity"].get<double>(), 0.0, 1e-12);
  EXPECT_NEAR(m["nmi"].get<double>(), 0.0, 1e-12);
}

TEST_F(CliTest, EvaluateTrainedMatchesLibrary) {
  auto data = small_dataset();
  ASSERT_EQ(hacd_run({"train", data, "--epochs", "20", "--dim", "8", "--log-every", "0", "-o", path("run")}).code, 0);
  ASSERT_EQ(hacd_run({"evaluate", path("run/assignment.tsv"), data}).code, 0);
  auto m = read_json(path("run/metrics.json"));

  auto g = load_dataset(data);
  auto pred = cli::read_assignment(dir_ / "run" / "assignment.tsv", g);
  auto rep = metrics::evaluate(pred, *g.labels(), classic_modularity(g, CommunityAssignment(pred)));
  EXPECT_EQ(m["acc"].get<double>(), rep.acc);
  EXPECT_EQ(m["nmi"].get<double>(), rep.nmi);
  EXPECT_EQ(m["ari"].get<double>(), rep.ari);
  EXPECT_EQ(m["f1"].get<double>(), rep.f1);
  EXPECT_EQ(m["modularity"].get<double>(), rep.modularity);
}

TEST_F(CliTest, EvaluateRejectsPartialCoverage) {
  auto data = small_dataset();
  auto g = load_dataset(data);
  std::ofstream os(dir_ / "partial.tsv");
  for (std::size_t i = 0; i + 1 < g.n_nodes(); ++i) os << g.node_names()[i] << "\t0\n";
  os.close();
  auto r = hacd_run({"evaluate", path("partial.tsv"), data, "-o", path("ev")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("covers"), std::string::npos);
}

TEST_F(CliTest, GradcheckDefaultPasses) {
  auto r = hacd_run({"gradcheck", "-o", path("gc")});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  auto j = read_json(path("gc/gradcheck.json"));
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_FALSE(j["worst_param"].get<std::string>().empty());
  EXPECT_LE(j["nodes"].get<std::size_t>(), 15u);
}

TEST_F(CliTest, GradcheckLiteralVariantPasses) {
  EXPECT_EQ(hacd_run({"gradcheck", "--paper-literal-eq3", "-o", path("gc")}).code, 0);
}

TEST_F(CliTest, GradcheckRejectsZeroEpsilon) {
  EXPECT_EQ(hacd_run({"gradcheck", "--epsilon", "0", "-o", path("gc")}).code, 2);
}

TEST_F(CliTest, AblateWritesOneRowPerMode) {
  auto data = small_dataset();
  auto r = hacd_run({"ablate", data, "--epochs", "3", "--dim", "8", "--log-every", "0", "-o", path("ab")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json(path("ab/ablation.json"));
  ASSERT_EQ(j["runs"].size(), 3u);
  for (const char* mode : {"full", "cmf", "a2m"}) EXPECT_TRUE(fs::exists(dir_ / "ab" / mode / "report.json")) << mode;
}

TEST_F(CliTest, IngestCanonicalizes) {
  {
    std::ofstream e(dir_ / "e.tsv");
    e << "b\ta\nc\tb\n";
    std::ofstream f(dir_ / "f.tsv");
    f << "a\tx\t1\nc\ty\t2\n";
  }
  auto r = hacd_run({"ingest", "--edges", path("e.tsv"), "--features", path("f.tsv"), "-o", path("canon")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto g = load_dataset(path("canon"));
  EXPECT_EQ(g.n_nodes(), 3u);
  EXPECT_EQ(g.n_edges(), 2u);
  EXPECT_EQ(g.d_features(), 2u);
}
