#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "npd/pipeline.hpp"

using namespace npd;
using namespace npd::pipeline;

namespace {

const fs::path kSampleConfig = fs::path(NPD_SOURCE_DIR) / "data/sample/config.json";

RunConfig sample_config(const fs::path& out, std::vector<std::string> extra = {}) {
  extra.push_back("output_dir=\"" + out.string() + "\"");
  extra.push_back("threads=2");
  return load_config(kSampleConfig, extra);
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(NPD_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> hash_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out[e.path().filename().string()] = sha256_hex(read_file(e.path()));
  }
  return out;
}

}  // namespace

TEST(Sha256, KnownDigests) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Config, DefaultsAreFilledIn) {
  const auto c = resolve_config(nlohmann::json{{"dataset", "x.csv"}}, "/base");
  EXPECT_EQ(c.dataset, fs::path("/base/x.csv"));
  EXPECT_EQ(c.seed, 42u);
  EXPECT_DOUBLE_EQ(c.test_ratio, 0.30);
  EXPECT_DOUBLE_EQ(c.val_ratio, 0.20);
  EXPECT_EQ(c.brf_params.n_trees, 100);
  EXPECT_EQ(c.mlp_arch.hidden, (std::array<int, 2>{64, 32}));
  EXPECT_EQ(c.mlp_train.epochs, 100);
  EXPECT_DOUBLE_EQ(c.edge_threshold, 0.2);
  EXPECT_EQ(c.top_terms, 150u);
  EXPECT_EQ(c.rank_by, eval::F1Variant::Macro);
  EXPECT_EQ(c.raw["mlp"]["learning_rate"], 0.01);
}

TEST(Config, EveryViolationIsListed) {
  const nlohmann::json bad = {{"split", {{"test", 1.5}, {"val", 0}}},
                              {"model", "svm"},
                              {"brf", {{"n_trees", 0}}},
                              {"mlp", {{"epochs", 0}}},
                              {"wordgraph", {{"formats", {"png"}}}},
                              {"bogus", 1}};
  try {
    resolve_config(bad, "/");
    FAIL();
  } catch (const ValidationError& e) {
    const auto& issues = e.issues();
    auto mentions = [&](const std::string& field) {
      return std::any_of(issues.begin(), issues.end(), [&](const std::string& s) { return s.starts_with(field); });
    };
    EXPECT_TRUE(mentions("split.test"));
    EXPECT_TRUE(mentions("split.val"));
    EXPECT_TRUE(mentions("model"));
    EXPECT_TRUE(mentions("brf.n_trees"));
    EXPECT_TRUE(mentions("mlp.epochs"));
    EXPECT_TRUE(mentions("wordgraph.formats"));
    EXPECT_TRUE(mentions("unknown field 'bogus'"));
    EXPECT_EQ(issues.size(), 7u);
  }
}

TEST(Config, OverridesParseJsonOrFallBackToString) {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "brf.n_trees=250");
  apply_override(j, "model=mlp");
  apply_override(j, "mlp.hidden=[8,4]");
  apply_override(j, "brf.max_depth=null");
  EXPECT_EQ(j["brf"]["n_trees"], 250);
  EXPECT_EQ(j["model"], "mlp");
  EXPECT_EQ(j["mlp"]["hidden"], nlohmann::json({8, 4}));
  EXPECT_TRUE(j["brf"]["max_depth"].is_null());
  EXPECT_THROW(apply_override(j, "novalue"), ValidationError);
}

TEST(Config, HashIgnoresOutputDirectoryAndThreads) {
  const auto a = resolve_config({{"output_dir", "/tmp/a"}}, "/");
  const auto b = resolve_config({{"output_dir", "/tmp/b"}, {"threads", 8}}, "/");
  const auto c = resolve_config({{"output_dir", "/tmp/a"}, {"seed", 1}}, "/");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, MissingInputFilesAreValidationErrors) {
  const auto dir = testkit::fresh_dir("missing");
  const auto c = resolve_config({{"dataset", "nope.csv"}, {"output_dir", dir.string()}}, dir);
  EXPECT_THROW(cmd_ingest(c), ValidationError);
}

TEST(Stages, EvaluateBeforeTrainIsAManifestError) {
  const auto dir = testkit::fresh_dir("order");
  const auto c = sample_config(dir);
  try {
    cmd_evaluate(c);
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.stage(), "train:brf_wordvec");
  }
  cmd_ingest(c);
  EXPECT_THROW(cmd_train(c), ManifestError);  // embed has not run
}

TEST(Stages, StaleCheckpointIsDetected) {
  const auto dir = testkit::fresh_dir("stale");
  const auto c = sample_config(dir);
  cmd_ingest(c);
  std::ofstream(dir / "tokens.jsonl", std::ios::app) << "{\"id\":\"x\",\"tokens\":[]}\n";
  try {
    cmd_embed(c);
    FAIL();
  } catch (const ManifestError& e) {
    EXPECT_EQ(e.stage(), "ingest");
    EXPECT_NE(std::string(e.what()).find("stale"), std::string::npos);
  }
}

TEST(Stages, ChangedUpstreamInvalidatesDownstream) {
  const auto dir = testkit::fresh_dir("chain");
  cmd_ingest(sample_config(dir));
  cmd_embed(sample_config(dir));
  cmd_ingest(sample_config(dir, {"seed=8"}));  // new split, so the embed record no longer chains
  EXPECT_THROW(cmd_train(sample_config(dir)), ManifestError);
}

TEST(Stages, ConcurrentRunIsRejectedByLock) {
  const auto dir = testkit::fresh_dir("lock");
  DirectoryLock held(dir);
  EXPECT_THROW(cmd_ingest(sample_config(dir)), Error);
}

TEST(Stages, AllCombinationsRunAndReportBothTasks) {
  const auto dir = testkit::fresh_dir("combos");
  const auto base = sample_config(dir, {"mlp.epochs=30"});
  cmd_ingest(base);
  for (const char* emb : {"wordvec", "precomputed"}) {
    const auto e = sample_config(dir, {"mlp.epochs=30", std::string("embedding=") + emb});
    cmd_embed(e);
    for (const char* model : {"brf", "mlp"}) {
      const auto c = sample_config(dir, {"mlp.epochs=30", std::string("embedding=") + emb, std::string("model=") + model});
      cmd_train(c);
      cmd_evaluate(c);
      const auto report = nlohmann::json::parse(read_file(dir / ("report_" + c.combo() + ".json")));
      EXPECT_FALSE(report["opinion"].is_null()) << c.combo();
      EXPECT_GT(report["sentiment"]["accuracy"].get<double>(), 0.6) << c.combo();
    }
  }
  const auto table = read_file(dir / "report.txt");
  EXPECT_NE(table.find("Sentiment Analysis Results"), std::string::npos);
  EXPECT_NE(table.find("Opinion Detection Results"), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(read_file(dir / "report.json"))["sentiment"].size(), 4u);
}

TEST(Stages, RerunAfterDeletingACheckpointIsByteIdentical) {
  const auto dir = testkit::fresh_dir("rerun");
  const auto c = sample_config(dir);
  for (const char* cmd : {"ingest", "embed", "train", "evaluate", "graph"}) run_command(cmd, c);
  const auto before = hash_dir(dir);
  for (const char* file : {"tokens.jsonl", "embeddings_wordvec.eef", "model_brf_wordvec.sentiment.brf",
                           "report_brf_wordvec.json", "graph_brf_wordvec_neg.graphml"}) {
    fs::remove(dir / file);
  }
  for (const char* cmd : {"ingest", "embed", "train", "evaluate", "graph"}) run_command(cmd, c);
  EXPECT_EQ(hash_dir(dir), before);
}

TEST(Stages, LaterStagesDoNotTouchEarlierOutputs) {
  const auto dir = testkit::fresh_dir("isolation");
  const auto c = sample_config(dir);
  cmd_ingest(c);
  cmd_embed(c);
  auto snapshot = hash_dir(dir);
  snapshot.erase("manifest.json");
  cmd_train(c);
  cmd_tune(c);
  cmd_evaluate(c);
  cmd_graph(c);
  auto after = hash_dir(dir);
  for (const auto& [name, hash] : snapshot) EXPECT_EQ(after.at(name), hash) << name;
}

TEST(Cli, SmokeRunOnBundledSample) {
  const auto dir = testkit::fresh_dir("cli");
  const std::string common = " --config " + kSampleConfig.string() + " --set output_dir=" + dir.string();
  EXPECT_EQ(run_cli("evaluate" + common), 2);
  for (const char* cmd : {"ingest", "embed", "train", "tune", "evaluate", "graph"}) {
    ASSERT_EQ(run_cli(std::string(cmd) + common), 0) << cmd;
  }
  for (const char* file :
       {"manifest.json", "tokens.jsonl", "labels.jsonl", "split.json", "embeddings_wordvec.eef",
        "model_brf_wordvec.sentiment.brf", "model_brf_wordvec.opinion.brf", "train_brf_wordvec_log.json",
        "tune_wordvec_best.json", "tune_wordvec_trace.json", "report_brf_wordvec.json", "report.txt", "report.json",
        "graph_brf_wordvec_posneu.graphml", "graph_brf_wordvec_neg.graphml", "graph_brf_wordvec_posneu.dot",
        "graph_brf_wordvec_neg.json", "clusters_brf_wordvec.txt", "clusters_brf_wordvec.json"}) {
    EXPECT_TRUE(fs::is_regular_file(dir / file)) << file;
  }
  EXPECT_FALSE(fs::exists(dir / ".npd.lock"));
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  for (const char* stage : {"ingest", "embed:wordvec", "train:brf_wordvec", "tune:wordvec", "evaluate:brf_wordvec",
                            "graph:brf_wordvec"}) {
    EXPECT_TRUE(manifest["stages"].contains(stage)) << stage;
  }
}

TEST(Cli, ExitCodes) {
  const auto dir = testkit::fresh_dir("exit");
  EXPECT_EQ(run_cli("ingest --config " + kSampleConfig.string() + " --set split.test=2 --set output_dir=" +
                    dir.string()),
            1);
  EXPECT_EQ(run_cli("ingest"), 1);
  EXPECT_EQ(run_cli("frobnicate --config x"), 1);
  EXPECT_EQ(run_cli("ingest --config /nonexistent.json"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
}
