#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "fedrec/commands.hpp"

using namespace fedrec;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"([corpus]
n_conversations = 18
utterances_per_conv = 5
n_classes = 3
dims = 6,6,6
[model]
d = 8
s_tok = 2
p_tok = 4
mlp_hidden = 8
[pretrain]
epochs = 3
[diffusion]
train_timesteps = 40
timesteps = 5
[federation]
rounds = 6
)";

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("fedrec_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

config::RunConfig small() { return config::parse_config_text(kSmall); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDREC_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

void full_pipeline(const config::RunConfig& cfg, const fs::path& out) {
  cli::gen_data(cfg, out);
  cli::pretrain(cfg, out);
  cli::train(cfg, out);
  cli::evaluate(cfg, out, "fixed");
}

}  // namespace

TEST(Cli, GenDataIsDeterministicAndRoundTrips) {
  auto cfg = small();
  auto a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  cli::gen_data(cfg, a);
  cli::gen_data(cfg, b);
  EXPECT_EQ(slurp(a / "corpus.jsonl"), slurp(b / "corpus.jsonl"));
  EXPECT_EQ(slurp(a / "clients.csv"), slurp(b / "clients.csv"));
  auto [c, mask] = corpus::load_corpus((a / "corpus.jsonl").string());
  EXPECT_EQ(c.conversations.size(), 18u);
  auto p = cli::load_data(cfg, a);
  EXPECT_EQ(exp::global_mask(p), mask);
  EXPECT_NE(slurp(a / "corpus.jsonl").find(cfg.hash()), std::string::npos);
}

TEST(Cli, StagesRejectMissingInputs) {
  auto cfg = small();
  auto d = fresh_dir("missing");
  EXPECT_THROW(cli::pretrain(cfg, d), corpus::DataError);
  cli::gen_data(cfg, d);
  EXPECT_THROW(cli::train(cfg, d), corpus::DataError);
  EXPECT_THROW(cli::evaluate(cfg, d, "fixed"), corpus::DataError);
  // a protocol change after gen-data is caught
  auto other = cfg;
  other.patterns = {ModalitySet::parse("l"), ModalitySet::parse("v"), ModalitySet::parse("a")};
  EXPECT_THROW(cli::load_data(other, d), corpus::DataError);
}

TEST(Cli, PretrainWritesCompleteCheckpointsAndLosses) {
  auto cfg = small();
  auto d = fresh_dir("pretrain");
  cli::gen_data(cfg, d);
  cli::pretrain(cfg, d);
  auto p = cli::load_pretrained(cfg, d);
  auto ref = exp::prepare(cfg, p.corpus);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(p.dgn[l], ref.dgn[l]);
    EXPECT_EQ(p.scn[l], ref.scn[l]);
    const auto csv = slurp(d / "pretrain" / ("client" + std::to_string(l) + "_loss.csv"));
    EXPECT_EQ(csv.rfind("# config_hash=" + cfg.hash() + " seed=1\n", 0), 0u);
  }
  // zero epochs leaves the common initialization
  auto zero = cfg;
  zero.pretrain.epochs = 0;
  auto z = exp::prepare(zero, p.corpus);
  EXPECT_EQ(z.dgn[0], z.dgn[1]);
}

TEST(Cli, TrainLogsStagesAndIsReproducible) {
  auto cfg = small();
  auto a = fresh_dir("train_a"), b = fresh_dir("train_b");
  full_pipeline(cfg, a);
  full_pipeline(cfg, b);
  EXPECT_EQ(slurp(a / "train" / "round_log.csv"), slurp(b / "train" / "round_log.csv"));
  EXPECT_EQ(slurp(a / "eval" / "scenario_fixed.csv"), slurp(b / "eval" / "scenario_fixed.csv"));
  const auto summary = nlohmann::json::parse(slurp(a / "train" / "summary.json"));
  EXPECT_EQ(summary.at("stages"), nlohmann::json({"I", "II", "II", "I", "II", "II"}));
  EXPECT_TRUE(summary.at("communication").contains("ratio"));
  EXPECT_EQ(summary.at("config_hash"), cfg.hash());
}

TEST(Cli, EvaluateScenarios) {
  auto cfg = small();
  auto d = fresh_dir("eval");
  full_pipeline(cfg, d);
  auto fixed = cli::evaluate(cfg, d, "fixed");
  ASSERT_EQ(fixed.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(fixed[i].available, cli::fixed_patterns()[i]);
  auto rnd = cli::evaluate(cfg, d, "random");
  EXPECT_EQ(rnd.size(), cfg.eta_grid.size());
  EXPECT_THROW(cli::evaluate(cfg, d, "bogus"), config::ConfigError);

  // full scenario equals direct classification of the complete latents
  auto full = cli::evaluate(cfg, d, "full");
  ASSERT_EQ(full.size(), 1u);
  auto p = cli::load_pretrained(cfg, d);
  auto t = cli::load_trained(p, d);
  std::vector<int> preds, labels;
  for (std::size_t l = 0; l < p.shards.size(); ++l) {
    auto s = p.shards[l];
    for (auto& m : s.mask.available) m = ModalitySet::all();
    auto v = exp::view_of(p, l, s, s.test);
    auto x = assemble_features(v, {}, RecoveryMode::kZero);
    auto pr = cls::argmax_rows(cls::predict_logits(t.state.phi_g, cfg.dims, x));
    preds.insert(preds.end(), pr.begin(), pr.end());
    labels.insert(labels.end(), v.labels.begin(), v.labels.end());
  }
  EXPECT_EQ(full[0].report.accuracy, eval::evaluate(preds, labels, cfg.dims.n_classes).accuracy);

  const auto cent = slurp(d / "eval" / "centroid_error.csv");
  EXPECT_NE(cent.find("modality,conditional,unconditional,n"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "eval" / "pca_l.csv"));
}

TEST(Cli, AblationPairsEveryPattern) {
  auto cfg = small();
  auto d = fresh_dir("ablate");
  cli::gen_data(cfg, d);
  cli::pretrain(cfg, d);
  auto a = cli::ablate(cfg, d, "afs");
  EXPECT_EQ(a.keys.size(), 6u);
  auto c = cli::ablate(cfg, d, "conditioning");
  EXPECT_EQ(c.on.size(), 6u);
  const auto csv = slurp(d / "ablate" / "afs.csv");
  EXPECT_NE(csv.find("delta_acc"), std::string::npos);
  EXPECT_THROW(cli::ablate(cfg, d, "nothing"), config::ConfigError);
  // the afs-off arm co-trains both modules in every round
  const auto j = nlohmann::json::parse(slurp(d / "ablate" / "afs.json"));
  EXPECT_GT(j.at("communication_off").at("afs_bytes_per_round_client").get<double>(),
            j.at("communication_on").at("afs_bytes_per_round_client").get<double>());
}

TEST(Cli, TheoryCheckWritesVerdicts) {
  auto cfg = small();
  auto d = fresh_dir("theory");
  EXPECT_TRUE(cli::theory_check(cfg, d));
  const auto j = nlohmann::json::parse(slurp(d / "theory.json"));
  ASSERT_EQ(j.at("verdicts").size(), 3u);
  for (const auto& v : j.at("verdicts")) {
    EXPECT_TRUE(v.at("pass").get<bool>());
    EXPECT_TRUE(v.contains("bound"));
    EXPECT_TRUE(v.contains("margin"));
  }
}

TEST(Cli, ExitCodes) {
  auto d = fresh_dir("exit");
  {
    std::ofstream(d / "ok.ini") << kSmall;
    std::ofstream(d / "bad.ini") << "[federation]\nroundz = 3\n";
    std::ofstream(d / "eta.ini") << "[protocol]\nkind = random\neta = 0.9\n";
  }
  const std::string out = " --out " + (d / "o").string();
  EXPECT_EQ(run_cli("gen-data --config " + (d / "bad.ini").string() + out), 2);
  EXPECT_EQ(run_cli("gen-data --config " + (d / "eta.ini").string() + out), 2);
  EXPECT_EQ(run_cli("gen-data --config " + (d / "missing.ini").string() + out), 2);
  EXPECT_EQ(run_cli("train --config " + (d / "ok.ini").string() + out), 3);
  EXPECT_EQ(run_cli("evaluate --scenario nope --config " + (d / "ok.ini").string() + out), 2);
  EXPECT_EQ(run_cli("gen-data --config " + (d / "ok.ini").string() + " --seed 5" + out), 0);
  EXPECT_NE(slurp(d / "o" / "clients.csv").find("seed=5"), std::string::npos);
  EXPECT_EQ(run_cli("no-such-command"), 2);

  // a diverging learning rate is a numerical failure
  std::string nan = kSmall;
  nan.replace(nan.find("epochs = 3"), 10, "epochs = 3\nlr = 1e200");
  std::ofstream(d / "nan.ini") << nan;
  const std::string n = " --config " + (d / "nan.ini").string() + " --out " + (d / "n").string();
  EXPECT_EQ(run_cli("gen-data" + n), 0);
  EXPECT_EQ(run_cli("pretrain" + n), 4);
}
