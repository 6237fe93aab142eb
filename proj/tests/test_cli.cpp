#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "rpo_lab/cli.hpp"
#include "support.hpp"

using namespace rpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "rpo_lab");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("rpo_lab_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::size_t count_files(const fs::path& dir, const std::string& prefix, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && name.size() >= suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ++n;
  }
  return n;
}

std::string slurp(const fs::path& p) { return csv::read_file(p.string()); }

// Manifest without wall-clock fields.
nlohmann::json stable_manifest(const fs::path& p) {
  auto doc = nlohmann::json::parse(slurp(p));
  doc.erase("started");
  doc.erase("finished");
  return doc;
}

const std::vector<std::string> kSmall{"--timesteps", "512"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST(Cli, TrainWritesOneCsvPerSeedPlusAggregate) {
  const auto dir = fresh_dir("count");
  const auto r = invoke(with({"train", "--algo", "rpo", "--seeds", "3", "--out", dir.string()}, kSmall));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_files(dir, "train_rpo_seed", ".csv"), 3u);
  EXPECT_EQ(count_files(dir, "train_rpo_seed", "_manifest.json"), 3u);
  ASSERT_TRUE(fs::exists(dir / "train_rpo_aggregate.csv"));
  const auto agg = csv::parse(slurp(dir / "train_rpo_aggregate.csv"));
  EXPECT_EQ(agg.header, (std::vector<std::string>{"variant", "metric", "mean", "std", "n_seeds"}));
  EXPECT_EQ(agg.rows.size(), 3u);
  EXPECT_EQ(agg.rows[0][4], "3");
  const auto run = metrics_from_csv(slurp(dir / "train_rpo_seed1.csv"));
  EXPECT_EQ(run.size(), 2u);
  const auto manifest = nlohmann::json::parse(slurp(dir / "train_rpo_manifest.json"));
  EXPECT_EQ(manifest["seeds"].size(), 3u);
  EXPECT_TRUE(manifest.contains("command_line"));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"train", "--timesteps", "abc"}).code, 2);
  EXPECT_EQ(invoke({"train", "--algo", "trpo"}).code, 2);
  EXPECT_EQ(invoke({"train", "--bogus"}).code, 2);
  EXPECT_EQ(invoke({"train", "--epsilon", "1.5", "--dump-config"}).code, 2);
  EXPECT_EQ(invoke({"verify", "--max-states", "9"}).code, 2);
  EXPECT_EQ(invoke({"verify", "--k-list", "0"}).code, 2);
  EXPECT_EQ(invoke({"verify", "--mdp", "/no/such/file.json"}).code, 2);
  const auto empty = invoke({"ablate", "--variants", "", "--out", fresh_dir("empty").string()});
  EXPECT_EQ(empty.code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(invoke({"--help"}).code, 0); }

TEST(Cli, DumpConfigPrintsResolvedDefaults) {
  const auto r = invoke({"train", "--algo", "rpo3", "--dump-config"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_EQ(doc["variant"], "rpo3");
  EXPECT_EQ(doc["k"], 3);
  EXPECT_EQ(doc["beta"], 3.0);
  EXPECT_EQ(doc["epsilon"], 0.1);
  EXPECT_EQ(doc["batch_size"], 256);
  EXPECT_EQ(doc["total_timesteps"], 100000);
  const auto v = nlohmann::json::parse(invoke({"verify", "--dump-config"}).out);
  EXPECT_EQ(v["instances"], 200);
  EXPECT_EQ(v["psi_samples_per_instance"], 50);
}

TEST(Cli, TrainIsByteDeterministic) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  ASSERT_EQ(invoke(with({"train", "--algo", "rpo", "--seed", "4", "--out", a.string()}, kSmall)).code, 0);
  ASSERT_EQ(invoke(with({"train", "--algo", "rpo", "--seed", "4", "--out", b.string()}, kSmall)).code, 0);
  EXPECT_EQ(slurp(a / "train_rpo_seed4.csv"), slurp(b / "train_rpo_seed4.csv"));
  EXPECT_EQ(slurp(a / "train_rpo_aggregate.csv"), slurp(b / "train_rpo_aggregate.csv"));
}

TEST(Cli, BetaZeroMatchesPpoFiles) {
  const auto a = fresh_dir("beta_rpo"), b = fresh_dir("beta_ppo");
  ASSERT_EQ(invoke(with({"train", "--algo", "rpo", "--beta", "0", "--out", a.string()}, kSmall)).code, 0);
  ASSERT_EQ(invoke(with({"train", "--algo", "ppo", "--out", b.string()}, kSmall)).code, 0);
  EXPECT_EQ(slurp(a / "train_rpo_seed0.csv"), slurp(b / "train_ppo_seed0.csv"));
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const auto dir = fresh_dir("envvar");
  ::setenv("RPO_LAB_OUT", dir.string().c_str(), 1);
  const auto r = invoke(with({"train", "--algo", "ppo"}, kSmall));
  ::unsetenv("RPO_LAB_OUT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "train_ppo_seed0.csv"));
}

TEST(Cli, VerifyOnFixtureIsCleanAndDeterministic) {
  const auto a = fresh_dir("verify_a"), b = fresh_dir("verify_b");
  const auto fixture = rpo::testing::data_path("m2_fixture.json");
  const std::vector<std::string> flags{"verify", "--instances", "10", "--mdp", fixture};
  const auto r = invoke(with(flags, {"--out", a.string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(invoke(with(flags, {"--out", b.string()})).code, 0);
  EXPECT_EQ(slurp(a / "verify.csv"), slurp(b / "verify.csv"));
  auto ma = stable_manifest(a / "verify_manifest.json"), mb = stable_manifest(b / "verify_manifest.json");
  EXPECT_EQ(ma["violations"], 0);
  EXPECT_EQ(ma["pass"], true);
  ma.erase("command_line");
  mb.erase("command_line");
  ma.erase("outputs");
  mb.erase("outputs");
  EXPECT_EQ(ma, mb);
  const auto rows = verify_from_csv(slurp(a / "verify.csv"));
  EXPECT_FALSE(rows.empty());
}

TEST(Cli, AblateWritesGridTable) {
  const auto dir = fresh_dir("ablate");
  const auto r = invoke(with({"ablate", "--variants", "rpo,rpo-jointclip", "--beta-list", "1,3", "--seeds", "2",
                              "--out", dir.string()},
                             {"--timesteps", "256"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = csv::parse(slurp(dir / "ablate.csv"));
  EXPECT_EQ(table.header,
            (std::vector<std::string>{"variant", "epsilon1", "beta", "seed", "final_return", "final_len",
                                      "cliff_falls"}));
  EXPECT_EQ(table.rows.size(), 8u);
  EXPECT_TRUE(fs::exists(dir / "ablate_manifest.json"));
}

TEST(Cli, ParallelWorkersGiveSameFiles) {
  const auto a = fresh_dir("workers_1"), b = fresh_dir("workers_2");
  ASSERT_EQ(invoke(with({"train", "--seeds", "2", "--out", a.string()}, kSmall)).code, 0);
  ASSERT_EQ(invoke(with({"train", "--seeds", "2", "--workers", "2", "--out", b.string()}, kSmall)).code, 0);
  EXPECT_EQ(slurp(a / "train_rpo_seed1.csv"), slurp(b / "train_rpo_seed1.csv"));
}
