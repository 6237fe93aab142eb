#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rpo_lab/csv.hpp"
#include "rpo_lab/environments.hpp"
#include "rpo_lab/parallel.hpp"
#include "rpo_lab/trainer.hpp"
#include "rpo_lab/verify.hpp"

namespace rpo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline std::string default_out_dir() {
  const char* env = std::getenv("RPO_LAB_OUT");
  return env && *env ? env : "rpo_lab_out";
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json read_json_file(const std::string& path) {
  try {
    return nlohmann::json::parse(csv::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw LabError(ErrorKind::Parse, path, e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  csv::write_file(path.string(), doc.dump(2) + "\n");
}

/// "cliffwalking" or a config file holding either a TabularMdp (has a
/// "transition" key) or a GridSpec.
inline EnvSpec load_env(const std::string& name) {
  if (name == "cliffwalking") return GridSpec{};
  const auto doc = read_json_file(name);
  if (doc.contains("transition"))
    return MdpEnvSpec{mdp_from_json(doc), doc.value("max_episode_steps", std::size_t{200})};
  return grid_from_json(doc);
}

struct Meanstd {
  double mean = 0.0;
  double std = 0.0;
};

inline Meanstd mean_std(const std::vector<double>& xs) {
  Meanstd out;
  if (xs.empty()) return out;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) out.mean += x / n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

/// Flags shared by train and ablate.
struct TrainFlags {
  std::string env = "cliffwalking";
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  TrainConfig base;
  std::size_t workers = 1;
  std::string out;
  bool dump_config = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--env", env, "cliffwalking or a grid/MDP config file")->capture_default_str();
    cmd.add_option("--seed", seed, "first seed")->capture_default_str();
    cmd.add_option("--seeds", seeds, "number of consecutive seeds")->check(CLI::PositiveNumber)->capture_default_str();
    cmd.add_option("--timesteps", base.total_timesteps, "environment steps per run")->capture_default_str();
    cmd.add_option("--batch-size", base.batch_size)->capture_default_str();
    cmd.add_option("--epochs", base.epochs_per_update)->capture_default_str();
    cmd.add_option("--minibatches", base.minibatches_per_epoch)->capture_default_str();
    cmd.add_option("--lr", base.learning_rate, "policy learning rate")->capture_default_str();
    cmd.add_option("--value-lr", base.value_learning_rate, "value learning rate")->capture_default_str();
    cmd.add_option("--gamma", base.gamma)->capture_default_str();
    cmd.add_option("--lambda", base.gae_lambda, "GAE lambda")->capture_default_str();
    cmd.add_option("--hidden", base.hidden, "hidden layer widths")->capture_default_str();
    cmd.add_option("--epsilon", base.clip.epsilon)->capture_default_str();
    cmd.add_flag("!--no-adv-norm", base.normalize_advantages, "disable per-batch advantage normalization");
    cmd.add_option("--workers", workers, "parallel runs")->check(CLI::PositiveNumber)->capture_default_str();
    cmd.add_option("--out", out, "output directory (default $RPO_LAB_OUT or rpo_lab_out)");
    cmd.add_flag("--dump-config", dump_config, "print the resolved configuration and exit");
  }

  TrainConfig resolve(Variant v, double epsilon1, double beta, std::uint64_t run_seed) const {
    TrainConfig cfg = base;
    cfg.env = load_env(env);
    cfg.clip = ClipConfig::for_variant(v, base.clip.epsilon, epsilon1, beta);
    cfg.seed = run_seed;
    cfg.validate();
    return cfg;
  }

  std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < seeds; ++i) out.push_back(seed + i);
    return out;
  }

  std::filesystem::path out_dir() const { return out.empty() ? default_out_dir() : out; }
};

inline std::string algo_slug(Variant v) {
  auto s = to_string(v);
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

// ---------------------------------------------------------------------------

struct VerifyFlags {
  VerifyConfig cfg;
  std::string mdp_file;
  std::string out;
  bool dump_config = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--instances", cfg.instances)->check(CLI::PositiveNumber)->capture_default_str();
    cmd.add_option("--seed", cfg.seed)->capture_default_str();
    cmd.add_option("--max-states", cfg.max_states)->check(CLI::Range(2, 6))->capture_default_str();
    cmd.add_option("--max-actions", cfg.max_actions)->check(CLI::Range(2, 4))->capture_default_str();
    cmd.add_option("--k-list", cfg.k_list, "horizons to check")
        ->delimiter(',')
        ->check(CLI::Range(std::size_t{1}, kMaxHorizon))
        ->capture_default_str();
    cmd.add_option("--psi-samples", cfg.psi_samples, "membership samples per instance (0 = auto)")
        ->capture_default_str();
    cmd.add_option("--mdp", mdp_file, "run every instance on this MDP config file")->check(CLI::ExistingFile);
    cmd.add_option("--workers", cfg.workers)->check(CLI::PositiveNumber)->capture_default_str();
    cmd.add_option("--out", out, "output directory (default $RPO_LAB_OUT or rpo_lab_out)");
    cmd.add_flag("--dump-config", dump_config, "print the resolved configuration and exit");
  }
};

inline nlohmann::json verify_config_json(const VerifyConfig& cfg, const std::string& mdp_file) {
  return {{"instances", cfg.instances},     {"seed", cfg.seed},
          {"max_states", cfg.max_states},   {"max_actions", cfg.max_actions},
          {"k_list", cfg.k_list},           {"psi_samples_per_instance", cfg.psi_samples_per_instance()},
          {"mdp", mdp_file},                {"identity_tol", kIdentityTol},
          {"bound_slack", kBoundSlack},     {"membership_tol", kMembershipTol}};
}

inline int cmd_verify(VerifyFlags& flags, const std::string& command_line, std::ostream& out, std::ostream& err) {
  if (!flags.mdp_file.empty()) flags.cfg.fixed_mdp = mdp_from_json(read_json_file(flags.mdp_file));
  flags.cfg.validate();
  const auto resolved = verify_config_json(flags.cfg, flags.mdp_file);
  if (flags.dump_config) {
    out << resolved.dump(2) << "\n";
    return kExitOk;
  }
  const auto started = utc_timestamp();
  const auto report = run_verification(flags.cfg);
  const std::filesystem::path dir = flags.out.empty() ? default_out_dir() : flags.out;
  std::filesystem::create_directories(dir);
  const auto csv_path = dir / "verify.csv";
  csv::write_file(csv_path.string(), verify_to_csv(report.rows));

  const auto bad = report.violations();
  std::vector<std::uint64_t> bad_seeds;
  for (const auto* row : bad) {
    err << "violation: instance_seed=" << row->instance_seed << " check=" << row->check_name
        << " lhs=" << csv::format_double(row->lhs) << " rhs_or_bound=" << csv::format_double(row->rhs_or_bound)
        << "\n";
    if (std::find(bad_seeds.begin(), bad_seeds.end(), row->instance_seed) == bad_seeds.end())
      bad_seeds.push_back(row->instance_seed);
  }
  write_json_file(dir / "verify_manifest.json",
                  {{"command_line", command_line},
                   {"config", resolved},
                   {"started", started},
                   {"finished", utc_timestamp()},
                   {"outputs", {csv_path.string()}},
                   {"rows", report.rows.size()},
                   {"violations", bad.size()},
                   {"violating_seeds", bad_seeds},
                   {"psi_samples", report.psi_samples},
                   {"psi_witnesses", report.psi_witnesses},
                   {"pass", bad.empty()}});
  out << "verify: " << report.rows.size() << " checks over " << flags.cfg.instances << " instances, " << bad.size()
      << " violations -> " << csv_path.string() << "\n";
  return bad.empty() ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------

struct TrainCommand {
  TrainFlags flags;
  std::string algo = "rpo";
  double epsilon1 = 0.1;
  double beta = 3.0;

  void attach(CLI::App& cmd) {
    flags.attach(cmd);
    cmd.add_option("--algo", algo)
        ->check(CLI::IsMember({"ppo", "rpo", "rpo3", "rpo-jointclip"}))
        ->capture_default_str();
    cmd.add_option("--epsilon1", epsilon1)->capture_default_str();
    cmd.add_option("--beta", beta)->capture_default_str();
  }
};

inline std::filesystem::path run_csv_path(const std::filesystem::path& dir, Variant v, std::uint64_t seed) {
  return dir / ("train_" + algo_slug(v) + "_seed" + std::to_string(seed) + ".csv");
}

inline int cmd_train(TrainCommand& cmd, const std::string& command_line, std::ostream& out, std::ostream&) {
  const auto variant = variant_from_string(cmd.algo);
  const auto seeds = cmd.flags.seed_list();
  std::vector<TrainConfig> configs;
  for (auto s : seeds) configs.push_back(cmd.flags.resolve(variant, cmd.epsilon1, cmd.beta, s));
  if (cmd.flags.dump_config) {
    auto doc = config_to_json(configs.front());
    doc["seeds"] = seeds;
    out << doc.dump(2) << "\n";
    return kExitOk;
  }
  const auto started = utc_timestamp();
  const auto dir = cmd.flags.out_dir();
  std::filesystem::create_directories(dir);
  std::vector<RunMetrics> runs(configs.size());
  parallel_for(configs.size(), cmd.flags.workers, [&](std::size_t i) {
    runs[i] = train(configs[i]);
    const auto path = run_csv_path(dir, variant, seeds[i]);
    csv::write_file(path.string(), metrics_to_csv(runs[i]));
    auto manifest = metrics_manifest(runs[i], configs[i]);
    manifest["metrics_csv"] = path.string();
    write_json_file(path.string().substr(0, path.string().size() - 4) + "_manifest.json", manifest);
  });

  std::vector<double> rets, lens, falls;
  std::vector<std::string> outputs;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto fw = final_window(runs[i].records);
    rets.push_back(fw.final_return);
    lens.push_back(fw.final_len);
    falls.push_back(static_cast<double>(fw.cliff_falls));
    outputs.push_back(run_csv_path(dir, variant, seeds[i]).string());
  }
  csv::Table agg;
  agg.header = {"variant", "metric", "mean", "std", "n_seeds"};
  const std::pair<const char*, const std::vector<double>*> metrics[] = {
      {"final_return", &rets}, {"final_len", &lens}, {"cliff_falls", &falls}};
  for (const auto& [name, xs] : metrics) {
    const auto ms = mean_std(*xs);
    agg.rows.push_back({to_string(variant), name, csv::format_double(ms.mean), csv::format_double(ms.std),
                        std::to_string(xs->size())});
    out << to_string(variant) << " " << name << ": " << ms.mean << " +- " << ms.std << "\n";
  }
  const auto agg_path = dir / ("train_" + algo_slug(variant) + "_aggregate.csv");
  csv::write_file(agg_path.string(), csv::to_string(agg));
  outputs.push_back(agg_path.string());

  auto resolved = config_to_json(configs.front());
  resolved.erase("seed");
  write_json_file(dir / ("train_" + algo_slug(variant) + "_manifest.json"),
                  {{"command_line", command_line},
                   {"config", resolved},
                   {"seeds", seeds},
                   {"started", started},
                   {"finished", utc_timestamp()},
                   {"outputs", outputs}});
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AblateCommand {
  TrainFlags flags;
  std::vector<std::string> variants{"rpo", "rpo3", "rpo-jointclip"};
  std::vector<double> epsilon1_list{0.1};
  std::vector<double> beta_list{3.0};

  void attach(CLI::App& cmd) {
    flags.attach(cmd);
    cmd.add_option("--variants", variants)
        ->delimiter(',')
        ->check(CLI::IsMember({"ppo", "rpo", "rpo3", "rpo-jointclip"}))
        ->capture_default_str();
    cmd.add_option("--epsilon1-list", epsilon1_list)->delimiter(',')->capture_default_str();
    cmd.add_option("--beta-list", beta_list)->delimiter(',')->capture_default_str();
  }
};

struct AblateRun {
  Variant variant;
  double epsilon1;
  double beta;
  std::uint64_t seed;
  TrainConfig config;
  FinalWindow result;
};

inline int cmd_ablate(AblateCommand& cmd, const std::string& command_line, std::ostream& out, std::ostream& err) {
  if (cmd.variants.empty() || cmd.epsilon1_list.empty() || cmd.beta_list.empty()) {
    err << "ablate: empty grid (need at least one variant, epsilon1 and beta)\n";
    return kExitUsage;
  }
  std::vector<AblateRun> runs;
  for (const auto& tag : cmd.variants)
    for (double e1 : cmd.epsilon1_list)
      for (double b : cmd.beta_list)
        for (auto s : cmd.flags.seed_list()) {
          const auto v = variant_from_string(tag);
          runs.push_back({v, e1, b, s, cmd.flags.resolve(v, e1, b, s), {}});
        }
  if (cmd.flags.dump_config) {
    auto doc = config_to_json(runs.front().config);
    doc.erase("variant");
    doc.erase("epsilon1");
    doc.erase("beta");
    doc.erase("seed");
    doc["variants"] = cmd.variants;
    doc["epsilon1_list"] = cmd.epsilon1_list;
    doc["beta_list"] = cmd.beta_list;
    doc["seeds"] = cmd.flags.seed_list();
    out << doc.dump(2) << "\n";
    return kExitOk;
  }
  const auto started = utc_timestamp();
  const auto dir = cmd.flags.out_dir();
  std::filesystem::create_directories(dir / "ablate_runs");
  std::vector<std::string> run_paths(runs.size());
  parallel_for(runs.size(), cmd.flags.workers, [&](std::size_t i) {
    auto& run = runs[i];
    const auto metrics = train(run.config);
    run.result = final_window(metrics.records);
    const auto path = dir / "ablate_runs" /
                      (algo_slug(run.variant) + "_e" + csv::format_double(run.epsilon1) + "_b" +
                       csv::format_double(run.beta) + "_seed" + std::to_string(run.seed) + ".csv");
    csv::write_file(path.string(), metrics_to_csv(metrics));
    run_paths[i] = path.string();
  });

  csv::Table table;
  table.header = {"variant", "epsilon1", "beta", "seed", "final_return", "final_len", "cliff_falls"};
  for (const auto& run : runs)
    table.rows.push_back({to_string(run.variant), csv::format_double(run.epsilon1), csv::format_double(run.beta),
                          std::to_string(run.seed), csv::format_double(run.result.final_return),
                          csv::format_double(run.result.final_len), std::to_string(run.result.cliff_falls)});
  const auto table_path = dir / "ablate.csv";
  csv::write_file(table_path.string(), csv::to_string(table));
  write_json_file(dir / "ablate_manifest.json", {{"command_line", command_line},
                                                 {"variants", cmd.variants},
                                                 {"epsilon1_list", cmd.epsilon1_list},
                                                 {"beta_list", cmd.beta_list},
                                                 {"seeds", cmd.flags.seed_list()},
                                                 {"started", started},
                                                 {"finished", utc_timestamp()},
                                                 {"outputs", {table_path.string()}},
                                                 {"run_outputs", run_paths}});
  out << "ablate: " << runs.size() << " runs -> " << table_path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Entry point shared by the executable and the tests. Exit codes: 0 ok,
/// 1 failed checks or runtime error, 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Reflective policy optimization lab"};
  app.require_subcommand(1);
  VerifyFlags verify;
  TrainCommand train_cmd;
  AblateCommand ablate;
  verify.attach(*app.add_subcommand("verify", "exact identity and bound checks on random tabular MDPs"));
  train_cmd.attach(*app.add_subcommand("train", "train one algorithm over one or more seeds"));
  ablate.attach(*app.add_subcommand("ablate", "variant x epsilon1 x beta x seed grid"));

  std::string command_line;
  std::vector<char*> argv;
  std::vector<std::string> storage = args;
  for (auto& a : storage) {
    argv.push_back(a.data());
    command_line += (command_line.empty() ? "" : " ") + a;
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (app.got_subcommand("verify")) return cmd_verify(verify, command_line, out, err);
    if (app.got_subcommand("train")) return cmd_train(train_cmd, command_line, out, err);
    return cmd_ablate(ablate, command_line, out, err);
  } catch (const LabError& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::OutOfRange:
      case ErrorKind::Parse:
      case ErrorKind::RegimeViolation: return kExitUsage;
      default: return kExitFailure;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace rpo::cli
