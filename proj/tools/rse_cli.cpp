#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rse/analysis.hpp"
#include "rse/config.hpp"
#include "rse/csv.hpp"
#include "rse/env.hpp"
#include "rse/error.hpp"
#include "rse/harness.hpp"

namespace {

using namespace rse;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

std::uint64_t fresh_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  const std::uint64_t s = fresh_seed();
  std::cout << "no --seed given; using seed " << s << "\n";
  return s;
}

// File document (or an empty object) with --set overrides applied.
Json load_document(const Common& c, std::string& source) {
  Json doc = Json::object();
  if (!c.config_path.empty()) {
    source = csv::read_text(c.config_path);
    doc = parse_json_text(source);
  }
  for (const auto& o : c.overrides) apply_override(doc, o);
  return doc;
}

void echo(const Json& effective) {
  std::cout << "effective config:\n" << effective.dump(2) << "\n" << std::flush;
}

void print_record(const RunRecord& r, bool resumed = false) {
  std::printf("%-9s p=%-4g seed=%-20llu episodes=%-7lld score=%8.3f%s%s\n",
              std::string(preset_name(r.config.algorithm)).c_str(), r.config.env.p,
              static_cast<unsigned long long>(r.config.seed), static_cast<long long>(r.episodes),
              r.reeval_scores.empty() ? 0.0 : run_score(r), r.failed ? "  FAILED" : "",
              resumed ? "  (resumed)" : "");
  std::fflush(stdout);
}

int cmd_run(const Common& c) {
  std::string source;
  Json doc = load_document(c, source);
  const bool seeded = c.seed || doc.contains("seed");
  if (!c.out.empty()) doc["output_dir"] = c.out;
  if (c.seed) doc["seed"] = *c.seed;
  RunConfig cfg;
  try {
    cfg = run_config_from_json(doc);
  } catch (const ConfigError& e) {
    throw locate(e, source);
  }
  if (!seeded) cfg.seed = resolve_seed(std::nullopt);
  echo(to_json(cfg));
  const RunRecord rec = run_single(cfg);
  print_record(rec);
  if (rec.failed) std::printf("numerical abort: %s\n", rec.failure.c_str());
  return 0;
}

int cmd_grid(const Common& c) {
  std::string source;
  Json doc = load_document(c, source);
  if (!c.out.empty()) doc["output_dir"] = c.out;
  const bool seeded = c.seed || doc.contains("base_seed");
  if (c.seed) doc["base_seed"] = *c.seed;
  if (c.workers) {
    doc["workers"] = *c.workers;
  } else if (const char* env = std::getenv("RSE_WORKERS")) {
    try {
      doc["workers"] = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("RSE_WORKERS", std::string("not an integer: '") + env + "'");
    }
  }
  GridConfig grid;
  try {
    grid = grid_config_from_json(doc);
  } catch (const ConfigError& e) {
    throw locate(e, source);
  }
  if (!seeded) grid.base_seed = resolve_seed(std::nullopt);
  echo(to_json(grid));
  const GridResult result =
      run_grid(grid, [](const RunRecord& r, bool resumed) { print_record(r, resumed); });
  std::printf("%zu records (%d resumed), %zu failures\n", result.records.size(), result.resumed,
              result.failures.size());
  for (const auto& f : result.failures) std::printf("  failed: %s\n", f.c_str());
  return result.failures.empty() ? 0 : kExitRuntime;
}

int cmd_reeval(const Common& c, const std::string& policy_path, int episodes, double p_eval) {
  const ParamVector policy = load_params(policy_path);
  const std::uint64_t seed = resolve_seed(c.seed);
  echo(Json{{"policy", policy_path}, {"algorithm", std::string(preset_name(policy.preset))},
            {"episodes", episodes}, {"p_eval", p_eval}, {"seed", seed}, {"out", c.out}});
  Rng rng(seed);
  const std::vector<double> scores = reevaluate(policy, policy.preset, episodes, p_eval, rng);
  if (!c.out.empty()) {
    std::string text = "episode,return\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
      text += std::to_string(i) + "," + csv::format(scores[i]) + "\n";
    csv::write_text(c.out, text);
  }
  if (scores.empty()) return 0;
  const Summary s = median_mad(scores);
  std::printf("episodes=%zu mean=%.4f std=%.4f median=%.4f\n", s.n, s.mean, s.std, s.median);
  return 0;
}

int cmd_probe(const Common& c, const std::string& policy_path) {
  const ParamVector policy = load_params(policy_path);
  const std::uint64_t seed = resolve_seed(c.seed);
  const std::string out = c.out.empty() ? "." : c.out;
  echo(Json{{"policy", policy_path}, {"algorithm", std::string(preset_name(policy.preset))},
            {"seed", seed}, {"out", out}});
  Rng rng(seed);
  const std::vector<double> xs = probe_investment(policy, policy.preset, rng);
  const AcceptanceProfile prof = probe_acceptance(policy, policy.preset, rng);

  std::filesystem::create_directories(out);
  std::string inv = "draw,investment\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    inv += std::to_string(i) + "," + csv::format(xs[i]) + "\n";
  csv::write_text(std::filesystem::path(out) / "probe_investment.csv", inv);
  std::string acc = "partner_investment,accept_probability,mean_investment\n";
  for (std::size_t i = 0; i < prof.partner_investment.size(); ++i)
    acc += csv::format(prof.partner_investment[i]) + "," +
           csv::format(prof.accept_probability[i]) + "," + csv::format(prof.mean_investment) +
           "\n";
  csv::write_text(std::filesystem::path(out) / "probe_acceptance.csv", acc);

  const Summary s = median_mad(xs);
  std::printf("investment mean=%.4f std=%.4f\n", s.mean, s.std);
  for (std::size_t i = 0; i < prof.partner_investment.size(); ++i)
    std::printf("  partner %5.1f  accept %.2f\n", prof.partner_investment[i],
                prof.accept_probability[i]);
  return 0;
}

int cmd_tables(const Common& c, const std::string& input, bool curves, bool all) {
  const std::vector<RunRecord> records = load_records(input);
  const std::string out = c.out.empty() ? input : c.out;
  EmitOptions opts;
  opts.seed = c.seed.value_or(0);
  opts.tables = !curves || all;
  opts.curves = curves || all;
  opts.probes = all;
  echo(Json{{"input", input}, {"records", records.size()}, {"seed", opts.seed}, {"out", out},
            {"tables", opts.tables}, {"curves", opts.curves}, {"probes", opts.probes}});
  for (const auto& path : emit_tables_and_plotdata(records, out, opts))
    std::printf("wrote %s\n", path.string().c_str());
  if (opts.tables) {
    std::printf("%-6s %-9s %8s %7s %8s %7s %4s\n", "p", "algorithm", "median", "mad", "mean",
                "std", "n");
    for (const SummaryRow& r : summarize(records))
      std::printf("%-6g %-9s %8.2f %7.2f %8.2f %7.2f %4zu\n", r.p, r.algorithm.c_str(),
                  r.stats.median, r.stats.mad, r.stats.mean, r.stats.std, r.stats.n);
    for (const auto& [p, t] : compare_algorithms(records))
      std::printf("%-6g %-22s p=%-10.2g U=%g\n", p, t.comparison.c_str(), t.p_value,
                  t.u_statistic);
  }
  return 0;
}

int cmd_timing(const Common& c, const std::string& algorithm, double p, double seconds,
               const std::string& policy_path) {
  TimingProbe probe;
  probe.seconds = seconds;
  probe.seed = resolve_seed(c.seed);
  Preset preset;
  try {
    preset = parse_preset(algorithm);
  } catch (const ContractError& e) {
    throw ConfigError("algorithm", e.what());
  }
  if (!policy_path.empty()) probe.initial = load_params(policy_path);
  echo(Json{{"algorithm", algorithm}, {"p", p}, {"seconds", seconds}, {"seed", probe.seed},
            {"policy", policy_path}});
  const TimingResult r = step_timing_probe(preset, p, probe);
  std::printf("ms_per_step=%.6f env_steps=%lld episodes=%lld updates=%lld "
              "updates_per_step=%.6g seconds=%.3f\n",
              r.ms_per_step, static_cast<long long>(r.env_steps),
              static_cast<long long>(r.episodes), static_cast<long long>(r.updates),
              r.updates_per_step(), r.seconds);
  return 0;
}

int cmd_oracle(double x, double threshold, double p) {
  EnvConfig env;
  env.p = p;
  echo(Json{{"x", x}, {"threshold", threshold}, {"p", p}});
  std::printf("%.6f\n", expected_return_oracle(x, threshold, env));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partner-choice benchmark: CMA-ES versus PPO under rare significant events"};
  app.require_subcommand(1);

  Common c;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
      sub->add_option("--set", c.overrides, "Override as dotted.key=value (repeatable)");
      sub->add_option("--workers", c.workers, "Worker threads (default: RSE_WORKERS or 1)");
    }
    sub->add_option("--seed", c.seed, "Seed (drawn and printed when omitted)");
    sub->add_option("--out", c.out, "Output path");
  };

  auto* run = app.add_subcommand("run", "Train and re-evaluate one run");
  add_common(run, true);
  auto* grid = app.add_subcommand("grid", "Run an (algorithm x p) grid, resuming finished runs");
  add_common(grid, true);

  std::string policy_path;
  int episodes = 1000;
  double p_eval = 1.0;
  auto* reeval = app.add_subcommand("reeval", "Re-evaluate a saved policy without learning");
  add_common(reeval, false);
  reeval->add_option("--policy", policy_path, "policy.bin")->required()->check(CLI::ExistingFile);
  reeval->add_option("--episodes", episodes, "Episodes")->check(CLI::NonNegativeNumber);
  reeval->add_option("--p", p_eval, "Rarity during re-evaluation");

  auto* probe = app.add_subcommand("probe", "Investment and acceptance probes of a policy");
  add_common(probe, false);
  probe->add_option("--policy", policy_path, "policy.bin")->required()->check(CLI::ExistingFile);

  std::string input;
  bool all = false;
  auto* stats = app.add_subcommand("stats", "Summary and U-test tables from run directories");
  add_common(stats, false);
  stats->add_option("--input", input, "Grid or run directory")->required();
  stats->add_flag("--all", all, "Also emit curves, probes and plot scripts");
  auto* curves = app.add_subcommand("curves", "Aggregated learning curves with 95% bands");
  add_common(curves, false);
  curves->add_option("--input", input, "Grid or run directory")->required();

  std::string algorithm = "CMAES";
  double p = 1.0, seconds = 10.0;
  auto* timing = app.add_subcommand("timing", "Milliseconds per environment step, learning included");
  add_common(timing, false);
  timing->add_option("--algorithm", algorithm, "CMAES, PPO-MLP or PPO-DEEP");
  timing->add_option("--p", p, "Rarity");
  timing->add_option("--seconds", seconds, "Time budget")->check(CLI::PositiveNumber);
  timing->add_option("--policy", policy_path, "Start from this policy")->check(CLI::ExistingFile);

  double x = 10.0, threshold = 10.0;
  auto* oracle = app.add_subcommand("oracle", "Expected return of a threshold policy");
  oracle->add_option("--x", x, "Focal investment");
  oracle->add_option("--threshold", threshold, "Accept partners investing at least this");
  oracle->add_option("--p", p, "Rarity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(c);
    if (*grid) return cmd_grid(c);
    if (*reeval) return cmd_reeval(c, policy_path, episodes, p_eval);
    if (*probe) return cmd_probe(c, policy_path);
    if (*stats) return cmd_tables(c, input, false, all);
    if (*curves) return cmd_tables(c, input, true, false);
    if (*timing) return cmd_timing(c, algorithm, p, seconds, policy_path);
    if (*oracle) return cmd_oracle(x, threshold, p);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
