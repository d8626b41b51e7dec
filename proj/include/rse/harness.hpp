#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rse/cmaes.hpp"
#include "rse/env.hpp"
#include "rse/nets.hpp"
#include "rse/ppo.hpp"
#include "rse/random.hpp"

namespace rse {

struct RunConfig {
  Preset algorithm = Preset::Cmaes;
  EnvConfig env;  // env.p is the rarity of the run
  std::int64_t episode_budget = 30000;
  std::uint64_t seed = 0;
  PpoConfig ppo;  // ignored for CMAES
  CmaesConfig cmaes;
  int reeval_episodes = 1000;
  double p_eval = 1.0;
  std::int64_t curve_spacing = 1000;
  std::filesystem::path output_dir;  // empty keeps the record in memory only

  void validate() const;
};

/// A run config with the algorithm's default hyper-parameters.
RunConfig default_run_config(Preset algorithm, double p);

struct CurvePoint {
  std::int64_t episode_index = 0;
  double mean_return = 0.0;
  std::int64_t env_steps = 0;
  std::map<std::string, double> diagnostics;
};

struct RunRecord {
  RunConfig config;
  std::vector<CurvePoint> curve;
  ParamVector final_policy;
  std::vector<double> reeval_scores;
  double wall_time = 0.0;
  bool failed = false;
  std::string failure;  // message of the numerical abort
  std::int64_t episodes = 0;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
};

/// Adds a point at every multiple of `spacing` in (from, to], each carrying
/// `mean_return`. A training chunk covering several grid points stamps all.
void stamp_curve(std::vector<CurvePoint>& curve, std::int64_t from, std::int64_t to,
                 std::int64_t spacing, double mean_return, std::int64_t env_steps,
                 const std::map<std::string, double>& diagnostics = {});

/// Trains, re-evaluates and (when output_dir is set) persists one run. A
/// numerical abort yields a record flagged as failed, truncated at the last
/// good iteration and still re-evaluated.
RunRecord run_single(const RunConfig& cfg);

/// Plays `episodes` episodes with learning disabled under rarity `p_eval`.
/// `env` supplies the payoff coefficients and partner grid.
std::vector<double> reevaluate(const ParamVector& policy, Preset algorithm, int episodes,
                               double p_eval, Rng& rng, EnvConfig env = {});

void save_record(const RunRecord& record, const std::filesystem::path& dir);
RunRecord load_record(const std::filesystem::path& dir);
/// True when `dir` holds a finished (completed or failed) record.
bool record_complete(const std::filesystem::path& dir);
/// Every finished record in the immediate subdirectories of `root`, in
/// directory-name order; `root` itself counts when it is a run directory.
std::vector<RunRecord> load_records(const std::filesystem::path& root);

struct GridConfig {
  std::vector<Preset> algorithms = {Preset::Cmaes, Preset::PpoDeep, Preset::PpoMlp};
  std::vector<double> p_values = {0.1, 0.2, 0.5, 1.0};
  int runs_per_cell = 2;
  std::uint64_t base_seed = 0;
  std::int64_t episode_budget = 30000;
  EnvConfig env;
  PpoConfig ppo_mlp = PpoConfig::for_preset(Preset::PpoMlp);
  PpoConfig ppo_deep = PpoConfig::for_preset(Preset::PpoDeep);
  CmaesConfig cmaes;
  int reeval_episodes = 1000;
  double p_eval = 1.0;
  std::filesystem::path output_dir;
  int workers = 1;

  void validate() const;
};

std::uint64_t run_seed(std::uint64_t base_seed, Preset algorithm, double p, int run_index);
std::string run_directory_name(Preset algorithm, double p, int run_index);

/// The run configs of a grid in (algorithm, p, run) order.
std::vector<RunConfig> expand_grid(const GridConfig& grid);

struct GridResult {
  std::vector<RunRecord> records;     // grid order, surviving runs only
  std::vector<std::string> failures;  // runs that could not produce a record
  int resumed = 0;                    // records loaded instead of recomputed
};

using ProgressFn = std::function<void(const RunRecord&, bool resumed)>;

/// Runs every cell on a pool of `workers` threads. Finished run directories
/// are loaded rather than recomputed.
GridResult run_grid(const GridConfig& grid, const ProgressFn& progress = {});

struct TimingResult {
  double ms_per_step = 0.0;
  double seconds = 0.0;
  std::int64_t env_steps = 0;
  std::int64_t episodes = 0;
  std::int64_t updates = 0;  // PPO updates or CMA-ES tell calls

  double updates_per_step() const;
};

struct TimingProbe {
  double seconds = 1.0;
  std::int64_t max_env_steps = 0;  // 0: bounded by time only
  std::uint64_t seed = 0;
  std::optional<ParamVector> initial;  // PPO start point or CMA-ES initial mean
};

/// Trains from the probe's start point and divides wall time, learning
/// included, by the environment steps completed.
TimingResult step_timing_probe(Preset algorithm, double p, const TimingProbe& probe);

}  // namespace rse
