#include "rse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include "rse/config.hpp"
#include "rse/csv.hpp"
#include "rse/error.hpp"

namespace rse {

namespace fs = std::filesystem;

namespace {

// Sub-stream keys below a run seed.
enum : std::uint64_t { kTrainStream = 1, kSelectStream = 2, kReevalStream = 3 };

constexpr const char* kConfigFile = "config.json";
constexpr const char* kCurveFile = "curve.csv";
constexpr const char* kPolicyFile = "policy.bin";
constexpr const char* kReevalFile = "reeval.csv";
constexpr const char* kStatusFile = "status.json";
constexpr const char* kLogFile = "train_log.jsonl";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// One JSON line per update or generation; kept outside the record proper.
class TrainLog {
 public:
  explicit TrainLog(const fs::path& dir) {
    if (dir.empty()) return;
    file_ = std::fopen((dir / kLogFile).string().c_str(), "w");
    if (!file_) throw std::runtime_error("cannot write " + (dir / kLogFile).string());
  }
  ~TrainLog() {
    if (file_) std::fclose(file_);
  }
  TrainLog(const TrainLog&) = delete;
  TrainLog& operator=(const TrainLog&) = delete;

  void write(std::int64_t update, std::int64_t episodes, std::int64_t steps, double mean_return,
             const std::map<std::string, double>& diag) {
    if (!file_) return;
    Json j{{"update", update}, {"episodes", episodes}, {"env_steps", steps},
           {"mean_return", mean_return}};
    for (const auto& [k, v] : diag) j[k] = v;
    std::fprintf(file_, "%s\n", j.dump().c_str());
  }

 private:
  std::FILE* file_ = nullptr;
};

RunRecord train_ppo(const RunConfig& cfg, TrainLog& log) {
  RunRecord rec;
  PpoTrainer trainer(cfg.algorithm, cfg.env, cfg.ppo, derive_seed(cfg.seed, {kTrainStream}));
  try {
    while (trainer.episodes_completed() < cfg.episode_budget) {
      const std::int64_t before = trainer.episodes_completed();
      const PpoTrainer::Iteration it = trainer.iterate();
      const PpoDiagnostics& d = it.diagnostics;
      const std::map<std::string, double> diag{{"beta", d.beta},
                                               {"clip_fraction", d.clip_fraction},
                                               {"kl", d.mean_kl},
                                               {"value_loss", d.value_loss}};
      stamp_curve(rec.curve, before, trainer.episodes_completed(), cfg.curve_spacing,
                  d.mean_return, trainer.env_steps(), diag);
      log.write(trainer.updates(), trainer.episodes_completed(), trainer.env_steps(),
                d.mean_return, diag);
    }
  } catch (const NumericalError& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  rec.final_policy = trainer.params();
  rec.episodes = trainer.episodes_completed();
  rec.env_steps = trainer.env_steps();
  rec.updates = trainer.updates();
  return rec;
}

RunRecord train_cmaes(const RunConfig& cfg, TrainLog& log) {
  RunRecord rec;
  CmaesTrainer trainer(cfg.env, cfg.cmaes, derive_seed(cfg.seed, {kTrainStream}));
  std::vector<Genome> last_generation;
  try {
    while (trainer.episodes_completed() < cfg.episode_budget) {
      const std::int64_t before = trainer.episodes_completed();
      CmaesTrainer::Generation g = trainer.iterate();
      const std::map<std::string, double> diag{
          {"best_fitness", g.fitnesses[g.best.index]}, {"sigma", trainer.state().sigma}};
      stamp_curve(rec.curve, before, trainer.episodes_completed(), cfg.curve_spacing,
                  g.best.mean_return, trainer.env_steps(), diag);
      log.write(trainer.updates(), trainer.episodes_completed(), trainer.env_steps(),
                g.best.mean_return, diag);
      last_generation = std::move(g.genomes);
    }
  } catch (const NumericalError& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  if (last_generation.empty()) {
    rec.final_policy = genome_to_params(trainer.state().mean);
  } else {
    Rng select(derive_seed(cfg.seed, {kSelectStream}));
    const std::size_t best =
        best_by_reevaluation(last_generation, cfg.env, select, cfg.cmaes.reeval_episodes);
    rec.final_policy = genome_to_params(last_generation[best]);
  }
  rec.episodes = trainer.episodes_completed();
  rec.env_steps = trainer.env_steps();
  rec.updates = trainer.updates();
  return rec;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::vector<std::string> keys;
  if (!curve.empty())
    for (const auto& kv : curve.front().diagnostics) keys.push_back(kv.first);
  std::ostringstream out;
  out << "episode_index,mean_return,env_steps";
  for (const auto& k : keys) out << ',' << k;
  out << '\n';
  for (const CurvePoint& c : curve) {
    out << c.episode_index << ',' << csv::format(c.mean_return) << ',' << c.env_steps;
    for (const auto& k : keys) {
      const auto it = c.diagnostics.find(k);
      out << ',' << csv::format(it == c.diagnostics.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
  return out.str();
}

std::string reeval_csv(const std::vector<double>& scores) {
  std::ostringstream out;
  out << "episode,return\n";
  for (std::size_t i = 0; i < scores.size(); ++i) out << i << ',' << csv::format(scores[i]) << '\n';
  return out.str();
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  require(episode_budget >= 0, "episode_budget must be >= 0");
  require(reeval_episodes >= 0, "reeval_episodes must be >= 0");
  require(p_eval > 0.0 && p_eval <= 1.0, "p_eval must be in (0, 1]");
  require(curve_spacing >= 1, "curve_spacing must be >= 1");
  if (algorithm == Preset::Cmaes) {
    cmaes.validate();
  } else {
    ppo.validate();
  }
}

RunConfig default_run_config(Preset algorithm, double p) {
  RunConfig cfg;
  cfg.algorithm = algorithm;
  cfg.env.p = p;
  if (algorithm != Preset::Cmaes) cfg.ppo = PpoConfig::for_preset(algorithm);
  return cfg;
}

void stamp_curve(std::vector<CurvePoint>& curve, std::int64_t from, std::int64_t to,
                 std::int64_t spacing, double mean_return, std::int64_t env_steps,
                 const std::map<std::string, double>& diagnostics) {
  require(spacing >= 1, "stamp_curve: spacing must be >= 1");
  for (std::int64_t g = (from / spacing + 1) * spacing; g <= to; g += spacing)
    curve.push_back(CurvePoint{g, mean_return, env_steps, diagnostics});
}

std::vector<double> reevaluate(const ParamVector& policy, Preset algorithm, int episodes,
                               double p_eval, Rng& rng, EnvConfig env) {
  require(policy.preset == algorithm, "reevaluate: policy is " +
                                          std::string(preset_name(policy.preset)) + ", not " +
                                          std::string(preset_name(algorithm)));
  require(episodes >= 0, "reevaluate: episodes must be >= 0");
  env.p = p_eval;
  env.validate();
  AgentPolicy agent(policy);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    const double x = agent.sample_investment(rng);
    out.push_back(play_episode(
                      env, x,
                      [&](double own, double partner, Rng& r) {
                        return agent.sample_accept(own, partner, r);
                      },
                      rng)
                      .reward);
  }
  return out;
}

RunRecord run_single(const RunConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    fs::remove(cfg.output_dir / kStatusFile);
    csv::write_text(cfg.output_dir / kConfigFile, to_json(cfg).dump(2) + "\n");
  }

  RunRecord rec;
  {
    TrainLog log(cfg.output_dir);
    rec = cfg.algorithm == Preset::Cmaes ? train_cmaes(cfg, log) : train_ppo(cfg, log);
  }
  rec.config = cfg;
  Rng reeval_rng(derive_seed(cfg.seed, {kReevalStream}));
  rec.reeval_scores = reevaluate(rec.final_policy, cfg.algorithm, cfg.reeval_episodes,
                                 cfg.p_eval, reeval_rng, cfg.env);
  rec.wall_time = seconds_since(t0);
  if (!cfg.output_dir.empty()) save_record(rec, cfg.output_dir);
  return rec;
}

void save_record(const RunRecord& record, const fs::path& dir) {
  fs::create_directories(dir);
  csv::write_text(dir / kConfigFile, to_json(record.config).dump(2) + "\n");
  csv::write_text(dir / kCurveFile, curve_csv(record.curve));
  save_params(dir / kPolicyFile, record.final_policy);
  csv::write_text(dir / kReevalFile, reeval_csv(record.reeval_scores));
  // Written last: its presence marks the directory as finished.
  const Json status{{"schema_version", kSchemaVersion},
                    {"status", record.failed ? "failed" : "completed"},
                    {"failure", record.failure},
                    {"episodes", record.episodes},
                    {"env_steps", record.env_steps},
                    {"updates", record.updates},
                    {"wall_time", record.wall_time}};
  csv::write_text(dir / kStatusFile, status.dump(2) + "\n");
}

bool record_complete(const fs::path& dir) {
  if (!fs::exists(dir / kStatusFile)) return false;
  try {
    const Json s = Json::parse(csv::read_text(dir / kStatusFile));
    const std::string status = s.value("status", "");
    return status == "completed" || status == "failed";
  } catch (const std::exception&) {
    return false;
  }
}

RunRecord load_record(const fs::path& dir) {
  RunRecord rec;
  rec.config = run_config_from_json(parse_json_text(csv::read_text(dir / kConfigFile)));

  const csv::Table curve = csv::read(dir / kCurveFile);
  for (const auto& row : curve.rows) {
    CurvePoint c;
    c.episode_index = csv::to_int(row[0]);
    c.mean_return = csv::to_double(row[1]);
    c.env_steps = csv::to_int(row[2]);
    for (std::size_t k = 3; k < row.size(); ++k)
      c.diagnostics[curve.header[k]] = csv::to_double(row[k]);
    rec.curve.push_back(std::move(c));
  }

  rec.final_policy = load_params(dir / kPolicyFile);
  const csv::Table reeval = csv::read(dir / kReevalFile);
  const std::size_t col = reeval.column("return");
  for (const auto& row : reeval.rows) rec.reeval_scores.push_back(csv::to_double(row[col]));

  const Json s = Json::parse(csv::read_text(dir / kStatusFile));
  rec.failed = s.at("status").get<std::string>() == "failed";
  rec.failure = s.value("failure", "");
  rec.episodes = s.at("episodes").get<std::int64_t>();
  rec.env_steps = s.at("env_steps").get<std::int64_t>();
  rec.updates = s.at("updates").get<std::int64_t>();
  rec.wall_time = s.at("wall_time").get<double>();
  return rec;
}

std::vector<RunRecord> load_records(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  if (record_complete(root)) return {load_record(root)};
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && record_complete(entry.path())) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRecord> out;
  for (const auto& d : dirs) out.push_back(load_record(d));
  return out;
}

void GridConfig::validate() const {
  require(!algorithms.empty(), "algorithms must not be empty");
  require(!p_values.empty(), "p_values must not be empty");
  require(runs_per_cell >= 1, "runs_per_cell must be >= 1");
  require(episode_budget >= 0, "episode_budget must be >= 0");
  require(reeval_episodes >= 0, "reeval_episodes must be >= 0");
  require(p_eval > 0.0 && p_eval <= 1.0, "p_eval must be in (0, 1]");
  require(workers >= 1, "workers must be >= 1");
  for (double p : p_values) {
    EnvConfig e = env;
    e.p = p;
    e.validate();
  }
  ppo_mlp.validate();
  ppo_deep.validate();
  cmaes.validate();
}

std::uint64_t run_seed(std::uint64_t base_seed, Preset algorithm, double p, int run_index) {
  return derive_seed(base_seed, {static_cast<std::uint64_t>(algorithm),
                                 std::bit_cast<std::uint64_t>(p),
                                 static_cast<std::uint64_t>(run_index)});
}

std::string run_directory_name(Preset algorithm, double p, int run_index) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_p%g_run%03d", std::string(preset_name(algorithm)).c_str(), p,
                run_index);
  return buf;
}

std::vector<RunConfig> expand_grid(const GridConfig& grid) {
  grid.validate();
  std::vector<RunConfig> out;
  for (Preset algorithm : grid.algorithms)
    for (double p : grid.p_values)
      for (int r = 0; r < grid.runs_per_cell; ++r) {
        RunConfig cfg = default_run_config(algorithm, p);
        cfg.env = grid.env;
        cfg.env.p = p;
        cfg.episode_budget = grid.episode_budget;
        cfg.seed = run_seed(grid.base_seed, algorithm, p, r);
        if (algorithm == Preset::PpoMlp) cfg.ppo = grid.ppo_mlp;
        if (algorithm == Preset::PpoDeep) cfg.ppo = grid.ppo_deep;
        cfg.cmaes = grid.cmaes;
        cfg.reeval_episodes = grid.reeval_episodes;
        cfg.p_eval = grid.p_eval;
        if (!grid.output_dir.empty())
          cfg.output_dir = grid.output_dir / run_directory_name(algorithm, p, r);
        out.push_back(std::move(cfg));
      }
  return out;
}

GridResult run_grid(const GridConfig& grid, const ProgressFn& progress) {
  const std::vector<RunConfig> configs = expand_grid(grid);
  std::vector<std::optional<RunRecord>> records(configs.size());
  std::vector<std::string> errors(configs.size());
  std::vector<char> resumed(configs.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      const RunConfig& cfg = configs[i];
      try {
        if (!cfg.output_dir.empty() && record_complete(cfg.output_dir)) {
          records[i] = load_record(cfg.output_dir);
          resumed[i] = 1;
        } else {
          records[i] = run_single(cfg);
        }
        if (progress) {
          std::lock_guard lock(progress_mutex);
          progress(*records[i], resumed[i] != 0);
        }
      } catch (const std::exception& e) {
        errors[i] = run_directory_name(cfg.algorithm, cfg.env.p,
                                       static_cast<int>(i % static_cast<std::size_t>(
                                                                grid.runs_per_cell))) +
                    ": " + e.what();
      }
    }
  };

  const auto n = std::min<std::size_t>(static_cast<std::size_t>(grid.workers), configs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  GridResult result;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (records[i]) result.records.push_back(std::move(*records[i]));
    if (!errors[i].empty()) result.failures.push_back(errors[i]);
    result.resumed += resumed[i];
  }
  return result;
}

double TimingResult::updates_per_step() const {
  return env_steps == 0 ? 0.0 : static_cast<double>(updates) / static_cast<double>(env_steps);
}

TimingResult step_timing_probe(Preset algorithm, double p, const TimingProbe& probe) {
  require(probe.seconds > 0.0 || probe.max_env_steps > 0,
          "step_timing_probe: needs a time or step budget");
  EnvConfig env;
  env.p = p;
  env.validate();
  TimingResult res;
  const auto t0 = Clock::now();
  auto keep_going = [&](std::int64_t steps) {
    if (probe.max_env_steps > 0 && steps >= probe.max_env_steps) return false;
    return probe.seconds <= 0.0 || seconds_since(t0) < probe.seconds;
  };

  if (algorithm == Preset::Cmaes) {
    CmaesConfig cfg;
    if (probe.initial) {
      require(probe.initial->preset == Preset::Cmaes, "step_timing_probe: preset mismatch");
      cfg.mean_init = probe.initial->values;
    }
    CmaesTrainer trainer(env, cfg, probe.seed);
    while (keep_going(trainer.env_steps())) trainer.iterate();
    res.env_steps = trainer.env_steps();
    res.episodes = trainer.episodes_completed();
    res.updates = trainer.updates();
  } else {
    PpoTrainer trainer(algorithm, env, PpoConfig::for_preset(algorithm), probe.seed,
                       probe.initial);
    while (keep_going(trainer.env_steps())) trainer.iterate();
    res.env_steps = trainer.env_steps();
    res.episodes = trainer.episodes_completed();
    res.updates = trainer.updates();
  }
  res.seconds = seconds_since(t0);
  res.ms_per_step =
      res.env_steps == 0 ? 0.0 : 1000.0 * res.seconds / static_cast<double>(res.env_steps);
  return res;
}

}  // namespace rse
