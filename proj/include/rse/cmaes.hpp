#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rse/env.hpp"
#include "rse/nets.hpp"
#include "rse/random.hpp"

namespace rse {

using Genome = Eigen::VectorXd;

struct CmaesConfig {
  std::size_t dimension = kCmaesDimension;
  int population_size = 0;  // 0 selects 4 + floor(3 ln N)
  double sigma_init = 1.0;
  std::vector<double> mean_init;  // empty selects the zero vector
  int episodes_per_eval = 1;
  int reeval_episodes = 10;

  int lambda() const;
  void validate() const;
};

/// Search distribution N(mean, sigma^2 C) plus evolution paths.
///
/// Strategy constants follow the standard settings (Hansen's tutorial):
///   w_i    ~ ln(mu + 1/2) - ln i, normalized, mu = floor(lambda / 2)
///   c_sigma = (mu_eff + 2) / (N + mu_eff + 5)
///   d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1) / (N + 1)) - 1) + c_sigma
///   c_c     = (4 + mu_eff / N) / (N + 4 + 2 mu_eff / N)
///   c_1     = 2 / ((N + 1.3)^2 + mu_eff)
///   c_mu    = min(1 - c_1, 2 (mu_eff - 2 + 1 / mu_eff) / ((N + 2)^2 + mu_eff))
struct CmaesState {
  Eigen::VectorXd mean;
  double sigma = 1.0;
  Eigen::MatrixXd C;
  Eigen::MatrixXd B;  // eigenvectors of C
  Eigen::VectorXd D;  // sqrt of eigenvalues of C
  Eigen::VectorXd p_sigma;
  Eigen::VectorXd p_c;
  std::vector<double> weights;
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double chi_n = 0.0;
  int lambda = 0;
  int mu = 0;
  std::int64_t generation = 0;

  std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }
};

CmaesState make_cmaes_state(const CmaesConfig& cfg);

/// Samples lambda candidates mean + sigma * B D z with z ~ N(0, I).
std::vector<Genome> ask(const CmaesState& state, Rng& rng);

/// Rank-based update for maximization. Ties keep sample order.
void tell(CmaesState& state, std::span<const Genome> genomes, std::span<const double> fitnesses);

/// Investment is the first coordinate clamped to [0, 15]; coordinates 1..17
/// are the choice network; the rest never influence behaviour.
ParamVector genome_to_params(const Genome& genome);
Genome params_to_genome(const ParamVector& params);

EpisodeResult play_genome(const Genome& genome, const EnvConfig& env, Rng& rng);

/// One-episode fitness.
double evaluate_genome(const Genome& genome, const EnvConfig& env, Rng& rng);

struct GenerationBest {
  std::size_t index = 0;
  double mean_return = 0.0;
  std::int64_t env_steps = 0;
};

/// Replays the generation's best candidate (by single-episode fitness) for
/// `episodes` fresh episodes without touching the search state.
GenerationBest generation_best_reeval(std::span<const Genome> genomes,
                                      std::span<const double> fitnesses, const EnvConfig& env,
                                      Rng& rng, int episodes = 10);

/// Index of the candidate with the highest mean return over `episodes`
/// fresh episodes each; ties go to the lower index.
std::size_t best_by_reevaluation(std::span<const Genome> genomes, const EnvConfig& env, Rng& rng,
                                 int episodes = 10);

/// Ask/evaluate/tell loop for one seeded run.
class CmaesTrainer {
 public:
  CmaesTrainer(EnvConfig env, CmaesConfig cfg, std::uint64_t seed);

  struct Generation {
    std::vector<Genome> genomes;
    std::vector<double> fitnesses;
    GenerationBest best;
    Genome best_genome;
    std::int64_t train_env_steps = 0;
  };

  Generation iterate();

  const CmaesState& state() const { return state_; }
  std::int64_t episodes_completed() const { return episodes_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t updates() const { return state_.generation; }
  /// Best candidate of the latest generation, or the initial mean.
  const Genome& best_genome() const { return best_; }

 private:
  EnvConfig env_;
  CmaesConfig cfg_;
  CmaesState state_;
  std::uint64_t seed_;
  Genome best_;
  std::int64_t episodes_ = 0;
  std::int64_t env_steps_ = 0;
};

}  // namespace rse
