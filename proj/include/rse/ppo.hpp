#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rse/env.hpp"
#include "rse/nets.hpp"
#include "rse/random.hpp"

namespace rse {

enum class OptimizerKind : std::uint8_t { Sgd, Adam };

struct PpoConfig {
  double learning_rate = 0.005;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int epochs = 10;
  int minibatch_size = 128;
  int batch_size = 4000;  // environment steps per update
  double beta_init = 0.2;
  double kl_target = 0.01;
  double clip_epsilon = 0.3;
  double gamma = 1.0;
  double gae_lambda = 1.0;
  bool use_critic = true;
  double value_loss_coeff = 1.0;
  bool standardize_advantages = true;

  /// Defaults for a preset (the learning rate differs between MLP and DEEP).
  static PpoConfig for_preset(Preset preset);
  void validate() const;
};

enum class SubPolicy : std::uint8_t { Investment, Choice };

struct Transition {
  SubPolicy sub_policy = SubPolicy::Choice;
  double observation[2] = {0.0, 0.0};  // choice: (own, partner); investment: unused
  double action = 0.0;                 // raw Gaussian draw (investment)
  bool accept = false;                 // category (choice)
  double log_prob_old = 0.0;
  double value_old = 0.0;
  // Behaviour-policy head: (mean, log_std) or (accept, refuse) logits.
  double head_old[2] = {0.0, 0.0};
  double reward = 0.0;
  bool terminal = false;
  std::int64_t episode_id = 0;
};

/// Complete episodes, each laid out as [investment, choice_0, ..., choice_T].
struct RolloutBatch {
  std::vector<Transition> transitions;
  std::vector<double> returns;
  std::vector<double> advantages;
  std::vector<double> episode_returns;
  std::int64_t env_steps = 0;  // steps simulated while collecting this batch
};

struct KlPenaltyState {
  double beta = 0.2;
};

/// First/second moment estimates for Adam; unused by plain SGD. Moments are
/// per parameter, and only the sub-policy being trained is stepped.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t steps[2] = {0, 0};  // per sub-policy
};

/// Actor/critic networks of a PPO preset evaluated against a flat vector.
class PpoModel {
 public:
  explicit PpoModel(Preset preset);

  Preset preset() const { return preset_; }

  GaussianHead investment_head(std::span<const double> params) const;
  double investment_value(std::span<const double> params) const;
  CategoricalHead choice_head(std::span<const double> params, const double obs[2], Tape& tape) const;
  double choice_value(std::span<const double> params, const double obs[2], Tape& tape) const;

  const Mlp& choice_actor() const { return choice_actor_; }
  const Mlp& choice_critic() const { return choice_critic_; }
  const Segment& segment(std::string_view name) const { return layout_.find(name); }

 private:
  Preset preset_;
  ParamVector layout_;
  Mlp choice_actor_;
  Mlp choice_critic_;
};

/// Gathers experience in fixed-size chunks of environment steps. An episode
/// still running when the chunk fills is carried over and delivered, complete,
/// with a later batch; every returned transition thus belongs to a finished
/// episode while updates stay exactly `batch_size` steps apart.
class RolloutCollector {
 public:
  RolloutCollector(EnvConfig env, int batch_size, std::uint64_t seed);

  RolloutBatch collect(const PpoModel& model, std::span<const double> params);

  std::int64_t episodes_started() const { return next_episode_; }
  bool has_pending_episode() const { return active_; }

 private:
  void begin_episode(const PpoModel& model, std::span<const double> params);

  EnvConfig env_;
  int batch_size_;
  std::uint64_t seed_;
  std::int64_t next_episode_ = 0;

  bool active_ = false;
  Rng episode_rng_;
  EpisodeState state_;
  std::vector<Transition> pending_;
  Tape tape_;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimation along each episode of the batch.
/// `values` holds one value estimate per transition. Advantages are
/// standardized per sub-policy when the config asks for it.
GaeResult compute_gae(const RolloutBatch& batch, std::span<const double> values,
                      const PpoConfig& cfg);

struct LossTerms {
  double objective = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
};

/// Mean over `indices` of the clipped surrogate minus beta*KL[old||new] minus
/// the value loss. Adds d(objective)/d(params) into `grad` when non-empty.
LossTerms ppo_loss(const PpoModel& model, std::span<const double> params,
                   const RolloutBatch& batch, std::span<const std::size_t> indices,
                   double beta, const PpoConfig& cfg, std::span<double> grad);

KlPenaltyState kl_beta_update(KlPenaltyState state, double measured_kl, double kl_target);

struct PpoDiagnostics {
  double mean_kl = 0.0;
  double beta = 0.0;  // after adaptation
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double mean_return = 0.0;
  std::size_t transitions = 0;
};

/// Re-evaluates behaviour log-probabilities and values under `params`, runs
/// GAE, then `epochs` passes of minibatch gradient ascent per sub-policy and
/// adapts beta. Throws NumericalError on non-finite parameters.
PpoDiagnostics ppo_update(const PpoModel& model, ParamVector& params, RolloutBatch& batch,
                          const PpoConfig& cfg, KlPenaltyState& kl_state, Rng& rng,
                          OptimizerState& optimizer);

/// Mean KL[old||new] over every transition of the batch, both heads.
double mean_batch_kl(const PpoModel& model, std::span<const double> params,
                     const RolloutBatch& batch);

/// Collect-then-update loop for one seeded run.
class PpoTrainer {
 public:
  PpoTrainer(Preset preset, EnvConfig env, PpoConfig cfg, std::uint64_t seed,
             std::optional<ParamVector> initial = std::nullopt);

  struct Iteration {
    RolloutBatch batch;
    PpoDiagnostics diagnostics;
  };

  /// One collect + update cycle. On NumericalError the parameters are left
  /// as they were before the failed update.
  Iteration iterate();

  const ParamVector& params() const { return params_; }
  const KlPenaltyState& kl_state() const { return kl_; }
  std::int64_t episodes_completed() const { return episodes_; }
  std::int64_t env_steps() const { return env_steps_; }
  std::int64_t updates() const { return updates_; }

 private:
  PpoModel model_;
  PpoConfig cfg_;
  ParamVector params_;
  RolloutCollector collector_;
  KlPenaltyState kl_;
  OptimizerState optimizer_;
  Rng update_rng_;
  std::int64_t episodes_ = 0;
  std::int64_t env_steps_ = 0;
  std::int64_t updates_ = 0;
};

}  // namespace rse
