#pragma once

#include <cstdint>

#include "rse/random.hpp"

namespace rse {

/// Partner-choice game parameters.
///
/// Per step the focal agent meets a cooperative partner with probability `p`,
/// otherwise a non-cooperative one. Episodes time out after
/// round(base_meetings / p) steps so the expected number of cooperative
/// meetings stays at `base_meetings` regardless of rarity.
struct EnvConfig {
  double p = 1.0;
  double a = 5.0;
  double b = 5.0;
  double invest_min = 0.0;
  double invest_max = 15.0;
  int i_max = 31;
  double base_meetings = 100.0;

  /// Throws ContractError if any invariant is broken.
  void validate() const;

  std::int64_t max_steps() const;
  double clamp_investment(double x) const;
  /// Investment of cooperative partner `i` (1-based), on a uniform grid from
  /// invest_min to invest_max inclusive.
  double partner_investment(int i) const;
};

struct Partner {
  double investment = 0.0;
  bool cooperative = false;
  int index = 0;  // 1..i_max for cooperative partners, 0 otherwise
};

struct EpisodeState {
  std::int64_t t = 0;
  double focal_investment = 0.0;
  bool done = false;
  double final_reward = 0.0;
};

struct StepOutcome {
  double focal_investment = 0.0;
  double partner_investment = 0.0;
  double reward = 0.0;
  bool done = false;
  bool matched = false;
  // Diagnostic only; never part of the policy's observation.
  bool partner_was_cooperative = false;
};

/// Focal gain a*x_focal + b*x_partner - x_focal^2/2.
double payoff(double x_focal, double x_partner, const EnvConfig& cfg);

/// Grid investment for the default game (i in 1..31 maps to 0, 0.5, ..., 15).
double partner_investment(int i);

bool partner_accepts(const Partner& partner, double x_focal);

Partner sample_partner(const EnvConfig& cfg, Rng& rng);

EpisodeState start_episode(const EnvConfig& cfg, double focal_investment);

/// Advances one step. The reward is nonzero only on a mutual acceptance with
/// a cooperative partner, which ends the episode; reaching max_steps() ends
/// it with reward 0.
StepOutcome step(EpisodeState& state, const EnvConfig& cfg, bool focal_accepts,
                 const Partner& partner);

/// Exact expected return of the deterministic policy "invest x_focal, accept
/// iff the partner's investment >= accept_threshold", summed over the partner
/// grid and the truncated geometric meeting process.
double expected_return_oracle(double x_focal, double accept_threshold,
                              const EnvConfig& cfg);

struct EpisodeResult {
  double reward = 0.0;
  std::int64_t steps = 0;
  std::int64_t cooperative_meetings = 0;
  bool matched = false;
};

/// Plays one episode with a fixed investment and a choice callback
/// `accept(x_focal, partner_investment, rng) -> bool`.
template <typename ChoiceFn>
EpisodeResult play_episode(const EnvConfig& cfg, double focal_investment,
                           ChoiceFn&& accept, Rng& rng) {
  EpisodeState state = start_episode(cfg, focal_investment);
  EpisodeResult result;
  while (!state.done) {
    const Partner partner = sample_partner(cfg, rng);
    if (partner.cooperative) ++result.cooperative_meetings;
    const bool yes = accept(state.focal_investment, partner.investment, rng);
    const StepOutcome out = step(state, cfg, yes, partner);
    result.reward += out.reward;
    result.matched = out.matched;
  }
  result.steps = state.t;
  return result;
}

}  // namespace rse
