#include "rse/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rse/error.hpp"

namespace rse {

void EnvConfig::validate() const {
  require(p > 0.0 && p <= 1.0, "env.p must be in (0, 1], got " + std::to_string(p));
  require(a >= 0.0 && b >= 0.0 && a + b > 0.0, "env.a and env.b must be >= 0 with a+b > 0");
  require(invest_min < invest_max, "env.invest_min must be < env.invest_max");
  require(i_max >= 2, "env.i_max must be >= 2");
  require(base_meetings > 0.0, "env.base_meetings must be > 0");
}

std::int64_t EnvConfig::max_steps() const {
  return std::max<std::int64_t>(1, std::llround(base_meetings / p));
}

double EnvConfig::clamp_investment(double x) const {
  return std::clamp(x, invest_min, invest_max);
}

double EnvConfig::partner_investment(int i) const {
  require(i >= 1 && i <= i_max, "partner index " + std::to_string(i) + " outside 1.." +
                                    std::to_string(i_max));
  return invest_min + (invest_max - invest_min) * static_cast<double>(i - 1) /
                          static_cast<double>(i_max - 1);
}

double payoff(double x_focal, double x_partner, const EnvConfig& cfg) {
  require(x_focal >= cfg.invest_min && x_focal <= cfg.invest_max,
          "payoff: focal investment out of range");
  require(x_partner >= cfg.invest_min && x_partner <= cfg.invest_max,
          "payoff: partner investment out of range");
  return cfg.a * x_focal + cfg.b * x_partner - 0.5 * x_focal * x_focal;
}

double partner_investment(int i) { return EnvConfig{}.partner_investment(i); }

bool partner_accepts(const Partner& partner, double x_focal) {
  return partner.cooperative && x_focal >= partner.investment;
}

Partner sample_partner(const EnvConfig& cfg, Rng& rng) {
  Partner partner;
  if (rng.uniform() < cfg.p) {
    partner.cooperative = true;
    partner.index = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.i_max)));
    partner.investment = cfg.partner_investment(partner.index);
  }
  return partner;
}

EpisodeState start_episode(const EnvConfig& cfg, double focal_investment) {
  EpisodeState s;
  s.focal_investment = cfg.clamp_investment(focal_investment);
  return s;
}

StepOutcome step(EpisodeState& state, const EnvConfig& cfg, bool focal_accepts,
                 const Partner& partner) {
  require(!state.done, "step: episode already finished");
  StepOutcome out;
  out.focal_investment = state.focal_investment;
  out.partner_investment = partner.investment;
  out.partner_was_cooperative = partner.cooperative;

  ++state.t;
  if (focal_accepts && partner_accepts(partner, state.focal_investment)) {
    out.reward = payoff(state.focal_investment, partner.investment, cfg);
    out.matched = true;
    out.done = true;
  } else if (state.t >= cfg.max_steps()) {
    out.done = true;
  }
  state.done = out.done;
  state.final_reward = out.reward;
  return out;
}

double expected_return_oracle(double x_focal, double accept_threshold, const EnvConfig& cfg) {
  cfg.validate();
  const double x = cfg.clamp_investment(x_focal);
  double match_prob = 0.0;  // per step
  double reward_mass = 0.0;  // sum over steps of P(match with i) * payoff
  for (int i = 1; i <= cfg.i_max; ++i) {
    const double xi = cfg.partner_investment(i);
    if (xi >= accept_threshold && x >= xi) {
      const double pi = cfg.p / static_cast<double>(cfg.i_max);
      match_prob += pi;
      reward_mass += pi * payoff(x, xi, cfg);
    }
  }
  if (match_prob <= 0.0) return 0.0;
  const auto horizon = static_cast<double>(cfg.max_steps());
  // sum_{t<T} (1-m)^t = (1 - (1-m)^T) / m
  const double survive = -std::expm1(horizon * std::log1p(-match_prob));
  return reward_mass * survive / match_prob;
}

}  // namespace rse
