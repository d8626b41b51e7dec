#include "rse/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rse/error.hpp"

namespace rse {

PpoConfig PpoConfig::for_preset(Preset preset) {
  require(preset != Preset::Cmaes, "PPO config requested for the CMAES preset");
  PpoConfig cfg;
  cfg.learning_rate = preset == Preset::PpoDeep ? 0.001 : 0.005;
  return cfg;
}

void PpoConfig::validate() const {
  require(learning_rate > 0.0, "ppo.learning_rate must be > 0");
  require(epochs >= 1, "ppo.epochs must be >= 1");
  require(minibatch_size >= 1, "ppo.minibatch_size must be >= 1");
  require(batch_size >= 1, "ppo.batch_size must be >= 1");
  require(beta_init > 0.0, "ppo.beta_init must be > 0");
  require(kl_target > 0.0, "ppo.kl_target must be > 0");
  require(clip_epsilon > 0.0, "ppo.clip_epsilon must be > 0");
  require(gamma > 0.0 && gamma <= 1.0, "ppo.gamma must be in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "ppo.gae_lambda must be in [0, 1]");
  require(value_loss_coeff >= 0.0, "ppo.value_loss_coeff must be >= 0");
}

// The investment networks see the constant input 1.0 and have no bias, so
// their outputs are their weights: actor = (mean, log_std), critic = value.
PpoModel::PpoModel(Preset preset)
    : preset_(preset),
      layout_(make_params(preset)),
      choice_actor_(choice_actor_spec(preset)),
      choice_critic_(choice_critic_spec(preset)) {
  require(preset != Preset::Cmaes, "PpoModel requires a PPO preset");
}

GaussianHead PpoModel::investment_head(std::span<const double> params) const {
  const Segment& s = layout_.find(segments::kInvestmentActor);
  return GaussianHead{params[s.offset], params[s.offset + 1]};
}

double PpoModel::investment_value(std::span<const double> params) const {
  return params[layout_.find(segments::kInvestmentCritic).offset];
}

CategoricalHead PpoModel::choice_head(std::span<const double> params, const double obs[2],
                                      Tape& tape) const {
  const Segment& s = layout_.find(segments::kChoiceActor);
  const auto out = choice_actor_.forward(params.subspan(s.offset, s.length),
                                         std::span<const double>(obs, 2), tape);
  return CategoricalHead{out[0], out[1]};
}

double PpoModel::choice_value(std::span<const double> params, const double obs[2],
                              Tape& tape) const {
  const Segment& s = layout_.find(segments::kChoiceCritic);
  return choice_critic_.forward(params.subspan(s.offset, s.length),
                                std::span<const double>(obs, 2), tape)[0];
}

RolloutCollector::RolloutCollector(EnvConfig env, int batch_size, std::uint64_t seed)
    : env_(env), batch_size_(batch_size), seed_(seed) {
  env_.validate();
  require(batch_size_ >= 1, "batch size must be >= 1");
}

void RolloutCollector::begin_episode(const PpoModel& model, std::span<const double> params) {
  const std::int64_t id = next_episode_++;
  episode_rng_ = Rng(derive_seed(seed_, {static_cast<std::uint64_t>(id)}));
  const GaussianHead head = model.investment_head(params);
  const InvestmentSample inv =
      sample_investment(head, episode_rng_, env_.invest_min, env_.invest_max);
  state_ = start_episode(env_, inv.clipped);

  pending_.clear();
  Transition t;
  t.sub_policy = SubPolicy::Investment;
  t.action = inv.raw;
  t.log_prob_old = inv.log_prob;
  t.head_old[0] = head.mean;
  t.head_old[1] = head.log_std;
  t.episode_id = id;
  pending_.push_back(t);
  active_ = true;
}

RolloutBatch RolloutCollector::collect(const PpoModel& model, std::span<const double> params) {
  RolloutBatch batch;
  while (batch.env_steps < batch_size_) {
    if (!active_) begin_episode(model, params);

    const Partner partner = sample_partner(env_, episode_rng_);
    Transition t;
    t.sub_policy = SubPolicy::Choice;
    t.observation[0] = state_.focal_investment;
    t.observation[1] = partner.investment;
    const CategoricalHead head = model.choice_head(params, t.observation, tape_);
    const ChoiceSample choice = sample_choice(head, episode_rng_);
    t.accept = choice.accept;
    t.log_prob_old = choice.log_prob;
    t.head_old[0] = head.accept_logit;
    t.head_old[1] = head.refuse_logit;
    t.episode_id = pending_.front().episode_id;

    const StepOutcome out = step(state_, env_, choice.accept, partner);
    ++batch.env_steps;
    t.reward = out.reward;
    t.terminal = out.done;
    pending_.push_back(t);

    if (out.done) {
      batch.transitions.insert(batch.transitions.end(), pending_.begin(), pending_.end());
      batch.episode_returns.push_back(state_.final_reward);
      pending_.clear();
      active_ = false;
    }
  }
  return batch;
}

GaeResult compute_gae(const RolloutBatch& batch, std::span<const double> values,
                      const PpoConfig& cfg) {
  const std::size_t n = batch.transitions.size();
  require(n > 0, "compute_gae: empty batch");
  require(values.size() == n, "compute_gae: one value per transition required");

  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const Transition& t = batch.transitions[k];
    const bool last_of_episode =
        k + 1 == n || batch.transitions[k + 1].episode_id != t.episode_id;
    if (last_of_episode) {
      require(t.terminal, "compute_gae: batch contains an unfinished episode");
      next_adv = 0.0;
    }
    const double next_value = t.terminal ? 0.0 : values[k + 1];
    const double delta = t.reward + cfg.gamma * next_value - values[k];
    const double adv = delta + (t.terminal ? 0.0 : cfg.gamma * cfg.gae_lambda * next_adv);
    out.advantages[k] = adv;
    out.returns[k] = adv + values[k];
    next_adv = adv;
  }

  if (cfg.standardize_advantages) {
    for (SubPolicy sp : {SubPolicy::Investment, SubPolicy::Choice}) {
      double sum = 0.0, sq = 0.0;
      std::size_t m = 0;
      for (std::size_t k = 0; k < n; ++k)
        if (batch.transitions[k].sub_policy == sp) {
          sum += out.advantages[k];
          ++m;
        }
      if (m == 0) continue;
      const double mean = sum / static_cast<double>(m);
      for (std::size_t k = 0; k < n; ++k)
        if (batch.transitions[k].sub_policy == sp) {
          const double d = out.advantages[k] - mean;
          sq += d * d;
        }
      const double sd = std::sqrt(sq / static_cast<double>(m));
      for (std::size_t k = 0; k < n; ++k)
        if (batch.transitions[k].sub_policy == sp)
          out.advantages[k] = (out.advantages[k] - mean) / (sd + 1e-8);
    }
  }
  return out;
}

namespace {

struct SurrogateTerm {
  double value = 0.0;
  double dlogp = 0.0;  // d(value)/d(log pi_new)
  bool clipped = false;
};

SurrogateTerm clipped_surrogate(double log_prob_new, double log_prob_old, double adv,
                                double eps) {
  const double ratio = std::exp(log_prob_new - log_prob_old);
  const double bounded = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  SurrogateTerm s;
  s.clipped = ratio != bounded;
  if (ratio * adv <= bounded * adv) {
    s.value = ratio * adv;
    s.dlogp = ratio * adv;
  } else {
    s.value = bounded * adv;
  }
  return s;
}

}  // namespace

LossTerms ppo_loss(const PpoModel& model, std::span<const double> params,
                   const RolloutBatch& batch, std::span<const std::size_t> indices, double beta,
                   const PpoConfig& cfg, std::span<double> grad) {
  require(!indices.empty(), "ppo_loss: empty minibatch");
  require(batch.advantages.size() == batch.transitions.size() &&
              batch.returns.size() == batch.transitions.size(),
          "ppo_loss: batch has no advantages/returns");
  const bool want_grad = !grad.empty();
  if (want_grad) require(grad.size() == params.size(), "ppo_loss: gradient size mismatch");

  const double scale = 1.0 / static_cast<double>(indices.size());
  const Segment& inv_actor = model.segment(segments::kInvestmentActor);
  const Segment& inv_critic = model.segment(segments::kInvestmentCritic);
  const Segment& ch_actor = model.segment(segments::kChoiceActor);
  const Segment& ch_critic = model.segment(segments::kChoiceCritic);

  LossTerms terms;
  std::size_t clipped = 0;
  Tape actor_tape, critic_tape;
  for (std::size_t k : indices) {
    const Transition& t = batch.transitions[k];
    const double adv = batch.advantages[k];
    const double ret = batch.returns[k];
    double value = 0.0;

    if (t.sub_policy == SubPolicy::Investment) {
      const GaussianHead head = model.investment_head(params);
      const GaussianHead old{t.head_old[0], t.head_old[1]};
      const SurrogateTerm s =
          clipped_surrogate(head.log_prob(t.action), t.log_prob_old, adv, cfg.clip_epsilon);
      const double kl = kl_divergence(old, head);
      terms.surrogate += s.value;
      terms.kl += kl;
      clipped += s.clipped ? 1 : 0;
      value = model.investment_value(params);

      if (want_grad) {
        const double var = std::exp(2.0 * head.log_std);
        const double z2 = (t.action - head.mean) * (t.action - head.mean) / var;
        const double dm = (head.mean - old.mean);
        const double old_var = std::exp(2.0 * old.log_std);
        // d log N / d(mean, log_std) and d KL[old||new] / d(mean, log_std)
        const double dlp_mean = (t.action - head.mean) / var;
        const double dlp_logstd = z2 - 1.0;
        const double dkl_mean = dm / var;
        const double dkl_logstd = 1.0 - (old_var + dm * dm) / var;
        grad[inv_actor.offset] += scale * (s.dlogp * dlp_mean - beta * dkl_mean);
        grad[inv_actor.offset + 1] += scale * (s.dlogp * dlp_logstd - beta * dkl_logstd);
        if (cfg.use_critic)
          grad[inv_critic.offset] += scale * (-2.0 * cfg.value_loss_coeff * (value - ret));
      }
    } else {
      const CategoricalHead head = model.choice_head(params, t.observation, actor_tape);
      const CategoricalHead old{t.head_old[0], t.head_old[1]};
      const SurrogateTerm s =
          clipped_surrogate(head.log_prob(t.accept), t.log_prob_old, adv, cfg.clip_epsilon);
      const double kl = kl_divergence(old, head);
      terms.surrogate += s.value;
      terms.kl += kl;
      clipped += s.clipped ? 1 : 0;
      if (cfg.use_critic) value = model.choice_value(params, t.observation, critic_tape);

      if (want_grad) {
        const double p_acc = head.accept_probability();
        const double p_old = old.accept_probability();
        // d log pi(a) / d logit_j = 1[j == a] - p_j;  d KL / d logit_j = p_j - p_old_j
        const double dlp_acc = (t.accept ? 1.0 : 0.0) - p_acc;
        const double dkl_acc = p_acc - p_old;
        const double g_out[2] = {scale * (s.dlogp * dlp_acc - beta * dkl_acc),
                                 scale * (-s.dlogp * dlp_acc + beta * dkl_acc)};
        model.choice_actor().backward(params.subspan(ch_actor.offset, ch_actor.length),
                                      actor_tape, g_out,
                                      grad.subspan(ch_actor.offset, ch_actor.length));
        if (cfg.use_critic) {
          const double g_v[1] = {scale * (-2.0 * cfg.value_loss_coeff * (value - ret))};
          model.choice_critic().backward(params.subspan(ch_critic.offset, ch_critic.length),
                                         critic_tape, g_v,
                                         grad.subspan(ch_critic.offset, ch_critic.length));
        }
      }
    }
    if (cfg.use_critic) terms.value_loss += (value - ret) * (value - ret);
  }

  terms.surrogate *= scale;
  terms.kl *= scale;
  terms.value_loss *= scale;
  terms.clip_fraction = static_cast<double>(clipped) * scale;
  terms.objective = terms.surrogate - beta * terms.kl -
                    (cfg.use_critic ? cfg.value_loss_coeff * terms.value_loss : 0.0);
  return terms;
}

KlPenaltyState kl_beta_update(KlPenaltyState state, double measured_kl, double kl_target) {
  require(measured_kl >= 0.0, "kl_beta_update: negative KL");
  if (measured_kl > 2.0 * kl_target) {
    state.beta *= 1.5;
  } else if (measured_kl < kl_target / 2.0) {
    state.beta *= 0.5;
  }
  return state;
}

double mean_batch_kl(const PpoModel& model, std::span<const double> params,
                     const RolloutBatch& batch) {
  if (batch.transitions.empty()) return 0.0;
  double total = 0.0;
  Tape tape;
  const GaussianHead inv = model.investment_head(params);
  for (const Transition& t : batch.transitions) {
    if (t.sub_policy == SubPolicy::Investment) {
      total += kl_divergence(GaussianHead{t.head_old[0], t.head_old[1]}, inv);
    } else {
      total += kl_divergence(CategoricalHead{t.head_old[0], t.head_old[1]},
                             model.choice_head(params, t.observation, tape));
    }
  }
  return total / static_cast<double>(batch.transitions.size());
}

namespace {

void refresh_behaviour(const PpoModel& model, std::span<const double> params,
                       RolloutBatch& batch) {
  Tape tape;
  const GaussianHead inv = model.investment_head(params);
  const double inv_value = model.investment_value(params);
  for (Transition& t : batch.transitions) {
    if (t.sub_policy == SubPolicy::Investment) {
      t.log_prob_old = inv.log_prob(t.action);
      t.value_old = inv_value;
      t.head_old[0] = inv.mean;
      t.head_old[1] = inv.log_std;
    } else {
      const CategoricalHead head = model.choice_head(params, t.observation, tape);
      t.log_prob_old = head.log_prob(t.accept);
      t.head_old[0] = head.accept_logit;
      t.head_old[1] = head.refuse_logit;
      t.value_old = model.choice_value(params, t.observation, tape);
    }
  }
}

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Ascent step on the segments of one sub-policy.
void apply_step(const PpoConfig& cfg, OptimizerState& opt, int group,
                const Segment* const (&segs)[2], std::vector<double>& params,
                const std::vector<double>& grad) {
  if (cfg.optimizer == OptimizerKind::Sgd) {
    for (const Segment* s : segs)
      for (std::size_t i = s->offset; i < s->offset + s->length; ++i)
        params[i] += cfg.learning_rate * grad[i];
    return;
  }
  const auto t = static_cast<double>(++opt.steps[group]);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (const Segment* s : segs)
    for (std::size_t i = s->offset; i < s->offset + s->length; ++i) {
      opt.m[i] = kAdamBeta1 * opt.m[i] + (1.0 - kAdamBeta1) * grad[i];
      opt.v[i] = kAdamBeta2 * opt.v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
      params[i] += cfg.learning_rate * (opt.m[i] / c1) / (std::sqrt(opt.v[i] / c2) + kAdamEps);
    }
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

PpoDiagnostics ppo_update(const PpoModel& model, ParamVector& params, RolloutBatch& batch,
                          const PpoConfig& cfg, KlPenaltyState& kl_state, Rng& rng,
                          OptimizerState& optimizer) {
  PpoDiagnostics diag;
  diag.transitions = batch.transitions.size();
  if (!batch.episode_returns.empty())
    diag.mean_return = std::accumulate(batch.episode_returns.begin(),
                                       batch.episode_returns.end(), 0.0) /
                       static_cast<double>(batch.episode_returns.size());
  if (batch.transitions.empty()) {
    diag.beta = kl_state.beta;
    return diag;
  }

  refresh_behaviour(model, params.values, batch);
  std::vector<double> values(batch.transitions.size(), 0.0);
  PpoConfig gae_cfg = cfg;
  if (cfg.use_critic) {
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = batch.transitions[k].value_old;
  } else {
    gae_cfg.gae_lambda = 1.0;  // advantages become plain discounted returns
  }
  GaeResult gae = compute_gae(batch, values, gae_cfg);
  batch.advantages = std::move(gae.advantages);
  batch.returns = std::move(gae.returns);

  std::vector<std::size_t> groups[2];
  for (std::size_t k = 0; k < batch.transitions.size(); ++k)
    groups[batch.transitions[k].sub_policy == SubPolicy::Investment ? 0 : 1].push_back(k);
  const Segment* trained[2][2] = {
      {&model.segment(segments::kInvestmentActor), &model.segment(segments::kInvestmentCritic)},
      {&model.segment(segments::kChoiceActor), &model.segment(segments::kChoiceCritic)}};
  if (cfg.optimizer == OptimizerKind::Adam && optimizer.m.size() != params.size()) {
    optimizer.m.assign(params.size(), 0.0);
    optimizer.v.assign(params.size(), 0.0);
  }

  std::vector<double> grad(params.size(), 0.0);
  double clip_sum = 0.0, vloss_sum = 0.0;
  std::size_t evaluations = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int group = 0; group < 2; ++group) {
      std::vector<std::size_t>& idx = groups[group];
      if (idx.empty()) continue;
      rng.shuffle(idx);
      for (std::size_t start = 0; start < idx.size();
           start += static_cast<std::size_t>(cfg.minibatch_size)) {
        const std::size_t len =
            std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch_size), idx.size() - start);
        std::fill(grad.begin(), grad.end(), 0.0);
        const LossTerms terms = ppo_loss(model, params.values,
                                         batch, std::span(idx).subspan(start, len),
                                         kl_state.beta, cfg, grad);
        if (!std::isfinite(terms.objective) || !all_finite(grad)) {
          std::ostringstream msg;
          msg << "non-finite PPO loss (epoch " << epoch << ", objective " << terms.objective
              << ", kl " << terms.kl << ", value_loss " << terms.value_loss << ", beta "
              << kl_state.beta << ")";
          throw NumericalError(msg.str());
        }
        apply_step(cfg, optimizer, group, trained[group], params.values, grad);
        clip_sum += terms.clip_fraction;
        vloss_sum += terms.value_loss;
        ++evaluations;
      }
    }
  }
  if (!all_finite(params.values)) throw NumericalError("non-finite parameters after PPO update");

  diag.mean_kl = mean_batch_kl(model, params.values, batch);
  kl_state = kl_beta_update(kl_state, diag.mean_kl, cfg.kl_target);
  diag.beta = kl_state.beta;
  diag.clip_fraction = clip_sum / static_cast<double>(evaluations);
  diag.value_loss = vloss_sum / static_cast<double>(evaluations);
  return diag;
}

PpoTrainer::PpoTrainer(Preset preset, EnvConfig env, PpoConfig cfg, std::uint64_t seed,
                       std::optional<ParamVector> initial)
    : model_(preset),
      cfg_(cfg),
      collector_(env, cfg.batch_size, derive_seed(seed, {1})),
      kl_{cfg.beta_init},
      update_rng_(derive_seed(seed, {2})) {
  cfg_.validate();
  if (initial) {
    require(initial->preset == preset, "initial policy preset mismatch");
    params_ = std::move(*initial);
  } else {
    Rng init_rng(derive_seed(seed, {0}));
    params_ = init_params(preset, init_rng);
  }
}

PpoTrainer::Iteration PpoTrainer::iterate() {
  Iteration it;
  it.batch = collector_.collect(model_, params_.values);
  env_steps_ += it.batch.env_steps;
  episodes_ += static_cast<std::int64_t>(it.batch.episode_returns.size());
  const std::vector<double> before = params_.values;
  try {
    it.diagnostics = ppo_update(model_, params_, it.batch, cfg_, kl_, update_rng_, optimizer_);
  } catch (const NumericalError&) {
    params_.values = before;
    throw;
  }
  ++updates_;
  return it;
}

}  // namespace rse
