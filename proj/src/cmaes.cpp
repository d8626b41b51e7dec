#include "rse/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rse/error.hpp"

namespace rse {

int CmaesConfig::lambda() const {
  if (population_size > 0) return population_size;
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dimension))));
}

void CmaesConfig::validate() const {
  require(dimension >= 1, "cmaes.dimension must be >= 1");
  require(lambda() >= 4, "cmaes.population_size must be >= 4");
  require(sigma_init > 0.0, "cmaes.sigma_init must be > 0");
  require(mean_init.empty() || mean_init.size() == dimension,
          "cmaes.mean_init must be empty or have `dimension` entries");
  require(episodes_per_eval >= 1, "cmaes.episodes_per_eval must be >= 1");
  require(reeval_episodes >= 1, "cmaes.reeval_episodes must be >= 1");
}

namespace {

void refresh_eigensystem(CmaesState& s) {
  s.C = 0.5 * (s.C + s.C.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s.C);
  const Eigen::VectorXd ev = solver.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (solver.info() != Eigen::Success || !(lo > 0.0) || !std::isfinite(hi)) {
    std::ostringstream msg;
    msg << "covariance factorization failed at generation " << s.generation
        << " (eigenvalues in [" << lo << ", " << hi << "], condition " << hi / lo << ")";
    throw NumericalError(msg.str());
  }
  s.B = solver.eigenvectors();
  s.D = ev.cwiseSqrt();
}

}  // namespace

CmaesState make_cmaes_state(const CmaesConfig& cfg) {
  cfg.validate();
  CmaesState s;
  const auto n = static_cast<Eigen::Index>(cfg.dimension);
  const double N = static_cast<double>(cfg.dimension);
  s.mean = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < cfg.mean_init.size(); ++i)
    s.mean[static_cast<Eigen::Index>(i)] = cfg.mean_init[i];
  s.sigma = cfg.sigma_init;
  s.C = Eigen::MatrixXd::Identity(n, n);
  s.B = Eigen::MatrixXd::Identity(n, n);
  s.D = Eigen::VectorXd::Ones(n);
  s.p_sigma = Eigen::VectorXd::Zero(n);
  s.p_c = Eigen::VectorXd::Zero(n);
  s.lambda = cfg.lambda();
  s.mu = s.lambda / 2;

  s.weights.resize(static_cast<std::size_t>(s.mu));
  for (int i = 0; i < s.mu; ++i) s.weights[i] = std::log(s.mu + 0.5) - std::log(i + 1.0);
  const double wsum = std::accumulate(s.weights.begin(), s.weights.end(), 0.0);
  double w2 = 0.0;
  for (double& w : s.weights) {
    w /= wsum;
    w2 += w * w;
  }
  s.mu_eff = 1.0 / w2;

  s.c_sigma = (s.mu_eff + 2.0) / (N + s.mu_eff + 5.0);
  s.d_sigma =
      1.0 + 2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (N + 1.0)) - 1.0) + s.c_sigma;
  s.c_c = (4.0 + s.mu_eff / N) / (N + 4.0 + 2.0 * s.mu_eff / N);
  s.c_1 = 2.0 / ((N + 1.3) * (N + 1.3) + s.mu_eff);
  s.c_mu = std::min(1.0 - s.c_1,
                    2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) / ((N + 2.0) * (N + 2.0) + s.mu_eff));
  s.chi_n = std::sqrt(N) * (1.0 - 1.0 / (4.0 * N) + 1.0 / (21.0 * N * N));
  return s;
}

std::vector<Genome> ask(const CmaesState& state, Rng& rng) {
  const Eigen::Index n = state.mean.size();
  std::vector<Genome> out;
  out.reserve(static_cast<std::size_t>(state.lambda));
  Eigen::VectorXd z(n);
  for (int k = 0; k < state.lambda; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
    out.push_back(state.mean + state.sigma * (state.B * state.D.cwiseProduct(z)));
  }
  return out;
}

void tell(CmaesState& s, std::span<const Genome> genomes, std::span<const double> fitnesses) {
  require(genomes.size() == static_cast<std::size_t>(s.lambda) &&
              fitnesses.size() == genomes.size(),
          "tell: expected lambda genomes and fitnesses");
  for (double f : fitnesses)
    if (!std::isfinite(f)) throw NumericalError("tell: non-finite fitness");

  std::vector<std::size_t> order(genomes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitnesses[a] > fitnesses[b]; });

  const double N = static_cast<double>(s.dimension());
  const Eigen::VectorXd old_mean = s.mean;
  Eigen::VectorXd new_mean = Eigen::VectorXd::Zero(old_mean.size());
  for (int i = 0; i < s.mu; ++i) new_mean += s.weights[i] * genomes[order[i]];
  const Eigen::VectorXd y_w = (new_mean - old_mean) / s.sigma;
  s.mean = new_mean;

  // C^{-1/2} y_w = B D^{-1} B^T y_w
  const Eigen::VectorXd c_inv_sqrt_y = s.B * (s.B.transpose() * y_w).cwiseQuotient(s.D);
  s.p_sigma = (1.0 - s.c_sigma) * s.p_sigma +
              std::sqrt(s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff) * c_inv_sqrt_y;
  const double ps_norm = s.p_sigma.norm();
  const double decay = 1.0 - std::pow(1.0 - s.c_sigma, 2.0 * static_cast<double>(s.generation + 1));
  const bool h_sigma = ps_norm / std::sqrt(decay) / s.chi_n < 1.4 + 2.0 / (N + 1.0);
  s.p_c = (1.0 - s.c_c) * s.p_c +
          (h_sigma ? std::sqrt(s.c_c * (2.0 - s.c_c) * s.mu_eff) : 0.0) * y_w;

  Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(s.C.rows(), s.C.cols());
  for (int i = 0; i < s.mu; ++i) {
    const Eigen::VectorXd y = (genomes[order[i]] - old_mean) / s.sigma;
    rank_mu.noalias() += s.weights[i] * (y * y.transpose());
  }
  const double h_corr = h_sigma ? 0.0 : s.c_c * (2.0 - s.c_c);
  s.C = (1.0 - s.c_1 - s.c_mu) * s.C + s.c_1 * (s.p_c * s.p_c.transpose() + h_corr * s.C) +
        s.c_mu * rank_mu;

  s.sigma *= std::exp((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0));
  if (!std::isfinite(s.sigma) || !(s.sigma > 0.0))
    throw NumericalError("tell: step size became non-finite or zero");
  ++s.generation;
  refresh_eigensystem(s);
}

ParamVector genome_to_params(const Genome& genome) {
  ParamVector pv = make_params(Preset::Cmaes);
  require(genome.size() == static_cast<Eigen::Index>(pv.size()),
          "genome must have " + std::to_string(pv.size()) + " coordinates");
  std::copy(genome.data(), genome.data() + genome.size(), pv.values.begin());
  return pv;
}

Genome params_to_genome(const ParamVector& params) {
  require(params.preset == Preset::Cmaes, "genome requires a CMAES parameter vector");
  return Eigen::Map<const Eigen::VectorXd>(params.values.data(),
                                           static_cast<Eigen::Index>(params.size()));
}

EpisodeResult play_genome(const Genome& genome, const EnvConfig& env, Rng& rng) {
  AgentPolicy policy(genome_to_params(genome));
  const double investment = policy.sample_investment(rng);
  return play_episode(
      env, investment,
      [&](double x, double partner, Rng& r) { return policy.sample_accept(x, partner, r); }, rng);
}

double evaluate_genome(const Genome& genome, const EnvConfig& env, Rng& rng) {
  return play_genome(genome, env, rng).reward;
}

GenerationBest generation_best_reeval(std::span<const Genome> genomes,
                                      std::span<const double> fitnesses, const EnvConfig& env,
                                      Rng& rng, int episodes) {
  require(!genomes.empty() && genomes.size() == fitnesses.size(),
          "generation_best_reeval: empty or mismatched generation");
  require(episodes >= 1, "generation_best_reeval: episodes must be >= 1");
  GenerationBest best;
  for (std::size_t i = 1; i < fitnesses.size(); ++i)
    if (fitnesses[i] > fitnesses[best.index]) best.index = i;

  AgentPolicy policy(genome_to_params(genomes[best.index]));
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const double investment = policy.sample_investment(rng);
    const EpisodeResult r = play_episode(
        env, investment,
        [&](double x, double partner, Rng& g) { return policy.sample_accept(x, partner, g); },
        rng);
    total += r.reward;
    best.env_steps += r.steps;
  }
  best.mean_return = total / episodes;
  return best;
}

std::size_t best_by_reevaluation(std::span<const Genome> genomes, const EnvConfig& env, Rng& rng,
                                 int episodes) {
  require(!genomes.empty(), "best_by_reevaluation: no candidates");
  require(episodes >= 1, "best_by_reevaluation: episodes must be >= 1");
  std::size_t best = 0;
  double best_mean = 0.0;
  for (std::size_t i = 0; i < genomes.size(); ++i) {
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) total += evaluate_genome(genomes[i], env, rng);
    const double mean = total / episodes;
    if (i == 0 || mean > best_mean) {
      best = i;
      best_mean = mean;
    }
  }
  return best;
}

CmaesTrainer::CmaesTrainer(EnvConfig env, CmaesConfig cfg, std::uint64_t seed)
    : env_(env), cfg_(std::move(cfg)), state_(make_cmaes_state(cfg_)), seed_(seed) {
  env_.validate();
  require(cfg_.dimension == kCmaesDimension,
          "policy search needs a " + std::to_string(kCmaesDimension) + "-dimensional genome");
  best_ = state_.mean;
}

CmaesTrainer::Generation CmaesTrainer::iterate() {
  const auto g = static_cast<std::uint64_t>(state_.generation);
  Rng sample_rng(derive_seed(seed_, {g, 0}));
  Generation out;
  out.genomes = ask(state_, sample_rng);
  const std::vector<Genome>& genomes = out.genomes;
  out.fitnesses.resize(genomes.size());
  for (std::size_t i = 0; i < genomes.size(); ++i) {
    double total = 0.0;
    for (int e = 0; e < cfg_.episodes_per_eval; ++e) {
      Rng ep_rng(derive_seed(seed_, {g, 1, i, static_cast<std::uint64_t>(e)}));
      const EpisodeResult r = play_genome(genomes[i], env_, ep_rng);
      total += r.reward;
      out.train_env_steps += r.steps;
      ++episodes_;
    }
    out.fitnesses[i] = total / cfg_.episodes_per_eval;
  }
  tell(state_, genomes, out.fitnesses);

  Rng reeval_rng(derive_seed(seed_, {g, 2}));
  out.best = generation_best_reeval(genomes, out.fitnesses, env_, reeval_rng,
                                    cfg_.reeval_episodes);
  out.best_genome = genomes[out.best.index];
  best_ = out.best_genome;
  env_steps_ += out.train_env_steps + out.best.env_steps;
  return out;
}

}  // namespace rse
