#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rse/error.hpp"
#include "rse/nets.hpp"

using namespace rse;

TEST(Nets, ParamCounts) {
  EXPECT_EQ(param_count(Preset::PpoMlp), 33u);
  EXPECT_EQ(param_count(Preset::PpoDeep), 133894u);
  EXPECT_EQ(param_count(Preset::Cmaes), 34u);
  EXPECT_EQ(choice_actor_spec(Preset::Cmaes).parameter_count(), 17u);
  EXPECT_EQ(choice_actor_spec(Preset::PpoMlp).parameter_count(), 17u);
}

TEST(Nets, DeepDecomposition) {
  const ParamVector pv = make_params(Preset::PpoDeep);
  EXPECT_EQ(pv.find(segments::kChoiceActor).length, 67074u);
  EXPECT_EQ(pv.find(segments::kChoiceCritic).length, 66817u);
  EXPECT_EQ(pv.find(segments::kInvestmentActor).length, 2u);
  EXPECT_EQ(pv.find(segments::kInvestmentCritic).length, 1u);
}

TEST(Nets, SegmentsTileTheVector) {
  for (Preset preset : {Preset::PpoMlp, Preset::PpoDeep, Preset::Cmaes}) {
    const ParamVector pv = make_params(preset);
    std::size_t next = 0;
    for (const Segment& s : pv.layout) {
      EXPECT_EQ(s.offset, next);
      next += s.length;
    }
    EXPECT_EQ(next, pv.size());
  }
  const ParamVector cma = make_params(Preset::Cmaes);
  EXPECT_EQ(cma.find(segments::kInvestment).offset, 0u);
  EXPECT_EQ(cma.find(segments::kChoiceActor).offset, 1u);
  EXPECT_EQ(cma.find(segments::kDummy).offset, 18u);
  EXPECT_EQ(cma.find(segments::kDummy).length, 16u);
}

TEST(Nets, PresetNames) {
  for (Preset preset : {Preset::PpoMlp, Preset::PpoDeep, Preset::Cmaes})
    EXPECT_EQ(parse_preset(preset_name(preset)), preset);
  EXPECT_EQ(preset_name(Preset::PpoMlp), "PPO-MLP");
  EXPECT_THROW(parse_preset("SAC"), ContractError);
}

TEST(Nets, ZeroParamsGiveZeroOutput) {
  Mlp net(choice_actor_spec(Preset::PpoMlp));
  std::vector<double> params(net.parameter_count(), 0.0);
  Tape tape;
  const double input[2] = {3.0, -7.0};
  for (double v : net.forward(params, input, tape)) EXPECT_EQ(v, 0.0);
}

TEST(Nets, BiasOnlyLayer) {
  Mlp net(NetworkSpec{2, {}, 3, true});
  std::vector<double> params = {0, 0, 0, 0, 0, 0, 1.5, -2.0, 0.25};
  Tape tape;
  const double input[2] = {4.0, 9.0};
  const auto out = net.forward(params, input, tape);
  EXPECT_EQ(out[0], 1.5);
  EXPECT_EQ(out[1], -2.0);
  EXPECT_EQ(out[2], 0.25);
}

TEST(Nets, ForwardRejectsWrongSizes) {
  Mlp net(choice_actor_spec(Preset::PpoMlp));
  std::vector<double> params(net.parameter_count(), 0.0);
  Tape tape;
  const double one[1] = {1.0};
  EXPECT_THROW(net.forward(params, one, tape), ContractError);
  std::vector<double> short_params(5, 0.0);
  const double two[2] = {1.0, 2.0};
  EXPECT_THROW(net.forward(short_params, two, tape), ContractError);
}

namespace {

// Central finite differences of s(params) = sum_k g[k] * forward(params)[k]
// at the listed coordinates; returns the max relative error.
double fd_check(const Mlp& net, std::vector<double> params, std::span<const double> input,
                std::span<const double> g, const std::vector<std::size_t>& coords) {
  Tape tape;
  net.forward(params, input, tape);
  std::vector<double> grad(params.size(), 0.0);
  net.backward(params, tape, g, grad);
  auto objective = [&](const std::vector<double>& w) {
    Tape t;
    const auto out = net.forward(w, input, t);
    double s = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) s += g[k] * out[k];
    return s;
  };
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double h = 1e-6 * std::max(1.0, std::abs(params[i]));
    const double keep = params[i];
    params[i] = keep + h;
    const double up = objective(params);
    params[i] = keep - h;
    const double down = objective(params);
    params[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST(Nets, BackwardMatchesFiniteDifferences) {
  struct Case {
    NetworkSpec spec;
    std::size_t coords;  // 0 checks every coordinate
  };
  const Case cases[] = {{choice_actor_spec(Preset::PpoMlp), 0},
                        {choice_critic_spec(Preset::PpoMlp), 0},
                        {choice_actor_spec(Preset::PpoDeep), 60},
                        {choice_critic_spec(Preset::PpoDeep), 60},
                        {investment_actor_spec(), 0},
                        {investment_critic_spec(), 0}};
  Rng rng(2024);
  for (const Case& c : cases) {
    Mlp net(c.spec);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> params(net.parameter_count());
      const double scale = 1.0 / std::sqrt(static_cast<double>(
                                     c.spec.hidden_sizes.empty() ? 1 : c.spec.hidden_sizes[0]));
      for (double& w : params) w = (2.0 * rng.uniform() - 1.0) * std::max(scale, 0.3);
      std::vector<double> input(c.spec.input_size);
      for (double& x : input) x = rng.uniform() * 15.0;
      std::vector<double> g(c.spec.output_size);
      for (double& x : g) x = rng.normal();
      std::vector<std::size_t> coords;
      if (c.coords == 0) {
        coords.resize(params.size());
        std::iota(coords.begin(), coords.end(), 0);
      } else {
        for (std::size_t k = 0; k < c.coords; ++k) coords.push_back(rng.below(params.size()));
        // always include the output layer
        for (std::size_t k = 1; k <= 3; ++k) coords.push_back(params.size() - k);
      }
      worst = std::max(worst, fd_check(net, params, input, g, coords));
    }
    EXPECT_LT(worst, 1e-5) << "network with " << net.parameter_count() << " params";
  }
}

TEST(Nets, GaussianHeadExamples) {
  GaussianHead unit{0.0, 0.0};
  EXPECT_NEAR(unit.log_prob(0.0), -0.5 * std::log(2.0 * M_PI), 1e-15);
  EXPECT_NEAR(unit.log_prob(0.0), -0.9189, 1e-4);
  Rng rng(3);
  GaussianHead narrow{4.2, -60.0};
  EXPECT_NEAR(sample_investment(narrow, rng).raw, 4.2, 1e-12);
}

TEST(Nets, GaussianSampleMoments) {
  GaussianHead head{10.0, std::log(2.0)};
  Rng rng(17);
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = sample_investment(head, rng).raw;
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 10.0, 0.01);
  EXPECT_NEAR(sd, 2.0, 0.01);
}

TEST(Nets, InvestmentClippingKeepsRawLogProb) {
  GaussianHead head{20.0, 0.0};
  Rng rng(9);
  for (int k = 0; k < 100; ++k) {
    const InvestmentSample s = sample_investment(head, rng);
    EXPECT_GE(s.clipped, 0.0);
    EXPECT_LE(s.clipped, 15.0);
    EXPECT_DOUBLE_EQ(s.log_prob, head.log_prob(s.raw));
  }
}

TEST(Nets, CategoricalExamples) {
  EXPECT_DOUBLE_EQ((CategoricalHead{0.0, 0.0}.accept_probability()), 0.5);
  EXPECT_GT((CategoricalHead{20.0, -20.0}.accept_probability()), 1.0 - 1e-9);
  Rng rng(23);
  const CategoricalHead head{1.0, 0.0};
  const int n = 1000000;
  int acc = 0;
  for (int k = 0; k < n; ++k) acc += sample_choice(head, rng).accept ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(acc) / n, 1.0 / (1.0 + std::exp(-1.0)), 0.002);
}

TEST(Nets, SoftmaxShiftInvariance) {
  Rng rng(31);
  for (int k = 0; k < 1000; ++k) {
    const double l0 = rng.normal() * 5, l1 = rng.normal() * 5, c = rng.normal() * 50;
    const CategoricalHead a{l0, l1}, b{l0 + c, l1 + c};
    EXPECT_NEAR(a.accept_probability(), b.accept_probability(), 1e-12);
    EXPECT_NEAR(a.log_prob(true), b.log_prob(true), 1e-12);
    EXPECT_NEAR(a.log_prob(false), b.log_prob(false), 1e-12);
  }
}

TEST(Nets, KlDivergenceClosedForms) {
  const GaussianHead g1{1.0, 0.3}, g2{-0.5, -0.2};
  EXPECT_NEAR(kl_divergence(g1, g1), 0.0, 1e-15);
  // Numerical integration of p log(p/q).
  double kl = 0.0;
  const double s1 = std::exp(0.3);
  for (double x = 1.0 - 12 * s1; x < 1.0 + 12 * s1; x += 1e-4)
    kl += std::exp(g1.log_prob(x)) * (g1.log_prob(x) - g2.log_prob(x)) * 1e-4;
  EXPECT_NEAR(kl_divergence(g1, g2), kl, 1e-6);

  const CategoricalHead c1{0.4, -1.0}, c2{2.0, 0.5};
  const double p = c1.accept_probability(), q = c2.accept_probability();
  EXPECT_NEAR(kl_divergence(c1, c2), p * std::log(p / q) + (1 - p) * std::log((1 - p) / (1 - q)),
              1e-14);
}

TEST(Nets, KlNearlyIdenticalHeadsIsNonNegative) {
  // Second-order expansion: KL ~ d^2 + dm^2 / (2 var_to) for small d, dm.
  Rng rng(21);
  for (int k = 0; k < 100000; ++k) {
    const GaussianHead to{rng.normal() * 10, rng.normal() * 3};
    const double d = rng.normal() * 1e-9, dm = rng.normal() * 1e-9;
    const GaussianHead from{to.mean + dm, to.log_std + d};
    const double kl = kl_divergence(from, to);
    ASSERT_GE(kl, 0.0);
    const double ds = from.log_std - to.log_std, dms = from.mean - to.mean;  // as stored
    const double approx = ds * ds + dms * dms / (2.0 * std::exp(2.0 * to.log_std));
    EXPECT_NEAR(kl, approx, 1e-8 * approx);
  }
}

TEST(Nets, InitParams) {
  Rng rng(1);
  const ParamVector cma = init_params(Preset::Cmaes, rng);
  EXPECT_EQ(cma.size(), 34u);
  EXPECT_TRUE(std::all_of(cma.values.begin(), cma.values.end(), [](double v) { return v == 0.0; }));

  Rng a(77), b(77);
  const ParamVector mlp = init_params(Preset::PpoMlp, a);
  EXPECT_EQ(mlp.size(), 33u);
  EXPECT_EQ(mlp.values, init_params(Preset::PpoMlp, b).values);
  EXPECT_NEAR(std::exp(mlp.segment(segments::kInvestmentActor)[1]), 2.0, 1e-12);

  // Fan-in bounds for weights; biases zero.
  Mlp net(choice_actor_spec(Preset::PpoMlp));
  const auto w = mlp.segment(segments::kChoiceActor);
  for (int k = 0; k < 6; ++k) EXPECT_LE(std::abs(w[k]), 1.0 / std::sqrt(2.0));
  for (int k = 6; k < 9; ++k) EXPECT_EQ(w[k], 0.0);
  for (int k = 9; k < 15; ++k) EXPECT_LE(std::abs(w[k]), 1.0 / std::sqrt(3.0));
  for (int k = 15; k < 17; ++k) EXPECT_EQ(w[k], 0.0);
}

TEST(Nets, SerializationRoundTrip) {
  for (Preset preset : {Preset::PpoMlp, Preset::PpoDeep, Preset::Cmaes}) {
    Rng rng(5);
    ParamVector pv = init_params(preset, rng);
    for (double& v : pv.values) v += rng.normal();
    const auto bytes = serialize_params(pv);
    EXPECT_EQ(bytes.size(), 20u + 8u * pv.size());
    const ParamVector back = deserialize_params(bytes);
    EXPECT_EQ(back.preset, preset);
    EXPECT_EQ(back.values, pv.values);

    AgentPolicy before(pv), after(back);
    for (double xp : {0.0, 7.5, 15.0})
      EXPECT_EQ(before.accept_probability(8.0, xp), after.accept_probability(8.0, xp));
  }
}

TEST(Nets, SerializationIsLittleEndian) {
  ParamVector pv = make_params(Preset::Cmaes);
  pv.values[0] = 1.0;  // 0x3FF0000000000000
  const auto bytes = serialize_params(pv);
  EXPECT_EQ(bytes[8], 3);  // preset id, low byte first
  EXPECT_EQ(bytes[12], 34);
  EXPECT_EQ(bytes[20 + 7], 0x3F);
  EXPECT_EQ(bytes[20 + 6], 0xF0);
  EXPECT_EQ(bytes[20 + 0], 0x00);
}

TEST(Nets, DeserializeRejectsCorruption) {
  const auto good = serialize_params(make_params(Preset::Cmaes));
  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(deserialize_params(truncated), ContractError);
  auto bad_magic = good;
  bad_magic[0] ^= 0xFF;
  EXPECT_THROW(deserialize_params(bad_magic), ContractError);
  auto bad_preset = good;
  bad_preset[8] = 9;
  EXPECT_THROW(deserialize_params(bad_preset), ContractError);
}

TEST(Nets, CmaesPolicyIsDeterministicInvestment) {
  ParamVector pv = make_params(Preset::Cmaes);
  pv.values[0] = 22.0;
  AgentPolicy policy(pv);
  Rng rng(1);
  EXPECT_TRUE(policy.deterministic_investment());
  EXPECT_EQ(policy.sample_investment(rng), 15.0);
  EXPECT_DOUBLE_EQ(policy.accept_probability(3.0, 4.0), 0.5);
}
