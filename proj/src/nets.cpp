#include "rse/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "rse/error.hpp"

namespace rse {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2*pi)
constexpr std::uint8_t kMagic[4] = {'R', 'S', 'E', 'P'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr int kChoiceInputs = 2;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
  return v;
}

}  // namespace

std::string_view preset_name(Preset preset) {
  switch (preset) {
    case Preset::PpoMlp: return "PPO-MLP";
    case Preset::PpoDeep: return "PPO-DEEP";
    case Preset::Cmaes: return "CMAES";
  }
  throw ContractError("unknown preset");
}

Preset parse_preset(std::string_view name) {
  if (name == "PPO-MLP") return Preset::PpoMlp;
  if (name == "PPO-DEEP") return Preset::PpoDeep;
  if (name == "CMAES" || name == "CMA-ES") return Preset::Cmaes;
  throw ContractError("unknown algorithm '" + std::string(name) +
                      "' (expected CMAES, PPO-MLP or PPO-DEEP)");
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  int fan_in = input_size;
  auto add = [&](int fan_out) {
    n += static_cast<std::size_t>(fan_in + (bias ? 1 : 0)) * static_cast<std::size_t>(fan_out);
    fan_in = fan_out;
  };
  for (int h : hidden_sizes) add(h);
  add(output_size);
  return n;
}

const Segment& ParamVector::find(std::string_view name) const {
  for (const Segment& s : layout)
    if (s.name == name) return s;
  throw ContractError("parameter vector has no segment '" + std::string(name) + "'");
}

std::span<double> ParamVector::segment(std::string_view name) {
  const Segment& s = find(name);
  return std::span<double>(values).subspan(s.offset, s.length);
}

std::span<const double> ParamVector::segment(std::string_view name) const {
  const Segment& s = find(name);
  return std::span<const double>(values).subspan(s.offset, s.length);
}

Mlp::Mlp(NetworkSpec spec) : spec_(std::move(spec)) {
  require(spec_.input_size > 0 && spec_.output_size > 0, "network sizes must be positive");
  int fan_in = spec_.input_size;
  std::size_t offset = 0;
  auto add = [&](int fan_out) {
    require(fan_out > 0, "hidden layer sizes must be positive");
    Layer layer;
    layer.in = fan_in;
    layer.out = fan_out;
    layer.weight_offset = offset;
    offset += static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out);
    if (spec_.bias) {
      layer.bias_offset = offset;
      offset += static_cast<std::size_t>(fan_out);
    }
    layers_.push_back(layer);
    fan_in = fan_out;
  };
  for (int h : spec_.hidden_sizes) add(h);
  add(spec_.output_size);
  param_count_ = offset;
}

std::span<const double> Mlp::forward(std::span<const double> params,
                                     std::span<const double> input, Tape& tape) const {
  if (input.size() != static_cast<std::size_t>(spec_.input_size))
    throw ContractError("forward: expected " + std::to_string(spec_.input_size) +
                        " inputs, got " + std::to_string(input.size()));
  if (params.size() != param_count_)
    throw ContractError("forward: expected " + std::to_string(param_count_) +
                        " parameters, got " + std::to_string(params.size()));

  tape.activations.resize(layers_.size() + 1);
  tape.activations[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const std::vector<double>& a = tape.activations[l];
    std::vector<double>& z = tape.activations[l + 1];
    z.resize(static_cast<std::size_t>(layer.out));
    const double* w = params.data() + layer.weight_offset;
    const bool hidden = l + 1 < layers_.size();
    for (int o = 0; o < layer.out; ++o) {
      double acc = spec_.bias ? params[layer.bias_offset + o] : 0.0;
      const double* row = w + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) acc += row[i] * a[i];
      z[o] = hidden ? std::tanh(acc) : acc;
    }
  }
  return tape.activations.back();
}

void Mlp::backward(std::span<const double> params, Tape& tape,
                   std::span<const double> grad_output, std::span<double> grad_params) const {
  require(grad_output.size() == static_cast<std::size_t>(spec_.output_size),
          "backward: output gradient has wrong size");
  require(grad_params.size() == param_count_, "backward: parameter gradient has wrong size");
  require(tape.activations.size() == layers_.size() + 1, "backward: tape not recorded");

  std::vector<double>& delta = tape.delta;
  std::vector<double>& delta_prev = tape.delta_prev;
  delta.assign(grad_output.begin(), grad_output.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const std::vector<double>& a = tape.activations[l];
    const double* w = params.data() + layer.weight_offset;
    double* gw = grad_params.data() + layer.weight_offset;
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      double* grow = gw + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) grow[i] += d * a[i];
      if (spec_.bias) grad_params[layer.bias_offset + o] += d;
    }
    if (l == 0) break;
    delta_prev.assign(static_cast<std::size_t>(layer.in), 0.0);
    for (int o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) delta_prev[i] += row[i] * d;
    }
    for (int i = 0; i < layer.in; ++i) delta_prev[i] *= 1.0 - a[i] * a[i];  // tanh'
    delta.swap(delta_prev);
  }
}

double GaussianHead::std() const { return std::exp(log_std); }

double GaussianHead::log_prob(double action) const {
  const double z = (action - mean) / std();
  return -0.5 * z * z - log_std - kHalfLog2Pi;
}

InvestmentSample sample_investment(const GaussianHead& head, Rng& rng, double lo, double hi) {
  InvestmentSample s;
  s.raw = head.mean + head.std() * rng.normal();
  s.log_prob = head.log_prob(s.raw);
  s.clipped = std::clamp(s.raw, lo, hi);
  return s;
}

double CategoricalHead::accept_probability() const {
  // softmax over two logits is the logistic of their difference
  const double d = accept_logit - refuse_logit;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

double CategoricalHead::log_prob(bool accept) const {
  const double hi = std::max(accept_logit, refuse_logit);
  const double lse = hi + std::log(std::exp(accept_logit - hi) + std::exp(refuse_logit - hi));
  return (accept ? accept_logit : refuse_logit) - lse;
}

ChoiceSample sample_choice(const CategoricalHead& head, Rng& rng) {
  ChoiceSample s;
  s.accept = rng.uniform() < head.accept_probability();
  s.log_prob = head.log_prob(s.accept);
  return s;
}

double kl_divergence(const GaussianHead& from, const GaussianHead& to) {
  // r - 1 - ln r with r = var_from / var_to, written to avoid cancellation
  // when the two heads nearly coincide.
  const double two_d = 2.0 * (from.log_std - to.log_std);
  const double dm = from.mean - to.mean;
  const double x = two_d;
  const double excess = std::abs(x) < 1e-2
                            ? 0.5 * x * x * (1.0 + x / 3.0 * (1.0 + x / 4.0 * (1.0 + x / 5.0)))
                            : std::expm1(x) - x;
  const double kl = 0.5 * excess + dm * dm / (2.0 * std::exp(2.0 * to.log_std));
  return std::max(0.0, kl);
}

double kl_divergence(const CategoricalHead& from, const CategoricalHead& to) {
  double kl = 0.0;
  for (bool accept : {true, false}) {
    const double lp = from.log_prob(accept);
    kl += std::exp(lp) * (lp - to.log_prob(accept));
  }
  return std::max(0.0, kl);
}

NetworkSpec investment_actor_spec() { return NetworkSpec{1, {}, 2, false}; }
NetworkSpec investment_critic_spec() { return NetworkSpec{1, {}, 1, false}; }

NetworkSpec choice_actor_spec(Preset preset) {
  if (preset == Preset::PpoDeep) return NetworkSpec{kChoiceInputs, {256, 256}, 2, true};
  return NetworkSpec{kChoiceInputs, {3}, 2, true};
}

NetworkSpec choice_critic_spec(Preset preset) {
  NetworkSpec spec = choice_actor_spec(preset);
  spec.output_size = 1;
  return spec;
}

ParamVector make_params(Preset preset) {
  ParamVector pv;
  pv.preset = preset;
  std::size_t offset = 0;
  auto add = [&](std::string_view name, std::size_t n) {
    pv.layout.push_back(Segment{std::string(name), offset, n});
    offset += n;
  };
  if (preset == Preset::Cmaes) {
    add(segments::kInvestment, 1);
    add(segments::kChoiceActor, choice_actor_spec(preset).parameter_count());
    add(segments::kDummy, kCmaesDimension - offset);
  } else {
    add(segments::kInvestmentActor, investment_actor_spec().parameter_count());
    add(segments::kInvestmentCritic, investment_critic_spec().parameter_count());
    add(segments::kChoiceActor, choice_actor_spec(preset).parameter_count());
    add(segments::kChoiceCritic, choice_critic_spec(preset).parameter_count());
  }
  pv.values.assign(offset, 0.0);
  return pv;
}

std::size_t param_count(Preset preset) { return make_params(preset).size(); }

namespace {

void init_network(const NetworkSpec& spec, std::span<double> out, Rng& rng) {
  std::size_t pos = 0;
  int fan_in = spec.input_size;
  auto layer = [&](int fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int k = 0; k < fan_in * fan_out; ++k) out[pos++] = (2.0 * rng.uniform() - 1.0) * bound;
    if (spec.bias)
      for (int k = 0; k < fan_out; ++k) out[pos++] = 0.0;
    fan_in = fan_out;
  };
  for (int h : spec.hidden_sizes) layer(h);
  layer(spec.output_size);
}

}  // namespace

ParamVector init_params(Preset preset, Rng& rng) {
  ParamVector pv = make_params(preset);
  if (preset == Preset::Cmaes) return pv;
  init_network(investment_actor_spec(), pv.segment(segments::kInvestmentActor), rng);
  // Output 1 of the investment actor is log_std; input is the constant 1.
  pv.segment(segments::kInvestmentActor)[1] = std::log(2.0);
  init_network(investment_critic_spec(), pv.segment(segments::kInvestmentCritic), rng);
  init_network(choice_actor_spec(preset), pv.segment(segments::kChoiceActor), rng);
  init_network(choice_critic_spec(preset), pv.segment(segments::kChoiceCritic), rng);
  return pv;
}

std::vector<std::uint8_t> serialize_params(const ParamVector& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(params.preset));
  put_u64(out, params.values.size());
  for (double v : params.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ParamVector deserialize_params(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t header = 4 + 4 + 4 + 8;
  if (bytes.size() < header || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw ContractError("not a parameter file (bad magic)");
  if (get_le(bytes, 4, 4) != kFormatVersion)
    throw ContractError("unsupported parameter file version");
  const auto preset_id = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (preset_id < 1 || preset_id > 3) throw ContractError("unknown preset id in parameter file");
  const std::uint64_t n = get_le(bytes, 12, 8);
  ParamVector pv = make_params(static_cast<Preset>(preset_id));
  if (n != pv.size() || bytes.size() != header + 8 * n)
    throw ContractError("parameter file length does not match its preset");
  for (std::size_t i = 0; i < n; ++i)
    pv.values[i] = std::bit_cast<double>(get_le(bytes, header + 8 * i, 8));
  return pv;
}

void save_params(const std::filesystem::path& path, const ParamVector& params) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ParamVector load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

AgentPolicy::AgentPolicy(ParamVector params)
    : params_(std::move(params)), choice_(choice_actor_spec(params_.preset)) {
  require(params_.size() == param_count(params_.preset), "policy vector has wrong length");
}

GaussianHead AgentPolicy::investment_head() const {
  if (params_.preset == Preset::Cmaes)
    return GaussianHead{params_.segment(segments::kInvestment)[0], -INFINITY};
  const auto w = params_.segment(segments::kInvestmentActor);
  return GaussianHead{w[0], w[1]};
}

double AgentPolicy::sample_investment(Rng& rng) {
  if (params_.preset == Preset::Cmaes)
    return std::clamp(params_.segment(segments::kInvestment)[0], 0.0, 15.0);
  return rse::sample_investment(investment_head(), rng).clipped;
}

CategoricalHead AgentPolicy::choice_head(double x_focal, double partner_investment) {
  const double input[2] = {x_focal, partner_investment};
  const auto out = choice_.forward(params_.segment(segments::kChoiceActor), input, tape_);
  return CategoricalHead{out[0], out[1]};
}

double AgentPolicy::accept_probability(double x_focal, double partner_investment) {
  return choice_head(x_focal, partner_investment).accept_probability();
}

bool AgentPolicy::sample_accept(double x_focal, double partner_investment, Rng& rng) {
  return rng.uniform() < accept_probability(x_focal, partner_investment);
}

}  // namespace rse
