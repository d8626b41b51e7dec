#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rse/random.hpp"

namespace rse {

/// Policy parameterizations. The PPO presets hold actor and critic networks for
/// both decision modules; the CMAES preset is a raw investment scalar, the
/// choice network, and inert padding.
enum class Preset : std::uint32_t { PpoMlp = 1, PpoDeep = 2, Cmaes = 3 };

std::string_view preset_name(Preset preset);
Preset parse_preset(std::string_view name);

/// Dense network: tanh hidden layers, linear output.
struct NetworkSpec {
  int input_size = 1;
  std::vector<int> hidden_sizes;
  int output_size = 1;
  bool bias = true;

  std::size_t parameter_count() const;
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Flat parameter storage with a named segment map.
struct ParamVector {
  Preset preset = Preset::Cmaes;
  std::vector<double> values;
  std::vector<Segment> layout;

  const Segment& find(std::string_view name) const;
  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;
  std::size_t size() const { return values.size(); }
};

/// Forward intermediates retained for the backward pass. Reusable across
/// calls; owned by the caller so shared networks stay immutable.
struct Tape {
  std::vector<std::vector<double>> activations;  // [0] is the input
  std::vector<double> delta;
  std::vector<double> delta_prev;
};

class Mlp {
 public:
  explicit Mlp(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  std::size_t parameter_count() const { return param_count_; }

  std::span<const double> forward(std::span<const double> params,
                                  std::span<const double> input, Tape& tape) const;

  /// Accumulates d(sum_k grad_output[k] * out[k]) / d(params) into
  /// grad_params, using the tape of the most recent forward().
  void backward(std::span<const double> params, Tape& tape,
                std::span<const double> grad_output,
                std::span<double> grad_params) const;

 private:
  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;  // meaningful only with bias
  };

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  std::size_t param_count_ = 0;
};

struct GaussianHead {
  double mean = 0.0;
  double log_std = 0.0;

  double std() const;
  double log_prob(double action) const;
};

struct InvestmentSample {
  double raw = 0.0;
  double clipped = 0.0;
  double log_prob = 0.0;
};

/// Draws from N(mean, std^2); log_prob is the density of the unclipped draw.
InvestmentSample sample_investment(const GaussianHead& head, Rng& rng, double lo = 0.0,
                                   double hi = 15.0);

/// Two-way softmax; category 0 accepts, category 1 refuses.
struct CategoricalHead {
  double accept_logit = 0.0;
  double refuse_logit = 0.0;

  double accept_probability() const;
  double log_prob(bool accept) const;
};

struct ChoiceSample {
  bool accept = false;
  double log_prob = 0.0;
};

ChoiceSample sample_choice(const CategoricalHead& head, Rng& rng);

double kl_divergence(const GaussianHead& from, const GaussianHead& to);
double kl_divergence(const CategoricalHead& from, const CategoricalHead& to);

// Preset architectures.
namespace segments {
inline constexpr std::string_view kInvestmentActor = "investment_actor";
inline constexpr std::string_view kInvestmentCritic = "investment_critic";
inline constexpr std::string_view kChoiceActor = "choice_actor";
inline constexpr std::string_view kChoiceCritic = "choice_critic";
inline constexpr std::string_view kInvestment = "investment";
inline constexpr std::string_view kDummy = "dummy";
}  // namespace segments

inline constexpr std::size_t kCmaesDimension = 34;

NetworkSpec investment_actor_spec();
NetworkSpec investment_critic_spec();
NetworkSpec choice_actor_spec(Preset preset);
NetworkSpec choice_critic_spec(Preset preset);

std::size_t param_count(Preset preset);

/// All-zero vector with the preset's segment layout.
ParamVector make_params(Preset preset);

/// PPO presets: uniform fan-in weights, zero biases, investment std 2.
/// CMAES: zeros.
ParamVector init_params(Preset preset, Rng& rng);

std::vector<std::uint8_t> serialize_params(const ParamVector& params);
ParamVector deserialize_params(std::span<const std::uint8_t> bytes);
void save_params(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_params(const std::filesystem::path& path);

/// Frozen behaviour of the focal agent for any preset: investment draw plus
/// acceptance decision. Holds its own tape, so give each thread its own copy.
class AgentPolicy {
 public:
  explicit AgentPolicy(ParamVector params);

  Preset preset() const { return params_.preset; }
  const ParamVector& params() const { return params_; }
  bool deterministic_investment() const { return params_.preset == Preset::Cmaes; }

  /// Investment clipped to [0, 15].
  double sample_investment(Rng& rng);
  GaussianHead investment_head() const;
  CategoricalHead choice_head(double x_focal, double partner_investment);
  double accept_probability(double x_focal, double partner_investment);
  bool sample_accept(double x_focal, double partner_investment, Rng& rng);

 private:
  ParamVector params_;
  Mlp choice_;
  Tape tape_;
};

}  // namespace rse
