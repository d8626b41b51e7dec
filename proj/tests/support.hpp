#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "rse/cmaes.hpp"
#include "rse/nets.hpp"

namespace rse::test {

// Choice-net weights (2 -> 3 -> 2, tanh) whose accept logit is a steep step
// at `threshold`: accept iff partner investment >= threshold on the 0.5 grid.
inline void write_threshold_choice(std::span<double> w, double threshold) {
  std::fill(w.begin(), w.end(), 0.0);
  const double k = 20.0;
  w[1] = k;                          // hidden 0 <- partner investment
  w[6] = -k * (threshold - 0.25);    // hidden 0 bias
  w[9] = 40.0;                       // accept logit <- hidden 0
}

inline Genome threshold_genome(double investment, double threshold) {
  ParamVector pv = make_params(Preset::Cmaes);
  pv.segment(segments::kInvestment)[0] = investment;
  write_threshold_choice(pv.segment(segments::kChoiceActor), threshold);
  return params_to_genome(pv);
}

inline ParamVector threshold_params(Preset preset, double investment, double threshold) {
  ParamVector pv = make_params(preset);
  if (preset == Preset::Cmaes) {
    pv.segment(segments::kInvestment)[0] = investment;
  } else {
    // Near-deterministic Gaussian nudged up so the clipped draw never falls
    // below the intended value.
    pv.segment(segments::kInvestmentActor)[0] = investment + 1e-9;
    pv.segment(segments::kInvestmentActor)[1] = -40.0;
  }
  write_threshold_choice(pv.segment(segments::kChoiceActor), threshold);
  return pv;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rse::test
