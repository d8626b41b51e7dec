#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rse/harness.hpp"
#include "rse/nets.hpp"
#include "rse/random.hpp"

namespace rse {

struct Summary {
  double median = 0.0;
  double mad = 0.0;  // unscaled median absolute deviation
  double mean = 0.0;
  double std = 0.0;  // n - 1 denominator; 0 for a single sample
  std::size_t n = 0;
};

Summary median_mad(std::span<const double> samples);

struct SummaryRow {
  double p = 0.0;
  std::string algorithm;
  Summary stats;
};

struct UTestResult {
  double u_statistic = 0.0;  // min(U_a, U_b)
  double u_a = 0.0;          // U counted for sample a
  double z = 0.0;
  double p_value = 1.0;  // two-tailed
  std::size_t n1 = 0;
  std::size_t n2 = 0;
  std::string comparison;
};

/// Midranks for ties; normal approximation with tie and continuity
/// corrections. A sample set without variance yields p = 1.
UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                           std::string comparison = {});

struct CurveBand {
  std::int64_t episode_index = 0;
  double median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;  // runs reaching this grid point
};

/// Per-grid-point median across runs with a 95% percentile-bootstrap interval
/// for the median. Truncated (failed) runs contribute to the points they
/// reached; grids must otherwise agree.
std::vector<CurveBand> aggregate_curves(std::span<const RunRecord> records, std::uint64_t seed = 0,
                                        int resamples = 2000);

/// Episode-start investments of a frozen policy.
std::vector<double> probe_investment(const ParamVector& policy, Preset algorithm, Rng& rng,
                                     int draws = 1000);

struct AcceptanceProfile {
  std::vector<double> partner_investment;  // the 31-point grid
  std::vector<double> accept_probability;
  double mean_investment = 0.0;
  int presentations = 0;
};

/// Presents every cooperative partner `presentations` times; the focal
/// investment is redrawn for each presentation.
AcceptanceProfile probe_acceptance(const ParamVector& policy, Preset algorithm, Rng& rng,
                                   int presentations = 100);

/// Mean re-evaluation return of a run: the score its cohort statistics use.
double run_score(const RunRecord& record);

/// Rows ordered by ascending p, then algorithm name.
std::vector<SummaryRow> summarize(std::span<const RunRecord> records);

/// Every pair of algorithms within each p, same ordering as summarize().
std::vector<std::pair<double, UTestResult>> compare_algorithms(std::span<const RunRecord> records);

struct EmitOptions {
  std::uint64_t seed = 0;  // bootstrap and probe streams
  int bootstrap_resamples = 2000;
  bool tables = true;  // summary.csv, utests.csv, run_scores.csv
  bool curves = true;  // curves_<algo>_p<p>.csv
  bool probes = true;  // probe_investment.csv, probe_acceptance.csv
};

/// Writes the selected CSV groups plus matplotlib scripts (plot_*.py) that
/// read only those files. Returns the paths written.
std::vector<std::filesystem::path> emit_tables_and_plotdata(std::span<const RunRecord> records,
                                                            const std::filesystem::path& out_dir,
                                                            const EmitOptions& options = {});

}  // namespace rse
