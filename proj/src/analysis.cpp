#include "rse/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "rse/csv.hpp"
#include "rse/env.hpp"
#include "rse/error.hpp"

namespace rse {

namespace fs = std::filesystem;

namespace {

double sorted_median(const std::vector<double>& v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Linear interpolation between order statistics.
double sorted_quantile(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

using CellKey = std::pair<double, std::string>;

std::map<CellKey, std::vector<const RunRecord*>> cells(std::span<const RunRecord> records) {
  std::map<CellKey, std::vector<const RunRecord*>> out;
  for (const RunRecord& r : records)
    out[{r.config.env.p, std::string(preset_name(r.config.algorithm))}].push_back(&r);
  return out;
}

std::string p_label(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", p);
  return buf;
}

const char* kPlotCurves = R"PY(import csv
import glob
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
series = {}
for path in sorted(glob.glob(os.path.join(here, "curves_*_p*.csv"))):
    algo, p = os.path.basename(path)[len("curves_"):-len(".csv")].rsplit("_p", 1)
    with open(path) as f:
        rows = list(csv.DictReader(f))
    series.setdefault(float(p), []).append((algo, rows))

for p, entries in sorted(series.items()):
    fig, ax = plt.subplots(figsize=(6, 4))
    for algo, rows in sorted(entries):
        x = [int(r["episode_index"]) for r in rows]
        ax.plot(x, [float(r["median"]) for r in rows], label=algo)
        ax.fill_between(x, [float(r["ci_low"]) for r in rows],
                        [float(r["ci_high"]) for r in rows], alpha=0.25)
    ax.set_xlabel("episodes")
    ax.set_ylabel("return")
    ax.set_title("p = %g" % p)
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, "curves_p%g.png" % p), dpi=120)
)PY";

const char* kPlotScores = R"PY(import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "run_scores.csv")) as f:
    rows = list(csv.DictReader(f))
ps = sorted({float(r["p"]) for r in rows})
algos = sorted({r["algorithm"] for r in rows})
if rows:
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / len(algos)
    for k, algo in enumerate(algos):
        data = [[float(r["score"]) for r in rows
                 if r["algorithm"] == algo and float(r["p"]) == p] for p in ps]
        pos = [i + (k - (len(algos) - 1) / 2) * width for i in range(len(ps))]
        box = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True)
        for patch in box["boxes"]:
            patch.set_facecolor("C%d" % k)
        ax.plot([], [], color="C%d" % k, label=algo)
    ax.set_xticks(range(len(ps)))
    ax.set_xticklabels(["%g" % p for p in ps])
    ax.set_xlabel("p")
    ax.set_ylabel("re-evaluation return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, "scores.png"), dpi=120)
)PY";

const char* kPlotProbes = R"PY(import csv
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))

invest = defaultdict(list)
with open(os.path.join(here, "probe_investment.csv")) as f:
    for r in csv.DictReader(f):
        invest[(r["algorithm"], float(r["p"]))].append(float(r["investment"]))
for (algo, p), xs in sorted(invest.items()):
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.hist(xs, bins=60, range=(0, 15))
    ax.set_xlabel("investment")
    ax.set_title("%s, p = %g" % (algo, p))
    fig.tight_layout()
    fig.savefig(os.path.join(here, "investment_%s_p%g.png" % (algo, p)), dpi=120)
    plt.close(fig)

profiles = defaultdict(lambda: defaultdict(list))
means = defaultdict(list)
with open(os.path.join(here, "probe_acceptance.csv")) as f:
    for r in csv.DictReader(f):
        key = (r["algorithm"], float(r["p"]))
        profiles[key][float(r["partner_investment"])].append(float(r["accept_probability"]))
        if float(r["partner_investment"]) == 0.0:
            means[key].append(float(r["mean_investment"]))
for key, prof in sorted(profiles.items()):
    algo, p = key
    xs = sorted(prof)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(xs, [sum(prof[x]) / len(prof[x]) for x in xs], marker="o")
    ax.axvline(sum(means[key]) / len(means[key]), color="green")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("partner investment")
    ax.set_ylabel("acceptance probability")
    ax.set_title("%s, p = %g" % (algo, p))
    fig.tight_layout()
    fig.savefig(os.path.join(here, "acceptance_%s_p%g.png" % (algo, p)), dpi=120)
    plt.close(fig)
)PY";

}  // namespace

Summary median_mad(std::span<const double> samples) {
  require(!samples.empty(), "median_mad: empty sample");
  Summary s;
  s.n = samples.size();
  std::vector<double> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());
  s.median = sorted_median(v);
  std::vector<double> dev(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) dev[i] = std::abs(v[i] - s.median);
  std::sort(dev.begin(), dev.end());
  s.mad = sorted_median(dev);
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                           std::string comparison) {
  require(!a.empty() && !b.empty(), "mann_whitney_u: both samples must be non-empty");
  UTestResult r;
  r.n1 = a.size();
  r.n2 = b.size();
  r.comparison = std::move(comparison);
  const std::size_t n = r.n1 + r.n2;

  std::vector<std::pair<double, bool>> pooled;  // (value, from a)
  pooled.reserve(n);
  for (double x : a) pooled.emplace_back(x, true);
  for (double x : b) pooled.emplace_back(x, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& l, const auto& rr) { return l.first < rr.first; });

  double rank_sum_a = 0.0;
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second) rank_sum_a += midrank;
    const auto t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }

  const double n1 = static_cast<double>(r.n1);
  const double n2 = static_cast<double>(r.n2);
  const double nn = static_cast<double>(n);
  r.u_a = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  r.u_statistic = std::min(r.u_a, n1 * n2 - r.u_a);

  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (!(var > 0.0)) {
    r.z = 0.0;
    r.p_value = 1.0;
    return r;
  }
  r.z = std::max(0.0, std::abs(r.u_a - mu) - 0.5) / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(r.z / std::sqrt(2.0)));
  return r;
}

std::vector<CurveBand> aggregate_curves(std::span<const RunRecord> records, std::uint64_t seed,
                                        int resamples) {
  require(resamples >= 1, "aggregate_curves: resamples must be >= 1");
  std::size_t longest = 0;
  const RunRecord* reference = nullptr;
  for (const RunRecord& r : records)
    if (r.curve.size() > longest || !reference) {
      longest = r.curve.size();
      reference = &r;
    }
  for (const RunRecord& r : records)
    for (std::size_t k = 0; k < r.curve.size(); ++k)
      require(r.curve[k].episode_index == reference->curve[k].episode_index,
              "aggregate_curves: runs use different episode grids (point " + std::to_string(k) +
                  ": " + std::to_string(r.curve[k].episode_index) + " vs " +
                  std::to_string(reference->curve[k].episode_index) + ")");

  std::vector<CurveBand> out;
  std::vector<double> values, resample(0), medians(static_cast<std::size_t>(resamples));
  for (std::size_t k = 0; k < longest; ++k) {
    values.clear();
    for (const RunRecord& r : records)
      if (k < r.curve.size()) values.push_back(r.curve[k].mean_return);
    CurveBand band;
    band.episode_index = reference->curve[k].episode_index;
    band.n = values.size();
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    band.median = sorted_median(sorted);

    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(k)}));
    resample.resize(values.size());
    for (double& m : medians) {
      for (double& x : resample) x = values[rng.below(values.size())];
      std::sort(resample.begin(), resample.end());
      m = sorted_median(resample);
    }
    std::sort(medians.begin(), medians.end());
    band.ci_low = sorted_quantile(medians, 0.025);
    band.ci_high = sorted_quantile(medians, 0.975);
    out.push_back(band);
  }
  return out;
}

std::vector<double> probe_investment(const ParamVector& policy, Preset algorithm, Rng& rng,
                                     int draws) {
  require(policy.preset == algorithm, "probe_investment: policy preset mismatch");
  require(draws >= 0, "probe_investment: draws must be >= 0");
  AgentPolicy agent(policy);
  std::vector<double> out(static_cast<std::size_t>(draws));
  for (double& x : out) x = agent.sample_investment(rng);
  return out;
}

AcceptanceProfile probe_acceptance(const ParamVector& policy, Preset algorithm, Rng& rng,
                                   int presentations) {
  require(policy.preset == algorithm, "probe_acceptance: policy preset mismatch");
  require(presentations >= 1, "probe_acceptance: presentations must be >= 1");
  const EnvConfig env;
  AgentPolicy agent(policy);
  AcceptanceProfile prof;
  prof.presentations = presentations;
  double invest_total = 0.0;
  for (int i = 1; i <= env.i_max; ++i) {
    const double partner = env.partner_investment(i);
    int accepted = 0;
    for (int k = 0; k < presentations; ++k) {
      const double x = agent.sample_investment(rng);
      invest_total += x;
      accepted += agent.sample_accept(x, partner, rng) ? 1 : 0;
    }
    prof.partner_investment.push_back(partner);
    prof.accept_probability.push_back(static_cast<double>(accepted) / presentations);
  }
  prof.mean_investment = invest_total / (static_cast<double>(env.i_max) * presentations);
  return prof;
}

double run_score(const RunRecord& record) {
  require(!record.reeval_scores.empty(), "run_score: run has no re-evaluation scores");
  return std::accumulate(record.reeval_scores.begin(), record.reeval_scores.end(), 0.0) /
         static_cast<double>(record.reeval_scores.size());
}

std::vector<SummaryRow> summarize(std::span<const RunRecord> records) {
  std::vector<SummaryRow> rows;
  for (const auto& [key, runs] : cells(records)) {
    std::vector<double> scores;
    for (const RunRecord* r : runs) scores.push_back(run_score(*r));
    rows.push_back(SummaryRow{key.first, key.second, median_mad(scores)});
  }
  return rows;
}

std::vector<std::pair<double, UTestResult>> compare_algorithms(std::span<const RunRecord> records) {
  std::map<double, std::vector<std::pair<std::string, std::vector<double>>>> by_p;
  for (const auto& [key, runs] : cells(records)) {
    std::vector<double> scores;
    for (const RunRecord* r : runs) scores.push_back(run_score(*r));
    by_p[key.first].emplace_back(key.second, std::move(scores));
  }
  std::vector<std::pair<double, UTestResult>> out;
  for (const auto& [p, groups] : by_p)
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j)
        out.emplace_back(p, mann_whitney_u(groups[i].second, groups[j].second,
                                           groups[i].first + " vs " + groups[j].first));
  return out;
}

std::vector<fs::path> emit_tables_and_plotdata(std::span<const RunRecord> records,
                                               const fs::path& out_dir,
                                               const EmitOptions& options) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    csv::write_text(out_dir / name, text);
    written.push_back(out_dir / name);
  };
  using csv::format;

  if (options.tables) {
    std::ostringstream summary;
    summary << "p,algorithm,median,mad,mean,std,n\n";
    for (const SummaryRow& r : summarize(records))
      summary << format(r.p) << ',' << r.algorithm << ',' << format(r.stats.median) << ','
              << format(r.stats.mad) << ',' << format(r.stats.mean) << ','
              << format(r.stats.std) << ',' << r.stats.n << '\n';
    emit("summary.csv", summary.str());

    std::ostringstream tests;
    tests << "p,test,p_value,u_statistic,n1,n2\n";
    for (const auto& [p, t] : compare_algorithms(records))
      tests << format(p) << ',' << t.comparison << ',' << format(t.p_value) << ','
            << format(t.u_statistic) << ',' << t.n1 << ',' << t.n2 << '\n';
    emit("utests.csv", tests.str());

    std::ostringstream scores;
    scores << "p,algorithm,run,seed,score,failed\n";
    for (const auto& [key, runs] : cells(records))
      for (std::size_t k = 0; k < runs.size(); ++k)
        scores << format(key.first) << ',' << key.second << ',' << k << ','
               << runs[k]->config.seed << ',' << format(run_score(*runs[k])) << ','
               << (runs[k]->failed ? 1 : 0) << '\n';
    emit("run_scores.csv", scores.str());
    emit("plot_scores.py", kPlotScores);
  }

  if (options.curves) {
    for (const auto& [key, runs] : cells(records)) {
      std::vector<RunRecord> cell_records;
      for (const RunRecord* r : runs) cell_records.push_back(*r);
      const std::uint64_t cell_seed =
          derive_seed(options.seed, {std::bit_cast<std::uint64_t>(key.first),
                                     static_cast<std::uint64_t>(runs.front()->config.algorithm)});
      std::ostringstream curve;
      curve << "episode_index,median,ci_low,ci_high,n\n";
      for (const CurveBand& b :
           aggregate_curves(cell_records, cell_seed, options.bootstrap_resamples))
        curve << b.episode_index << ',' << format(b.median) << ',' << format(b.ci_low) << ','
              << format(b.ci_high) << ',' << b.n << '\n';
      emit("curves_" + key.second + "_p" + p_label(key.first) + ".csv", curve.str());
    }
    emit("plot_curves.py", kPlotCurves);
  }

  if (options.probes) {
    std::ostringstream invest, accept;
    invest << "p,algorithm,run,draw,investment\n";
    accept << "p,algorithm,run,partner_investment,accept_probability,mean_investment\n";
    for (const auto& [key, runs] : cells(records)) {
      const std::string p = format(key.first);
      for (std::size_t k = 0; k < runs.size(); ++k) {
        const RunRecord& r = *runs[k];
        Rng rng(derive_seed(options.seed, {r.config.seed, kProbeStream}));
        const std::vector<double> xs = probe_investment(r.final_policy, r.config.algorithm, rng);
        for (std::size_t d = 0; d < xs.size(); ++d)
          invest << p << ',' << key.second << ',' << k << ',' << d << ',' << format(xs[d])
                 << '\n';
        const AcceptanceProfile prof = probe_acceptance(r.final_policy, r.config.algorithm, rng);
        for (std::size_t i = 0; i < prof.partner_investment.size(); ++i)
          accept << p << ',' << key.second << ',' << k << ','
                 << format(prof.partner_investment[i]) << ','
                 << format(prof.accept_probability[i]) << ',' << format(prof.mean_investment)
                 << '\n';
      }
    }
    emit("probe_investment.csv", invest.str());
    emit("probe_acceptance.csv", accept.str());
    emit("plot_probes.py", kPlotProbes);
  }
  return written;
}

}  // namespace rse
