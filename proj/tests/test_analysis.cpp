#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rse/analysis.hpp"
#include "rse/csv.hpp"
#include "rse/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace rse;
namespace fs = std::filesystem;

namespace {

RunRecord fake_record(Preset algo, double p, std::uint64_t seed, std::vector<double> scores,
                      std::vector<double> curve = {}) {
  RunRecord r;
  r.config = default_run_config(algo, p);
  r.config.seed = seed;
  r.reeval_scores = std::move(scores);
  for (std::size_t k = 0; k < curve.size(); ++k)
    r.curve.push_back(CurvePoint{1000 * static_cast<std::int64_t>(k + 1), curve[k], 0, {}});
  r.final_policy = test::threshold_params(algo, 10.0, 10.0);
  return r;
}

}  // namespace

TEST(Analysis, MedianMadExamples) {
  const std::vector<double> a = {1, 2, 3};
  Summary s = median_mad(a);
  EXPECT_EQ(s.median, 2.0);
  EXPECT_EQ(s.mad, 1.0);
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_EQ(s.std, 1.0);
  const std::vector<double> b = {5, 5, 5, 5};
  s = median_mad(b);
  EXPECT_EQ(s.median, 5.0);
  EXPECT_EQ(s.mad, 0.0);
  EXPECT_EQ(s.std, 0.0);
  const std::vector<double> even = {4, 1, 3, 10};
  EXPECT_EQ(median_mad(even).median, 3.5);
  EXPECT_THROW(median_mad(std::vector<double>{}), ContractError);
}

TEST(Analysis, MedianMadProperties) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(1 + rng.below(30));
    for (double& v : x) v = rng.normal() * 10;
    const Summary s = median_mad(x);
    EXPECT_GE(s.mad, 0.0);
    EXPECT_EQ(s.n, x.size());
    std::vector<double> shuffled = x;
    rng.shuffle(shuffled);
    const Summary t = median_mad(shuffled);
    EXPECT_EQ(s.median, t.median);
    EXPECT_EQ(s.mad, t.mad);
    const double c = rng.normal() * 100;
    std::vector<double> moved = x;
    for (double& v : moved) v += c;
    const Summary m = median_mad(moved);
    EXPECT_NEAR(m.median, s.median + c, 1e-9);
    EXPECT_NEAR(m.mad, s.mad, 1e-9);
  }
}

TEST(Analysis, TableRowFormatRoundTrips) {
  const double row[4] = {47.72, 2.45, 46.19, 3.21};
  for (double v : row) EXPECT_EQ(csv::to_double(csv::format(v)), v);
}

TEST(Analysis, CompleteSeparationAtTwentyFour) {
  std::vector<double> lo(24), hi(24);
  for (int i = 0; i < 24; ++i) lo[i] = i, hi[i] = 100 + i;
  const UTestResult r = mann_whitney_u(lo, hi);
  EXPECT_EQ(r.u_statistic, 0.0);
  EXPECT_NEAR(r.p_value, 3.1e-9, 0.31e-9);
}

TEST(Analysis, IdenticalSamples) {
  const std::vector<double> a = {1, 2, 3, 4, 5, 6};
  const UTestResult r = mann_whitney_u(a, a);
  EXPECT_EQ(r.u_statistic, 18.0);
  EXPECT_NEAR(r.p_value, 1.0, 1e-12);
  const std::vector<double> flat = {2, 2, 2};
  const UTestResult d = mann_whitney_u(flat, flat);
  EXPECT_EQ(d.p_value, 1.0);
}

TEST(Analysis, MinConventionSymmetry) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1 + rng.below(15)), b(1 + rng.below(15));
    for (double& v : a) v = std::round(rng.normal() * 3);  // ties on purpose
    for (double& v : b) v = std::round(rng.normal() * 3 + 1);
    const UTestResult ab = mann_whitney_u(a, b), ba = mann_whitney_u(b, a);
    const double n1n2 = static_cast<double>(a.size() * b.size());
    EXPECT_EQ(ab.u_statistic, ba.u_statistic);
    EXPECT_DOUBLE_EQ(ab.p_value, ba.p_value);
    EXPECT_NEAR(ab.u_a + ba.u_a, n1n2, 1e-9);
    EXPECT_GE(ab.u_statistic, 0.0);
    EXPECT_LE(ab.u_statistic, n1n2 / 2.0);
    EXPECT_GE(ab.p_value, 0.0);
    EXPECT_LE(ab.p_value, 1.0);
  }
}

TEST(Analysis, UStatisticAgainstPairCounting) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(2 + rng.below(10)), b(2 + rng.below(10));
    for (double& v : a) v = static_cast<double>(rng.below(6));
    for (double& v : b) v = static_cast<double>(rng.below(6));
    double count = 0.0;
    for (double x : a)
      for (double y : b) count += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
    EXPECT_DOUBLE_EQ(mann_whitney_u(a, b).u_a, count);
  }
}

// Sizes 5..8 meet the 0.02 agreement; sizes 2..4 are checked in the
// acceptance suite, where the gap is reported.
TEST(Analysis, NormalApproximationMatchesExactEnumeration) {
  for (int n = 5; n <= 8; ++n) EXPECT_LE(test::mw_worst_gap(n), 0.02) << "n=" << n;
}

TEST(Analysis, AggregateCurves) {
  std::vector<RunRecord> one = {fake_record(Preset::Cmaes, 1.0, 1, {1}, {3, 4, 5})};
  for (const CurveBand& b : aggregate_curves(one, 9)) {
    EXPECT_EQ(b.ci_low, b.median);
    EXPECT_EQ(b.ci_high, b.median);
  }
  std::vector<RunRecord> flat;
  for (int k = 0; k < 5; ++k) flat.push_back(fake_record(Preset::Cmaes, 1.0, k, {1}, {7, 7}));
  for (const CurveBand& b : aggregate_curves(flat, 9)) EXPECT_EQ(b.ci_high - b.ci_low, 0.0);

  std::vector<RunRecord> runs;
  Rng rng(4);
  for (int k = 0; k < 10; ++k) {
    std::vector<double> c(5);
    for (double& v : c) v = rng.normal() * 10 + 30;
    runs.push_back(fake_record(Preset::Cmaes, 1.0, k, {1}, c));
  }
  const auto x = aggregate_curves(runs, 42), y = aggregate_curves(runs, 42);
  ASSERT_EQ(x.size(), 5u);
  for (std::size_t k = 0; k < x.size(); ++k) {
    EXPECT_EQ(x[k].ci_low, y[k].ci_low);
    EXPECT_EQ(x[k].ci_high, y[k].ci_high);
    EXPECT_LE(x[k].ci_low, x[k].median);
    EXPECT_GE(x[k].ci_high, x[k].median);
    EXPECT_EQ(x[k].n, 10u);
    std::vector<double> col;
    for (const RunRecord& r : runs) col.push_back(r.curve[k].mean_return);
    EXPECT_EQ(x[k].median, median_mad(col).median);
  }

  // A truncated run contributes only where it reached; a shifted grid fails.
  runs.push_back(fake_record(Preset::Cmaes, 1.0, 99, {1}, {1, 2}));
  const auto t = aggregate_curves(runs, 42);
  EXPECT_EQ(t[0].n, 11u);
  EXPECT_EQ(t[4].n, 10u);
  RunRecord shifted = fake_record(Preset::Cmaes, 1.0, 100, {1}, {1});
  shifted.curve[0].episode_index = 500;
  runs.push_back(shifted);
  EXPECT_THROW(aggregate_curves(runs, 42), ContractError);
}

TEST(Analysis, ProbeInvestment) {
  ParamVector cma = make_params(Preset::Cmaes);
  cma.values[0] = 10.0;
  Rng rng(5);
  const auto xs = probe_investment(cma, Preset::Cmaes, rng);
  ASSERT_EQ(xs.size(), 1000u);
  for (double x : xs) EXPECT_EQ(x, 10.0);

  ParamVector ppo = make_params(Preset::PpoMlp);
  ppo.segment(segments::kInvestmentActor)[0] = 10.0;
  ppo.segment(segments::kInvestmentActor)[1] = std::log(0.1);
  const auto ys = probe_investment(ppo, Preset::PpoMlp, rng);
  EXPECT_NEAR(std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size(), 10.0, 0.02);

  ppo.segment(segments::kInvestmentActor)[0] = 14.0;
  ppo.segment(segments::kInvestmentActor)[1] = std::log(5.0);
  for (double y : probe_investment(ppo, Preset::PpoMlp, rng)) {
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, 15.0);
  }
  EXPECT_THROW(probe_investment(ppo, Preset::Cmaes, rng), ContractError);
}

TEST(Analysis, ProbeAcceptance) {
  Rng rng(6);
  ParamVector always = test::threshold_params(Preset::Cmaes, 10.0, 0.0);
  const AcceptanceProfile a = probe_acceptance(always, Preset::Cmaes, rng);
  ASSERT_EQ(a.accept_probability.size(), 31u);
  EXPECT_EQ(a.presentations, 100);
  for (double q : a.accept_probability) EXPECT_EQ(q, 1.0);
  EXPECT_EQ(a.mean_investment, 10.0);

  const AcceptanceProfile step =
      probe_acceptance(test::threshold_params(Preset::PpoMlp, 10.0, 10.0), Preset::PpoMlp, rng);
  for (int i = 0; i < 31; ++i) {
    EXPECT_EQ(step.partner_investment[i], 0.5 * i);
    EXPECT_EQ(step.accept_probability[i], step.partner_investment[i] >= 10.0 ? 1.0 : 0.0);
    if (i > 0) EXPECT_GE(step.accept_probability[i], step.accept_probability[i - 1]);
  }
  EXPECT_NEAR(step.mean_investment, 10.0, 1e-6);
}

TEST(Analysis, SummaryOrderingAndTests) {
  std::vector<RunRecord> recs;
  recs.push_back(fake_record(Preset::PpoMlp, 1.0, 1, {40}));
  recs.push_back(fake_record(Preset::Cmaes, 1.0, 2, {48}));
  recs.push_back(fake_record(Preset::PpoDeep, 0.1, 3, {20, 22}));
  recs.push_back(fake_record(Preset::Cmaes, 0.1, 4, {47}));
  recs.push_back(fake_record(Preset::Cmaes, 0.1, 5, {49}));
  const auto rows = summarize(recs);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].p, 0.1);
  EXPECT_EQ(rows[0].algorithm, "CMAES");
  EXPECT_EQ(rows[0].stats.n, 2u);
  EXPECT_EQ(rows[0].stats.median, 48.0);
  EXPECT_EQ(rows[1].algorithm, "PPO-DEEP");
  EXPECT_EQ(rows[1].stats.median, 21.0);
  EXPECT_EQ(rows[2].p, 1.0);
  EXPECT_EQ(rows[3].algorithm, "PPO-MLP");
  const auto tests = compare_algorithms(recs);
  ASSERT_EQ(tests.size(), 2u);
  EXPECT_EQ(tests[0].second.comparison, "CMAES vs PPO-DEEP");
  EXPECT_EQ(tests[1].first, 1.0);
}

TEST(Analysis, EmitEmptyRecordsWritesHeaders) {
  const fs::path dir = test::scratch_dir("emit_empty");
  const auto files = emit_tables_and_plotdata({}, dir);
  EXPECT_FALSE(files.empty());
  for (const char* name : {"summary.csv", "utests.csv", "run_scores.csv", "probe_investment.csv",
                           "probe_acceptance.csv"}) {
    const csv::Table t = csv::read(dir / name);
    EXPECT_FALSE(t.header.empty()) << name;
    EXPECT_TRUE(t.rows.empty()) << name;
  }
  for (const char* name : {"plot_scores.py", "plot_curves.py", "plot_probes.py"})
    EXPECT_TRUE(fs::exists(dir / name));
}

TEST(Analysis, EmitRoundTripsValues) {
  const fs::path dir = test::scratch_dir("emit");
  std::vector<RunRecord> recs;
  Rng rng(7);
  for (Preset algo : {Preset::PpoMlp, Preset::Cmaes})
    for (double p : {1.0, 0.1})
      for (int k = 0; k < 3; ++k) {
        std::vector<double> scores(5), curve(3);
        for (double& v : scores) v = rng.normal() * 7 + 40;
        for (double& v : curve) v = rng.normal() * 7 + 30;
        recs.push_back(fake_record(algo, p, rng.next_u64(), scores, curve));
      }
  EmitOptions opts;
  opts.bootstrap_resamples = 200;
  emit_tables_and_plotdata(recs, dir, opts);

  const csv::Table summary = csv::read(dir / "summary.csv");
  const auto rows = summarize(recs);
  ASSERT_EQ(summary.rows.size(), rows.size());
  EXPECT_EQ(summary.header,
            (std::vector<std::string>{"p", "algorithm", "median", "mad", "mean", "std", "n"}));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    EXPECT_EQ(csv::to_double(summary.rows[k][0]), rows[k].p);
    EXPECT_EQ(summary.rows[k][1], rows[k].algorithm);
    EXPECT_EQ(csv::to_double(summary.rows[k][2]), rows[k].stats.median);
    EXPECT_EQ(csv::to_double(summary.rows[k][3]), rows[k].stats.mad);
    EXPECT_EQ(csv::to_double(summary.rows[k][4]), rows[k].stats.mean);
    EXPECT_EQ(csv::to_double(summary.rows[k][5]), rows[k].stats.std);
  }
  EXPECT_EQ(summary.rows[0][1], "CMAES");
  EXPECT_EQ(csv::to_double(summary.rows[0][0]), 0.1);

  const csv::Table tests = csv::read(dir / "utests.csv");
  const auto cmp = compare_algorithms(recs);
  ASSERT_EQ(tests.rows.size(), cmp.size());
  for (std::size_t k = 0; k < cmp.size(); ++k)
    EXPECT_EQ(csv::to_double(tests.rows[k][tests.column("p_value")]), cmp[k].second.p_value);

  const csv::Table curve = csv::read(dir / "curves_CMAES_p0.1.csv");
  EXPECT_EQ(curve.rows.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "curves_PPO-MLP_p1.csv"));

  const csv::Table acc = csv::read(dir / "probe_acceptance.csv");
  EXPECT_EQ(acc.rows.size(), recs.size() * 31u);
  const csv::Table inv = csv::read(dir / "probe_investment.csv");
  EXPECT_EQ(inv.rows.size(), recs.size() * 1000u);
}
