#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rse/analysis.hpp"
#include "rse/cmaes.hpp"
#include "rse/config.hpp"
#include "rse/env.hpp"
#include "rse/error.hpp"
#include "rse/harness.hpp"
#include "rse/nets.hpp"
#include "rse/ppo.hpp"

namespace py = pybind11;
using namespace rse;

namespace {

RunConfig run_config_from_dict(const py::dict& d) {
  const std::string text = py::module_::import("json").attr("dumps")(d).cast<std::string>();
  return run_config_from_json(parse_json_text(text));
}

GridConfig grid_config_from_dict(const py::dict& d) {
  const std::string text = py::module_::import("json").attr("dumps")(d).cast<std::string>();
  return grid_config_from_json(parse_json_text(text));
}

py::object to_py(const Json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_rse, m) {
  m.doc() = "Partner-choice benchmark core: environment, PPO, CMA-ES, harness and statistics.";

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<EnvConfig>(m, "EnvConfig")
      .def(py::init([](double p) {
             EnvConfig c;
             c.p = p;
             c.validate();
             return c;
           }),
           py::arg("p") = 1.0)
      .def_readwrite("p", &EnvConfig::p)
      .def_readwrite("a", &EnvConfig::a)
      .def_readwrite("b", &EnvConfig::b)
      .def_readwrite("invest_min", &EnvConfig::invest_min)
      .def_readwrite("invest_max", &EnvConfig::invest_max)
      .def_readwrite("i_max", &EnvConfig::i_max)
      .def_readwrite("base_meetings", &EnvConfig::base_meetings)
      .def("validate", &EnvConfig::validate)
      .def("max_steps", &EnvConfig::max_steps);

  m.def("payoff", &payoff, py::arg("x_focal"), py::arg("x_partner"), py::arg("cfg") = EnvConfig{});
  m.def("partner_investment", &partner_investment, py::arg("i"));
  m.def("expected_return_oracle", &expected_return_oracle, py::arg("x_focal"),
        py::arg("accept_threshold"), py::arg("cfg") = EnvConfig{});
  m.def(
      "play_threshold_episodes",
      [](double x, double threshold, double p, int episodes, std::uint64_t seed) {
        EnvConfig env;
        env.p = p;
        env.validate();
        Rng rng(seed);
        std::vector<double> out;
        for (int e = 0; e < episodes; ++e)
          out.push_back(play_episode(
                            env, env.clamp_investment(x),
                            [&](double, double partner, Rng&) { return partner >= threshold; },
                            rng)
                            .reward);
        return out;
      },
      py::arg("x"), py::arg("threshold"), py::arg("p"), py::arg("episodes"), py::arg("seed") = 0,
      "Returns of the deterministic policy 'invest x, accept partners >= threshold'.");

  py::enum_<Preset>(m, "Preset")
      .value("PPO_MLP", Preset::PpoMlp)
      .value("PPO_DEEP", Preset::PpoDeep)
      .value("CMAES", Preset::Cmaes);
  m.def("preset_name", [](Preset p) { return std::string(preset_name(p)); });
  m.def("parse_preset", [](const std::string& s) { return parse_preset(s); });
  m.def("param_count", &param_count, py::arg("preset"));

  py::class_<ParamVector>(m, "ParamVector")
      .def_readonly("preset", &ParamVector::preset)
      .def_readwrite("values", &ParamVector::values)
      .def("__len__", &ParamVector::size)
      .def("segments", [](const ParamVector& pv) {
        py::dict d;
        for (const Segment& s : pv.layout) d[py::str(s.name)] = py::make_tuple(s.offset, s.length);
        return d;
      });
  m.def("make_params", &make_params, py::arg("preset"));
  m.def(
      "init_params",
      [](Preset preset, std::uint64_t seed) {
        Rng rng(seed);
        return init_params(preset, rng);
      },
      py::arg("preset"), py::arg("seed") = 0);
  m.def("save_params", &save_params, py::arg("path"), py::arg("params"));
  m.def("load_params", &load_params, py::arg("path"));
  m.def("serialize_params", [](const ParamVector& pv) {
    const auto bytes = serialize_params(pv);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });
  m.def("deserialize_params", [](const py::bytes& b) {
    const std::string s = b;
    return deserialize_params(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  });

  m.def(
      "accept_probability",
      [](const ParamVector& pv, double x, double partner) {
        AgentPolicy agent(pv);
        return agent.accept_probability(x, partner);
      },
      py::arg("params"), py::arg("x_focal"), py::arg("partner_investment"));

  m.def(
      "kl_beta_update",
      [](double beta, double kl, double target) {
        return kl_beta_update(KlPenaltyState{beta}, kl, target).beta;
      },
      py::arg("beta"), py::arg("measured_kl"), py::arg("kl_target") = 0.01);

  m.def(
      "cmaes_sphere",
      [](std::size_t dimension, int generations, std::uint64_t seed, double sigma) {
        CmaesConfig cfg;
        cfg.dimension = dimension;
        cfg.sigma_init = sigma;
        CmaesState s = make_cmaes_state(cfg);
        Rng rng(seed);
        for (int g = 0; g < generations; ++g) {
          const auto genomes = ask(s, rng);
          std::vector<double> fit;
          for (const auto& x : genomes) fit.push_back(-x.squaredNorm());
          tell(s, genomes, fit);
        }
        return std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
      },
      py::arg("dimension") = 34, py::arg("generations") = 500, py::arg("seed") = 0,
      py::arg("sigma") = 1.0, "Final mean of CMA-ES maximizing -||x||^2.");

  py::class_<CurvePoint>(m, "CurvePoint")
      .def_readonly("episode_index", &CurvePoint::episode_index)
      .def_readonly("mean_return", &CurvePoint::mean_return)
      .def_readonly("env_steps", &CurvePoint::env_steps)
      .def_readonly("diagnostics", &CurvePoint::diagnostics);

  py::class_<RunRecord>(m, "RunRecord")
      .def_property_readonly("config", [](const RunRecord& r) { return to_py(to_json(r.config)); })
      .def_readonly("curve", &RunRecord::curve)
      .def_readonly("final_policy", &RunRecord::final_policy)
      .def_readonly("reeval_scores", &RunRecord::reeval_scores)
      .def_readonly("wall_time", &RunRecord::wall_time)
      .def_readonly("failed", &RunRecord::failed)
      .def_readonly("failure", &RunRecord::failure)
      .def_readonly("episodes", &RunRecord::episodes)
      .def_readonly("env_steps", &RunRecord::env_steps)
      .def_readonly("updates", &RunRecord::updates)
      .def_property_readonly("score", &run_score);

  m.def(
      "run_single",
      [](const py::dict& cfg) {
        const RunConfig rc = run_config_from_dict(cfg);
        py::gil_scoped_release release;
        return run_single(rc);
      },
      py::arg("config"), "Train and re-evaluate one run from a config dict.");
  m.def(
      "run_grid",
      [](const py::dict& cfg) {
        const GridConfig gc = grid_config_from_dict(cfg);
        GridResult r;
        {
          py::gil_scoped_release release;
          r = run_grid(gc);
        }
        return py::make_tuple(std::move(r.records), std::move(r.failures), r.resumed);
      },
      py::arg("config"), "Returns (records, failures, resumed_count).");
  m.def("load_record", &load_record, py::arg("dir"));
  m.def("load_records", &load_records, py::arg("root"));
  m.def(
      "effective_run_config", [](const py::dict& cfg) { return to_py(to_json(run_config_from_dict(cfg))); },
      py::arg("config"));
  m.def(
      "reevaluate",
      [](const ParamVector& policy, int episodes, double p_eval, std::uint64_t seed) {
        Rng rng(seed);
        return reevaluate(policy, policy.preset, episodes, p_eval, rng);
      },
      py::arg("policy"), py::arg("episodes") = 1000, py::arg("p_eval") = 1.0, py::arg("seed") = 0);

  py::class_<TimingResult>(m, "TimingResult")
      .def_readonly("ms_per_step", &TimingResult::ms_per_step)
      .def_readonly("seconds", &TimingResult::seconds)
      .def_readonly("env_steps", &TimingResult::env_steps)
      .def_readonly("episodes", &TimingResult::episodes)
      .def_readonly("updates", &TimingResult::updates)
      .def("updates_per_step", &TimingResult::updates_per_step);
  m.def(
      "step_timing_probe",
      [](const std::string& algorithm, double p, double seconds, std::int64_t max_env_steps,
         std::uint64_t seed, std::optional<ParamVector> initial) {
        TimingProbe probe{seconds, max_env_steps, seed, std::move(initial)};
        const Preset preset = parse_preset(algorithm);
        py::gil_scoped_release release;
        return step_timing_probe(preset, p, probe);
      },
      py::arg("algorithm"), py::arg("p"), py::arg("seconds") = 1.0, py::arg("max_env_steps") = 0,
      py::arg("seed") = 0, py::arg("initial") = py::none());

  py::class_<Summary>(m, "Summary")
      .def_readonly("median", &Summary::median)
      .def_readonly("mad", &Summary::mad)
      .def_readonly("mean", &Summary::mean)
      .def_readonly("std", &Summary::std)
      .def_readonly("n", &Summary::n);
  m.def("median_mad", [](const std::vector<double>& xs) { return median_mad(xs); },
        py::arg("samples"));

  py::class_<UTestResult>(m, "UTestResult")
      .def_readonly("u_statistic", &UTestResult::u_statistic)
      .def_readonly("u_a", &UTestResult::u_a)
      .def_readonly("z", &UTestResult::z)
      .def_readonly("p_value", &UTestResult::p_value)
      .def_readonly("n1", &UTestResult::n1)
      .def_readonly("n2", &UTestResult::n2)
      .def_readonly("comparison", &UTestResult::comparison);
  m.def(
      "mann_whitney_u",
      [](const std::vector<double>& a, const std::vector<double>& b, const std::string& label) {
        return mann_whitney_u(a, b, label);
      },
      py::arg("a"), py::arg("b"), py::arg("comparison") = "");

  py::class_<CurveBand>(m, "CurveBand")
      .def_readonly("episode_index", &CurveBand::episode_index)
      .def_readonly("median", &CurveBand::median)
      .def_readonly("ci_low", &CurveBand::ci_low)
      .def_readonly("ci_high", &CurveBand::ci_high)
      .def_readonly("n", &CurveBand::n);
  m.def(
      "aggregate_curves",
      [](const std::vector<RunRecord>& records, std::uint64_t seed, int resamples) {
        return aggregate_curves(records, seed, resamples);
      },
      py::arg("records"), py::arg("seed") = 0, py::arg("resamples") = 2000);

  py::class_<AcceptanceProfile>(m, "AcceptanceProfile")
      .def_readonly("partner_investment", &AcceptanceProfile::partner_investment)
      .def_readonly("accept_probability", &AcceptanceProfile::accept_probability)
      .def_readonly("mean_investment", &AcceptanceProfile::mean_investment)
      .def_readonly("presentations", &AcceptanceProfile::presentations);
  m.def(
      "probe_investment",
      [](const ParamVector& policy, std::uint64_t seed, int draws) {
        Rng rng(seed);
        return probe_investment(policy, policy.preset, rng, draws);
      },
      py::arg("policy"), py::arg("seed") = 0, py::arg("draws") = 1000);
  m.def(
      "probe_acceptance",
      [](const ParamVector& policy, std::uint64_t seed, int presentations) {
        Rng rng(seed);
        return probe_acceptance(policy, policy.preset, rng, presentations);
      },
      py::arg("policy"), py::arg("seed") = 0, py::arg("presentations") = 100);
  m.def(
      "emit_tables_and_plotdata",
      [](const std::vector<RunRecord>& records, const std::filesystem::path& out,
         std::uint64_t seed, bool probes) {
        EmitOptions opts;
        opts.seed = seed;
        opts.probes = probes;
        return emit_tables_and_plotdata(records, out, opts);
      },
      py::arg("records"), py::arg("out_dir"), py::arg("seed") = 0, py::arg("probes") = true);
}
