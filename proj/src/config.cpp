#include "rse/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "rse/error.hpp"

namespace rse {

namespace {

std::string describe(const std::string& field, const std::string& message,
                     std::optional<int> line) {
  std::string out = field.empty() ? message : field + ": " + message;
  if (line) out += " (line " + std::to_string(*line) + ")";
  return out;
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

// Typed field access over one JSON object, remembering which keys were used.
class Reader {
 public:
  Reader(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <typename T>
  void get(std::string_view key, T& out) {
    seen_.insert(std::string(key));
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(join(path_, key), "wrong type (" + std::string(it->type_name()) + ")");
    }
  }

  void get_preset(std::string_view key, Preset& out) {
    std::string name(preset_name(out));
    get(key, name);
    try {
      out = parse_preset(name);
    } catch (const ContractError& e) {
      throw ConfigError(join(path_, key), e.what());
    }
  }

  const Json* child(std::string_view key) {
    seen_.insert(std::string(key));
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string path(std::string_view key) const { return join(path_, key); }

  void finish() const {
    for (const auto& item : obj_.items())
      if (!seen_.count(item.key())) throw ConfigError(join(path_, item.key()), "unknown key");
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void check_schema(Reader& r) {
  int version = kSchemaVersion;
  r.get("schema_version", version);
  if (version != kSchemaVersion)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(version) +
                                            " (expected " + std::to_string(kSchemaVersion) + ")");
}

void read_env(const Json& j, const std::string& path, EnvConfig& env) {
  Reader r(j, path);
  r.get("a", env.a);
  r.get("b", env.b);
  r.get("invest_min", env.invest_min);
  r.get("invest_max", env.invest_max);
  r.get("i_max", env.i_max);
  r.get("base_meetings", env.base_meetings);
  r.finish();
}

void read_ppo(const Json& j, const std::string& path, PpoConfig& cfg) {
  Reader r(j, path);
  r.get("learning_rate", cfg.learning_rate);
  std::string opt = cfg.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
  r.get("optimizer", opt);
  if (opt == "adam") {
    cfg.optimizer = OptimizerKind::Adam;
  } else if (opt == "sgd") {
    cfg.optimizer = OptimizerKind::Sgd;
  } else {
    throw ConfigError(r.path("optimizer"), "expected \"adam\" or \"sgd\", got \"" + opt + "\"");
  }
  r.get("epochs", cfg.epochs);
  r.get("minibatch_size", cfg.minibatch_size);
  r.get("batch_size", cfg.batch_size);
  r.get("beta_init", cfg.beta_init);
  r.get("kl_target", cfg.kl_target);
  r.get("clip_epsilon", cfg.clip_epsilon);
  r.get("gamma", cfg.gamma);
  r.get("gae_lambda", cfg.gae_lambda);
  r.get("use_critic", cfg.use_critic);
  r.get("value_loss_coeff", cfg.value_loss_coeff);
  r.get("standardize_advantages", cfg.standardize_advantages);
  r.finish();
}

void read_cmaes(const Json& j, const std::string& path, CmaesConfig& cfg) {
  Reader r(j, path);
  r.get("dimension", cfg.dimension);
  r.get("population_size", cfg.population_size);
  r.get("sigma_init", cfg.sigma_init);
  r.get("mean_init", cfg.mean_init);
  r.get("episodes_per_eval", cfg.episodes_per_eval);
  r.get("reeval_episodes", cfg.reeval_episodes);
  r.finish();
}

template <typename Fn>
void validated(Fn&& fn) {
  try {
    fn();
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(' ');
    throw ConfigError(msg.substr(0, colon), msg);
  }
}

int line_of(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

}  // namespace

ConfigError::ConfigError(std::string field, const std::string& message, std::optional<int> line)
    : std::runtime_error(describe(field, message, line)), field_(std::move(field)), line_(line) {}

Json to_json(const EnvConfig& cfg) {
  return Json{{"a", cfg.a},
              {"b", cfg.b},
              {"invest_min", cfg.invest_min},
              {"invest_max", cfg.invest_max},
              {"i_max", cfg.i_max},
              {"base_meetings", cfg.base_meetings}};
}

Json to_json(const PpoConfig& cfg) {
  return Json{{"learning_rate", cfg.learning_rate},
              {"optimizer", cfg.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
              {"epochs", cfg.epochs},
              {"minibatch_size", cfg.minibatch_size},
              {"batch_size", cfg.batch_size},
              {"beta_init", cfg.beta_init},
              {"kl_target", cfg.kl_target},
              {"clip_epsilon", cfg.clip_epsilon},
              {"gamma", cfg.gamma},
              {"gae_lambda", cfg.gae_lambda},
              {"use_critic", cfg.use_critic},
              {"value_loss_coeff", cfg.value_loss_coeff},
              {"standardize_advantages", cfg.standardize_advantages}};
}

Json to_json(const CmaesConfig& cfg) {
  return Json{{"dimension", cfg.dimension},
              {"population_size", cfg.population_size},
              {"sigma_init", cfg.sigma_init},
              {"mean_init", cfg.mean_init},
              {"episodes_per_eval", cfg.episodes_per_eval},
              {"reeval_episodes", cfg.reeval_episodes}};
}

Json to_json(const RunConfig& cfg) {
  Json j{{"schema_version", kSchemaVersion},
         {"algorithm", std::string(preset_name(cfg.algorithm))},
         {"p", cfg.env.p},
         {"episode_budget", cfg.episode_budget},
         {"seed", cfg.seed},
         {"env", to_json(cfg.env)}};
  if (cfg.algorithm == Preset::Cmaes) {
    j["cmaes"] = to_json(cfg.cmaes);
  } else {
    j["ppo"] = to_json(cfg.ppo);
  }
  j["reeval_episodes"] = cfg.reeval_episodes;
  j["p_eval"] = cfg.p_eval;
  j["curve_spacing"] = cfg.curve_spacing;
  j["output_dir"] = cfg.output_dir.string();
  return j;
}

Json to_json(const GridConfig& cfg) {
  Json algos = Json::array();
  for (Preset a : cfg.algorithms) algos.push_back(std::string(preset_name(a)));
  return Json{{"schema_version", kSchemaVersion},
              {"algorithms", algos},
              {"p_values", cfg.p_values},
              {"runs_per_cell", cfg.runs_per_cell},
              {"base_seed", cfg.base_seed},
              {"episode_budget", cfg.episode_budget},
              {"env", to_json(cfg.env)},
              {"ppo_mlp", to_json(cfg.ppo_mlp)},
              {"ppo_deep", to_json(cfg.ppo_deep)},
              {"cmaes", to_json(cfg.cmaes)},
              {"reeval_episodes", cfg.reeval_episodes},
              {"p_eval", cfg.p_eval},
              {"output_dir", cfg.output_dir.string()},
              {"workers", cfg.workers}};
}

RunConfig run_config_from_json(const Json& doc) {
  Reader r(doc, "");
  check_schema(r);
  Preset algorithm = Preset::Cmaes;
  r.get_preset("algorithm", algorithm);
  double p = 1.0;
  r.get("p", p);
  RunConfig cfg = default_run_config(algorithm, p);
  r.get("episode_budget", cfg.episode_budget);
  r.get("seed", cfg.seed);
  if (const Json* env = r.child("env")) read_env(*env, "env", cfg.env);
  if (const Json* ppo = r.child("ppo")) {
    if (algorithm == Preset::Cmaes) throw ConfigError("ppo", "not used by CMAES");
    read_ppo(*ppo, "ppo", cfg.ppo);
  }
  if (const Json* cm = r.child("cmaes")) {
    if (algorithm != Preset::Cmaes)
      throw ConfigError("cmaes", "not used by " + std::string(preset_name(algorithm)));
    read_cmaes(*cm, "cmaes", cfg.cmaes);
  }
  r.get("reeval_episodes", cfg.reeval_episodes);
  r.get("p_eval", cfg.p_eval);
  r.get("curve_spacing", cfg.curve_spacing);
  std::string out;
  r.get("output_dir", out);
  cfg.output_dir = out;
  r.finish();
  validated([&] { cfg.validate(); });
  return cfg;
}

GridConfig grid_config_from_json(const Json& doc) {
  Reader r(doc, "");
  check_schema(r);
  GridConfig cfg;
  std::vector<std::string> names;
  for (Preset a : cfg.algorithms) names.emplace_back(preset_name(a));
  r.get("algorithms", names);
  cfg.algorithms.clear();
  for (std::size_t i = 0; i < names.size(); ++i) {
    try {
      cfg.algorithms.push_back(parse_preset(names[i]));
    } catch (const ContractError& e) {
      throw ConfigError("algorithms[" + std::to_string(i) + "]", e.what());
    }
  }
  r.get("p_values", cfg.p_values);
  r.get("runs_per_cell", cfg.runs_per_cell);
  r.get("base_seed", cfg.base_seed);
  r.get("episode_budget", cfg.episode_budget);
  if (const Json* env = r.child("env")) read_env(*env, "env", cfg.env);
  if (const Json* j = r.child("ppo_mlp")) read_ppo(*j, "ppo_mlp", cfg.ppo_mlp);
  if (const Json* j = r.child("ppo_deep")) read_ppo(*j, "ppo_deep", cfg.ppo_deep);
  if (const Json* j = r.child("cmaes")) read_cmaes(*j, "cmaes", cfg.cmaes);
  r.get("reeval_episodes", cfg.reeval_episodes);
  r.get("p_eval", cfg.p_eval);
  std::string out;
  r.get("output_dir", out);
  cfg.output_dir = out;
  r.get("workers", cfg.workers);
  r.finish();
  validated([&] { cfg.validate(); });
  return cfg;
}

Json parse_json_text(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    std::string what = e.what();
    const auto pos = what.find("syntax error");
    throw ConfigError("", pos == std::string::npos ? what : what.substr(pos),
                      line_of(text, e.byte == 0 ? 0 : e.byte - 1));
  }
}

Json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str());
}

void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("", "override must look like key=value: '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));

  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component in override");
    if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

ConfigError locate(const ConfigError& err, std::string_view source) {
  if (err.line() || err.field().empty()) return err;
  std::string leaf = err.field();
  if (const auto dot = leaf.rfind('.'); dot != std::string::npos) leaf = leaf.substr(dot + 1);
  if (const auto br = leaf.find('['); br != std::string::npos) leaf = leaf.substr(0, br);
  const auto pos = source.find("\"" + leaf + "\"");
  if (pos == std::string_view::npos) return err;
  std::string msg = err.what();
  if (const auto colon = msg.find(": "); colon != std::string::npos && colon == err.field().size())
    msg = msg.substr(colon + 2);
  return ConfigError(err.field(), msg, line_of(source, pos));
}

}  // namespace rse
