#include "evodt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "evodt/envs.hpp"
#include "evodt/errors.hpp"
#include "evodt/transport.hpp"

namespace evodt::config {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string unquote(std::string_view v) {
  v = trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    v = v.substr(1, v.size() - 2);
  }
  return std::string(v);
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view why) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + ": " + std::string(why));
}

std::uint64_t as_u64(std::string_view key, std::string_view raw) {
  const std::string v = unquote(raw);
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, raw, "expected a non-negative integer");
  return out;
}

std::size_t as_size(std::string_view key, std::string_view raw) { return static_cast<std::size_t>(as_u64(key, raw)); }

double as_double(std::string_view key, std::string_view raw) {
  const std::string v = unquote(raw);
  double out = 0.0;
  const char* first = v.data();
  if (!v.empty() && v.front() == '+') ++first;
  const auto [p, ec] = std::from_chars(first, v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad(key, raw, "expected a number");
  return out;
}

bool as_bool(std::string_view key, std::string_view raw) {
  const std::string v = unquote(raw);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, raw, "expected true or false");
}

std::vector<std::size_t> as_list(std::string_view key, std::string_view raw) {
  std::string_view v = trim(raw);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') bad(key, raw, "expected a list like [32, 32]");
  v = trim(v.substr(1, v.size() - 2));
  std::vector<std::size_t> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(as_size(key, v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v = trim(v.substr(comma + 1));
  }
  return out;
}

std::string fmt(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  (void)ec;
  return std::string(buf, p);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s + "]";
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(field)                                                                      \
  Key {                                                                                      \
    #field, [](RunConfig& c, std::string_view v) { c.field = as_size(#field, v); },          \
        [](const RunConfig& c) { return std::to_string(c.field); }                           \
  }
#define REAL_KEY(field)                                                                      \
  Key {                                                                                      \
    #field, [](RunConfig& c, std::string_view v) { c.field = as_double(#field, v); },        \
        [](const RunConfig& c) { return fmt(c.field); }                                      \
  }
#define TEXT_KEY(field)                                                                      \
  Key {                                                                                      \
    #field, [](RunConfig& c, std::string_view v) { c.field = unquote(v); },                  \
        [](const RunConfig& c) { return quoted(c.field); }                                   \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"rtg", [](RunConfig& c, std::string_view v) { c.rtg = as_double("rtg", v); },
       [](const RunConfig& c) { return fmt(resolved_rtg(c)); }},
      SIZE_KEY(size_of_population),
      SIZE_KEY(num_of_iterations),
      REAL_KEY(noise_deviation),
      REAL_KEY(weight_decay_factor),
      SIZE_KEY(batch_size),
      REAL_KEY(update_vbn_stats_probability),
      {"optimizer",
       [](RunConfig& c, std::string_view v) {
         const std::string s = unquote(v);
         if (s == "sgdm" || s == "SGDM") {
           c.optimizer = es::OptimizerKind::kSgdMomentum;
         } else if (s == "adam" || s == "Adam") {
           c.optimizer = es::OptimizerKind::kAdam;
         } else {
           bad("optimizer", v, "expected sgdm or adam");
         }
       },
       [](const RunConfig& c) { return quoted(c.optimizer == es::OptimizerKind::kAdam ? "adam" : "sgdm"); }},
      REAL_KEY(learning_rate),
      REAL_KEY(momentum),
      TEXT_KEY(env),
      {"policy",
       [](RunConfig& c, std::string_view v) {
         const std::string s = unquote(v);
         if (s == "feedforward") {
           c.policy = nn::PolicyKind::kFeedforward;
         } else if (s == "decision_transformer") {
           c.policy = nn::PolicyKind::kDecisionTransformer;
         } else {
           bad("policy", v, "expected feedforward or decision_transformer");
         }
       },
       [](const RunConfig& c) {
         return quoted(c.policy == nn::PolicyKind::kFeedforward ? "feedforward" : "decision_transformer");
       }},
      {"hidden_layers", [](RunConfig& c, std::string_view v) { c.hidden_layers = as_list("hidden_layers", v); },
       [](const RunConfig& c) { return fmt_list(c.hidden_layers); }},
      SIZE_KEY(embed_dim),
      SIZE_KEY(n_layers),
      SIZE_KEY(n_heads),
      SIZE_KEY(context_len),
      SIZE_KEY(max_episode_len),
      {"rtg_scale", [](RunConfig& c, std::string_view v) { c.rtg_scale = as_double("rtg_scale", v); },
       [](const RunConfig& c) { return fmt(resolved_rtg_scale(c)); }},
      {"use_vbn", [](RunConfig& c, std::string_view v) { c.use_vbn = as_bool("use_vbn", v); },
       [](const RunConfig& c) { return std::string(c.use_vbn ? "true" : "false"); }},
      SIZE_KEY(episodes_per_eval),
      SIZE_KEY(eval_episodes),
      {"fitness",
       [](RunConfig& c, std::string_view v) {
         const std::string s = unquote(v);
         if (s == "mean_return") {
           c.fitness = dist::FitnessMode::kMeanReturn;
         } else if (s == "rtg_conditioned") {
           c.fitness = dist::FitnessMode::kRtgConditioned;
         } else {
           bad("fitness", v, "expected mean_return or rtg_conditioned");
         }
       },
       [](const RunConfig& c) {
         return quoted(c.fitness == dist::FitnessMode::kMeanReturn ? "mean_return" : "rtg_conditioned");
       }},
      REAL_KEY(rtg_alpha),
      REAL_KEY(rtg_sigma),
      {"objective",
       [](RunConfig& c, std::string_view v) {
         const std::string s = unquote(v);
         if (s == "reward") {
           c.objective = ObjectiveKind::kReward;
         } else if (s == "imitation") {
           c.objective = ObjectiveKind::kImitation;
         } else {
           bad("objective", v, "expected reward or imitation");
         }
       },
       [](const RunConfig& c) { return quoted(c.objective == ObjectiveKind::kReward ? "reward" : "imitation"); }},
      SIZE_KEY(pretrain_episodes),
      TEXT_KEY(dataset_path),
      TEXT_KEY(init_checkpoint),
      SIZE_KEY(workers),
      {"transport",
       [](RunConfig& c, std::string_view v) {
         const std::string s = unquote(v);
         if (s == "inproc") {
           c.transport = Transport::kInProc;
         } else if (s == "tcp") {
           c.transport = Transport::kTcp;
         } else {
           bad("transport", v, "expected inproc or tcp");
         }
       },
       [](const RunConfig& c) { return quoted(c.transport == Transport::kInProc ? "inproc" : "tcp"); }},
      TEXT_KEY(listen_addr),
      REAL_KEY(worker_timeout_s),
      {"master_seed", [](RunConfig& c, std::string_view v) { c.master_seed = as_u64("master_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.master_seed); }},
      SIZE_KEY(noise_table_size),
      TEXT_KEY(checkpoint_dir),
      TEXT_KEY(log_path),
  };
  return table;
}

#undef SIZE_KEY
#undef REAL_KEY
#undef TEXT_KEY

}  // namespace

void set_key(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::string> key_names() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.emplace_back(k.name);
  return out;
}

void scale_population(RunConfig& cfg, double factor) {
  if (!(factor > 0.0)) throw ConfigError("population scale must be positive");
  const auto n = static_cast<std::size_t>(static_cast<double>(cfg.size_of_population) * factor);
  cfg.size_of_population = n - n % 2;
  if (cfg.size_of_population == 0) throw ConfigError("scaled population is empty");
  cfg.batch_size = std::min(cfg.batch_size, cfg.size_of_population);
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    // Comments may not start inside a quoted value.
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

double resolved_rtg(const RunConfig& cfg) { return cfg.rtg ? *cfg.rtg : envs::env_defaults(cfg.env).rtg; }

double resolved_rtg_scale(const RunConfig& cfg) {
  return cfg.rtg_scale ? *cfg.rtg_scale : envs::env_defaults(cfg.env).rtg_scale;
}

void validate(const RunConfig& cfg) {
  envs::env_defaults(cfg.env);  // throws on an unknown environment
  if (cfg.size_of_population == 0 || cfg.size_of_population % 2 != 0) {
    throw ConfigError("size_of_population must be even and positive");
  }
  if (!(cfg.noise_deviation > 0.0)) throw ConfigError("noise_deviation must be positive");
  if (cfg.batch_size == 0 || cfg.batch_size > cfg.size_of_population) {
    throw ConfigError("batch_size must be in [1, size_of_population]");
  }
  if (!(cfg.weight_decay_factor > 0.0 && cfg.weight_decay_factor <= 1.0)) {
    throw ConfigError("weight_decay_factor must be in (0, 1]");
  }
  if (!(cfg.update_vbn_stats_probability >= 0.0 && cfg.update_vbn_stats_probability <= 1.0)) {
    throw ConfigError("update_vbn_stats_probability must be in [0, 1]");
  }
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(resolved_rtg_scale(cfg) > 0.0)) throw ConfigError("rtg_scale must be positive");
  if (cfg.episodes_per_eval == 0) throw ConfigError("episodes_per_eval must be positive");
  if (cfg.eval_episodes == 0) throw ConfigError("eval_episodes must be positive");
  if (cfg.workers == 0) throw ConfigError("workers must be positive");
  if (!(cfg.rtg_alpha >= 0.0 && cfg.rtg_alpha <= 1.0)) throw ConfigError("rtg_alpha must be in [0, 1]");
  if (!(cfg.rtg_sigma >= 0.0)) throw ConfigError("rtg_sigma must be non-negative");
  if (!(cfg.worker_timeout_s > 0.0)) throw ConfigError("worker_timeout_s must be positive");
  if (cfg.fitness == dist::FitnessMode::kRtgConditioned && cfg.policy != nn::PolicyKind::kDecisionTransformer) {
    throw ConfigError("rtg_conditioned fitness needs a decision_transformer policy");
  }
  if (cfg.objective == ObjectiveKind::kImitation && cfg.pretrain_episodes == 0 && cfg.dataset_path.empty()) {
    throw ConfigError("imitation needs pretrain_episodes > 0 or a dataset_path");
  }
  if (cfg.transport == Transport::kTcp) dist::parse_endpoint(cfg.listen_addr);
  const auto spec = policy_spec(cfg);
  spec.validate();
  if (cfg.noise_table_size < nn::param_count(spec)) {
    throw ConfigError("noise_table_size is smaller than the parameter count");
  }
  const auto env = envs::make_env(cfg.env);
  if (spec.kind == nn::PolicyKind::kDecisionTransformer && spec.max_episode_len < env->max_steps()) {
    throw ConfigError("max_episode_len is shorter than the environment horizon");
  }
}

std::string resolved_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

std::string resolved_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& k : keys()) {
    const std::string v = k.get(cfg);
    if (!v.empty() && v.front() == '"') {
      j[k.name] = v.substr(1, v.size() - 2);
    } else if (!v.empty() && v.front() == '[') {
      j[k.name] = cfg.hidden_layers;
    } else if (v == "true" || v == "false") {
      j[k.name] = v == "true";
    } else {
      j[k.name] = nlohmann::ordered_json::parse(v);
    }
  }
  return j.dump();
}

std::uint64_t config_digest(const RunConfig& cfg) {
  // Deployment keys do not change the results, so they stay out of the digest.
  RunConfig c = cfg;
  const RunConfig d;
  c.workers = d.workers;
  c.transport = d.transport;
  c.listen_addr = d.listen_addr;
  c.worker_timeout_s = d.worker_timeout_s;
  c.checkpoint_dir = d.checkpoint_dir;
  c.log_path = d.log_path;
  const std::string text = resolved_text(c);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

nn::PolicySpec policy_spec(const RunConfig& cfg) {
  const auto env = envs::make_env(cfg.env);
  if (cfg.policy == nn::PolicyKind::kFeedforward) {
    return nn::feedforward_spec(env->obs_dim(), cfg.hidden_layers, env->act_dim());
  }
  return nn::decision_transformer_spec(env->obs_dim(), env->act_dim(), cfg.embed_dim, cfg.n_layers, cfg.n_heads,
                                       cfg.context_len, cfg.max_episode_len);
}

dt::RtgConfig rtg_config(const RunConfig& cfg) { return {resolved_rtg(cfg), resolved_rtg_scale(cfg)}; }

es::EsHyper es_hyper(const RunConfig& cfg) {
  es::EsHyper h;
  h.optimizer.kind = cfg.optimizer;
  h.optimizer.learning_rate = cfg.learning_rate;
  h.optimizer.momentum = cfg.momentum;
  h.weight_decay_factor = cfg.weight_decay_factor;
  h.batch_size = cfg.batch_size;
  return h;
}

dist::EnvObjectiveConfig env_objective(const RunConfig& cfg) {
  dist::EnvObjectiveConfig o;
  o.env = cfg.env;
  o.spec = policy_spec(cfg);
  o.rtg = rtg_config(cfg);
  o.fitness = cfg.fitness;
  o.use_vbn = cfg.use_vbn;
  o.vbn_probability = cfg.update_vbn_stats_probability;
  return o;
}

std::uint64_t noise_seed(const RunConfig& cfg) { return es::mix_seed(cfg.master_seed, 1); }
std::uint64_t init_seed(const RunConfig& cfg) { return es::mix_seed(cfg.master_seed, 2); }
std::uint64_t sampling_seed(const RunConfig& cfg) { return es::mix_seed(cfg.master_seed, 3); }

}  // namespace evodt::config
