#pragma once

// Run configuration: plain `key = value` lines, `#` comments. Unknown keys
// are errors. The hyperparameter names follow the usual OpenAI-ES table
// (size_of_population, noise_deviation, ...); everything else is artifact
// plumbing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evodt/decision_transformer.hpp"
#include "evodt/es.hpp"
#include "evodt/nn.hpp"
#include "evodt/objective.hpp"

namespace evodt::config {

enum class Transport { kInProc, kTcp };
enum class ObjectiveKind { kReward, kImitation };

struct RunConfig {
  std::optional<double> rtg;  // unscaled; defaults per environment
  std::size_t size_of_population = 100;
  std::size_t num_of_iterations = 100;
  double noise_deviation = 0.02;
  double weight_decay_factor = 0.995;
  std::size_t batch_size = 100;
  double update_vbn_stats_probability = 0.01;
  es::OptimizerKind optimizer = es::OptimizerKind::kSgdMomentum;
  double learning_rate = 0.05;
  double momentum = 0.9;

  std::string env = "point_target";
  nn::PolicyKind policy = nn::PolicyKind::kDecisionTransformer;
  std::vector<std::size_t> hidden_layers = {32, 32};
  std::size_t embed_dim = 16;
  std::size_t n_layers = 1;
  std::size_t n_heads = 2;
  std::size_t context_len = 4;
  std::size_t max_episode_len = 64;
  std::optional<double> rtg_scale;
  bool use_vbn = true;

  std::size_t episodes_per_eval = 1;
  std::size_t eval_episodes = 20;
  dist::FitnessMode fitness = dist::FitnessMode::kMeanReturn;
  double rtg_alpha = 0.5;
  double rtg_sigma = 0.0;

  ObjectiveKind objective = ObjectiveKind::kReward;
  std::size_t pretrain_episodes = 8;
  std::string dataset_path;
  std::string init_checkpoint;

  std::size_t workers = 1;
  Transport transport = Transport::kInProc;
  std::string listen_addr = "127.0.0.1:0";
  double worker_timeout_s = 600.0;

  std::uint64_t master_seed = 0;
  std::size_t noise_table_size = std::size_t{1} << 22;
  std::string checkpoint_dir;
  std::string log_path;

  bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError naming the key on unknown keys or bad values.
void set_key(RunConfig& cfg, std::string_view key, std::string_view value);

/// All recognised keys in canonical order.
std::vector<std::string> key_names();

/// Halves (or otherwise scales) the population, rounding down to an even
/// size; batch_size is clamped to the new population.
void scale_population(RunConfig& cfg, double factor);

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Throws ConfigError on inconsistent settings.
void validate(const RunConfig& cfg);

/// Every key with its resolved value (environment defaults filled in), one
/// per line in a fixed order. parse_config(resolved_text(c)) resolves to c.
std::string resolved_text(const RunConfig& cfg);

/// The resolved configuration as a single-line JSON object.
std::string resolved_json(const RunConfig& cfg);

/// FNV-1a of the resolved text without the deployment keys (workers,
/// transport, addresses, output paths).
std::uint64_t config_digest(const RunConfig& cfg);

double resolved_rtg(const RunConfig& cfg);
double resolved_rtg_scale(const RunConfig& cfg);

nn::PolicySpec policy_spec(const RunConfig& cfg);
dt::RtgConfig rtg_config(const RunConfig& cfg);
es::EsHyper es_hyper(const RunConfig& cfg);
dist::EnvObjectiveConfig env_objective(const RunConfig& cfg);

// Seeds derived from master_seed.
std::uint64_t noise_seed(const RunConfig& cfg);
std::uint64_t init_seed(const RunConfig& cfg);
std::uint64_t sampling_seed(const RunConfig& cfg);

}  // namespace evodt::config
