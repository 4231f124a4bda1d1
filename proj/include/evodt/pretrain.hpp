#pragma once

// Behavior cloning toward a scripted teacher, optimized by ES on an
// imitation loss instead of gradients.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evodt/envs.hpp"
#include "evodt/nn.hpp"
#include "evodt/vbn.hpp"

namespace evodt::pretrain {

struct TeacherRecord {
  std::uint32_t episode = 0;
  std::uint32_t step = 0;
  std::vector<double> obs;
  std::vector<double> action;
  double rtg = 0.0;     // scaled return still to come, including this step's reward
  double reward = 0.0;  // unscaled

  bool operator==(const TeacherRecord&) const = default;
};

struct TeacherDataset {
  std::string source;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  double rtg_scale = 1.0;
  std::vector<std::uint64_t> seeds;
  std::vector<TeacherRecord> records;

  bool operator==(const TeacherDataset&) const = default;
};

/// One record per teacher step. Throws ContractError on an empty seed list.
TeacherDataset collect_teacher_dataset(envs::Agent& teacher, const std::string& teacher_name, envs::Env& env,
                                       std::span<const std::uint64_t> seeds, double rtg_scale);

/// -mean over records of the squared L2 action error. DT policies see the
/// teacher's own history replayed into their context. Records are grouped
/// by (episode, step), so the input order does not matter.
double imitation_fitness(std::span<const double> params, const nn::PolicySpec& spec, const TeacherDataset& data,
                         const es::VbnStats* vbn = nullptr);

/// Observation statistics of every record.
es::VbnStats dataset_obs_stats(const TeacherDataset& data);

void save_dataset(const TeacherDataset& data, const std::filesystem::path& path);
TeacherDataset load_dataset(const std::filesystem::path& path);

}  // namespace evodt::pretrain
