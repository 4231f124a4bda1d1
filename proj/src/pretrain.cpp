#include "evodt/pretrain.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>

#include "evodt/bytes.hpp"
#include "evodt/decision_transformer.hpp"
#include "evodt/errors.hpp"

namespace evodt::pretrain {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'E', 'D', 'T', 'D'};
constexpr std::uint32_t kVersion = 1;

double squared_error(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Record indices ordered by (episode, step).
std::vector<std::size_t> replay_order(const TeacherDataset& data) {
  std::vector<std::size_t> idx(data.records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = data.records[a];
    const auto& rb = data.records[b];
    return ra.episode != rb.episode ? ra.episode < rb.episode : ra.step < rb.step;
  });
  return idx;
}

}  // namespace

TeacherDataset collect_teacher_dataset(envs::Agent& teacher, const std::string& teacher_name, envs::Env& env,
                                       std::span<const std::uint64_t> seeds, double rtg_scale) {
  if (seeds.empty()) throw ContractError("teacher dataset needs at least one episode");
  if (!(rtg_scale > 0.0)) throw ContractError("rtg scale must be positive");
  TeacherDataset data;
  data.source = teacher_name;
  data.obs_dim = env.obs_dim();
  data.act_dim = env.act_dim();
  data.rtg_scale = rtg_scale;
  data.seeds.assign(seeds.begin(), seeds.end());
  for (std::size_t ep = 0; ep < seeds.size(); ++ep) {
    const auto r = envs::rollout(teacher, env, seeds[ep], dt::RtgConfig{0.0, rtg_scale}, true);
    // Return still to come, summed backwards so each record includes its own reward.
    std::vector<double> to_go(r.trajectory.size() + 1, 0.0);
    for (std::size_t t = r.trajectory.size(); t-- > 0;) to_go[t] = to_go[t + 1] + r.trajectory[t].reward;
    for (std::size_t t = 0; t < r.trajectory.size(); ++t) {
      const auto& tr = r.trajectory[t];
      data.records.push_back({static_cast<std::uint32_t>(ep), static_cast<std::uint32_t>(t), tr.obs, tr.action,
                              to_go[t] / rtg_scale, tr.reward});
    }
  }
  return data;
}

double imitation_fitness(std::span<const double> params, const nn::PolicySpec& spec, const TeacherDataset& data,
                         const es::VbnStats* vbn) {
  if (data.records.empty()) throw ContractError("imitation fitness needs a nonempty dataset");
  if (data.obs_dim != spec.obs_dim || data.act_dim != spec.act_dim) {
    throw ContractError("dataset dimensions do not match the policy");
  }
  const auto order = replay_order(data);
  double total = 0.0;
  if (spec.kind == nn::PolicyKind::kFeedforward) {
    const auto mlp = nn::unflatten_mlp(params, spec);
    std::vector<double> x(spec.obs_dim);
    for (std::size_t i : order) {
      const auto& rec = data.records[i];
      if (vbn != nullptr) {
        es::vbn_normalize_into(*vbn, rec.obs, x);
      } else {
        x = rec.obs;
      }
      total += squared_error(nn::mlp_forward(mlp, x), rec.action);
    }
  } else {
    const auto view = nn::unflatten_dt(params, spec);
    std::optional<dt::EpisodeContext> ctx;
    std::uint32_t episode = 0;
    for (std::size_t i : order) {
      const auto& rec = data.records[i];
      if (!ctx || rec.episode != episode) {
        ctx = dt::init_context(dt::RtgConfig{rec.rtg * data.rtg_scale, data.rtg_scale}, spec.context_len);
        episode = rec.episode;
      }
      ctx->set_pending_rtg(rec.rtg);
      total += squared_error(dt::act(view, *ctx, rec.obs, vbn), rec.action);
      ctx->record_step(rec.obs, rec.action, rec.reward);
    }
  }
  return -total / static_cast<double>(data.records.size());
}

es::VbnStats dataset_obs_stats(const TeacherDataset& data) {
  std::vector<double> batch;
  batch.reserve(data.records.size() * data.obs_dim);
  for (const auto& r : data.records) batch.insert(batch.end(), r.obs.begin(), r.obs.end());
  return es::vbn_from_batch(batch, data.obs_dim);
}

void save_dataset(const TeacherDataset& data, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.str(data.source);
  w.u32(static_cast<std::uint32_t>(data.obs_dim));
  w.u32(static_cast<std::uint32_t>(data.act_dim));
  w.f64(data.rtg_scale);
  w.u64(data.seeds.size());
  for (auto s : data.seeds) w.u64(s);
  w.u64(data.records.size());
  for (const auto& r : data.records) {
    if (r.obs.size() != data.obs_dim || r.action.size() != data.act_dim) {
      throw ContractError("dataset record has inconsistent dimensions");
    }
    w.u32(r.episode);
    w.u32(r.step);
    for (double x : r.obs) w.f64(x);
    for (double x : r.action) w.f64(x);
    w.f64(r.rtg);
    w.f64(r.reward);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  const Bytes& b = w.bytes();
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw ConfigError("failed writing dataset " + path.string());
}

TeacherDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read dataset " + path.string());
  const Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  const auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw DecodeError(DecodeError::Kind::kBadMagic, path.string() + " is not a teacher dataset");
  }
  if (r.u32() != kVersion) throw DecodeError(DecodeError::Kind::kBadValue, "unsupported dataset version");
  TeacherDataset d;
  d.source = r.str();
  d.obs_dim = r.u32();
  d.act_dim = r.u32();
  d.rtg_scale = r.f64();
  const std::uint64_t n_seeds = r.u64();
  if (n_seeds > r.remaining() / 8) throw DecodeError(DecodeError::Kind::kTruncated, "dataset seeds truncated");
  d.seeds.resize(n_seeds);
  for (auto& s : d.seeds) s = r.u64();
  const std::uint64_t n = r.u64();
  const std::size_t rec_size = 8 + 8 * (d.obs_dim + d.act_dim + 2);
  if (n > r.remaining() / rec_size) throw DecodeError(DecodeError::Kind::kTruncated, "dataset records truncated");
  d.records.resize(n);
  for (auto& rec : d.records) {
    rec.episode = r.u32();
    rec.step = r.u32();
    rec.obs.resize(d.obs_dim);
    for (auto& x : rec.obs) x = r.f64();
    rec.action.resize(d.act_dim);
    for (auto& x : rec.action) x = r.f64();
    rec.rtg = r.f64();
    rec.reward = r.f64();
  }
  if (!r.done()) throw DecodeError(DecodeError::Kind::kLengthOverflow, "trailing bytes in dataset");
  return d;
}

}  // namespace evodt::pretrain
