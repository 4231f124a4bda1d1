#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "evodt/checkpoint.hpp"
#include "evodt/config.hpp"
#include "evodt/envs.hpp"
#include "evodt/errors.hpp"
#include "evodt/es.hpp"
#include "evodt/nn.hpp"
#include "evodt/trainer.hpp"

namespace py = pybind11;
using namespace evodt;

namespace {

py::dict record_dict(const train::IterationRecord& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["eval_return"] = r.eval_return;
  d["best_so_far"] = r.best_so_far;
  d["mean_pop_fitness"] = r.mean_pop_fitness;
  d["wall_clock_s"] = r.wall_clock_s;
  d["bytes_sent"] = r.bytes_sent;
  return d;
}

py::dict state_dict(const es::EsState& s) {
  py::dict d;
  d["theta"] = s.theta.values;
  d["sigma"] = s.sigma;
  d["iteration"] = s.iteration;
  d["rng_seed"] = s.rng_seed;
  d["vbn_count"] = s.vbn.count;
  d["vbn_mean"] = s.vbn.mean;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Evolution strategies for decision transformer policies";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DecodeError>(m, "DecodeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

  py::enum_<nn::PolicyKind>(m, "PolicyKind")
      .value("feedforward", nn::PolicyKind::kFeedforward)
      .value("decision_transformer", nn::PolicyKind::kDecisionTransformer);

  py::class_<nn::PolicySpec>(m, "PolicySpec")
      .def_readonly("kind", &nn::PolicySpec::kind)
      .def_readonly("obs_dim", &nn::PolicySpec::obs_dim)
      .def_readonly("act_dim", &nn::PolicySpec::act_dim)
      .def_readonly("hidden_layers", &nn::PolicySpec::hidden_layers)
      .def_readonly("embed_dim", &nn::PolicySpec::embed_dim)
      .def_readonly("n_layers", &nn::PolicySpec::n_layers)
      .def_readonly("n_heads", &nn::PolicySpec::n_heads)
      .def_readonly("context_len", &nn::PolicySpec::context_len)
      .def_readonly("max_episode_len", &nn::PolicySpec::max_episode_len)
      .def(py::self == py::self)
      .def("__repr__", [](const nn::PolicySpec& s) {
        std::ostringstream os;
        os << "PolicySpec(" << (s.kind == nn::PolicyKind::kFeedforward ? "feedforward" : "decision_transformer")
           << ", obs_dim=" << s.obs_dim << ", act_dim=" << s.act_dim << ", params=" << nn::param_count(s) << ")";
        return os.str();
      });

  m.def("feedforward_spec", &nn::feedforward_spec, py::arg("obs_dim"), py::arg("hidden"), py::arg("act_dim"));
  m.def("decision_transformer_spec", &nn::decision_transformer_spec, py::arg("obs_dim"), py::arg("act_dim"),
        py::arg("embed_dim") = 16, py::arg("n_layers") = 1, py::arg("n_heads") = 2, py::arg("context_len") = 4,
        py::arg("max_episode_len") = 64);
  m.def("param_count", &nn::param_count);
  m.def(
      "init_params", [](const nn::PolicySpec& spec, std::uint64_t seed) { return nn::init_params(spec, seed).values; },
      py::arg("spec"), py::arg("seed"));

  m.def(
      "centered_ranks", [](const std::vector<double>& f) { return es::centered_ranks(f); },
      "Rank / (n - 1) - 0.5; ties share their mean rank.");

  m.def(
      "rollout",
      [](const std::string& env_name, const std::vector<double>& params, const nn::PolicySpec& spec,
         std::uint64_t seed, double rtg, double rtg_scale) {
        auto env = envs::make_env(env_name);
        auto agent = envs::make_policy_agent(params, spec);
        const auto r = envs::rollout(*agent, *env, seed, {rtg, rtg_scale});
        return py::make_tuple(r.total_return, r.steps);
      },
      py::arg("env"), py::arg("params"), py::arg("spec"), py::arg("seed"), py::arg("rtg"), py::arg("rtg_scale"),
      "Total return and step count of one episode.");
  m.def(
      "teacher_return",
      [](const std::string& env_name, const std::vector<std::uint64_t>& seeds) {
        auto env = envs::make_env(env_name);
        auto teacher = envs::make_scripted_agent(env_name);
        const auto d = envs::env_defaults(env_name);
        return envs::evaluate(*teacher, *env, seeds, {d.rtg, d.rtg_scale});
      },
      py::arg("env"), py::arg("seeds"), "Mean return of the scripted teacher.");
  m.def(
      "eval_seeds", [](std::size_t n) { return train::eval_seeds(n); }, py::arg("n"));

  m.def(
      "resolve_config", [](const std::string& text) { return config::resolved_text(config::parse_config(text)); },
      py::arg("text"), "Every key with its resolved value.");
  m.def(
      "policy_spec", [](const std::string& text) { return config::policy_spec(config::parse_config(text)); },
      py::arg("config"));
  m.def(
      "train",
      [](const std::string& text) {
        auto cfg = config::parse_config(text);
        config::validate(cfg);
        train::TrainResult r;
        {
          py::gil_scoped_release release;
          r = train::run_training(cfg);
        }
        py::list records;
        for (const auto& rec : r.records) records.append(record_dict(rec));
        py::dict out;
        out["spec"] = r.spec;
        out["initial_eval"] = r.initial_eval;
        out["records"] = records;
        out["final_state"] = state_dict(r.final_state);
        return out;
      },
      py::arg("config"), "Runs a training job described by config text.");

  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        const auto c = checkpoint::load(path);
        py::dict d = state_dict(c.state);
        d["spec"] = c.spec;
        d["config_digest"] = c.config_digest;
        return d;
      },
      py::arg("path"));
  m.def(
      "checkpoint_bytes",
      [](const std::filesystem::path& path) {
        const auto b = checkpoint::serialize(checkpoint::load(path));
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      },
      py::arg("path"), "Re-serialized bytes of a checkpoint file.");
  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& path, const std::string& config_text) {
        const auto cfg = config::parse_config(config_text);
        const auto c = checkpoint::load(path);
        return train::episode_returns(c.spec, c.state, cfg.env,
                                      config::rtg_config(cfg), cfg.use_vbn,
                                      train::eval_seeds(cfg.eval_episodes));
      },
      py::arg("path"), py::arg("config") = "",
      "Per-episode returns on the held-out seeds, with env and rtg taken from config.");
}
