// Command-line front end: data collection, model training, rollout
// benchmarking, agent training, canned studies, and rollout galleries.

#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "imagine/harness/study.hpp"

namespace {

using namespace imagine;

EnvConfig env_from_name(const std::string& name, int action_repeat) {
  EnvConfig cfg;
  if (name == "bouncing-ball") {
    cfg.kind = EnvKind::BouncingBall;
  } else if (name == "mini-pacman") {
    cfg.kind = EnvKind::MiniPacman;
  } else {
    IM_CHECK(false, "unknown env " + name + " (bouncing-ball | mini-pacman)");
  }
  cfg.action_repeat = action_repeat;
  return cfg;
}

int cmd_collect(const std::string& env_name, const std::string& policy_name, int count,
                int T, int action_repeat, int jumpy_c, uint64_t seed,
                const std::string& out) {
  EnvConfig cfg = env_from_name(env_name, action_repeat);
  auto env = make_env(cfg);
  auto policy = make_policy(policy_name);
  IM_CHECK(jumpy_c >= 1 && T % jumpy_c == 0, "jumpy factor must divide T");
  Dataset ds(T / jumpy_c, cfg.height, cfg.width, env->action_count() * jumpy_c);
  long raw_steps = 0;
  int remaining = count;
  uint64_t chunk_seed = seed;
  while (remaining > 0) {
    auto res = collect_trajectories(*env, *policy, T, std::min(remaining, 50),
                                    action_repeat, chunk_seed++);
    raw_steps += res.raw_env_steps;
    for (const auto& t : res.trajectories) {
      ds.add(jumpy_c > 1 ? jumpy_preprocess(t, jumpy_c) : t);
      if (--remaining == 0) break;
    }
    if (res.budget_exhausted) {
      std::fprintf(stderr, "warning: step budget exhausted, collected %d/%d\n",
                   count - remaining, count);
      break;
    }
  }
  nlohmann::json m;
  m["env"] = cfg;
  m["seed"] = seed;
  m["T"] = T;
  m["jumpy_c"] = jumpy_c;
  m["action_repeat"] = action_repeat;
  m["data_policy"] = policy_name;
  ds.manifest()["collection"] = m;
  ds.save(out);
  std::printf("collected %d trajectories (%ld raw env steps) -> %s\n", ds.size(),
              raw_steps, out.c_str());
  return 0;
}

int cmd_train_model(const std::string& family, const std::string& data_dir, int jumpy_c,
                    int steps, int batch, double lr, double channel_scale, uint64_t seed,
                    const std::string& out) {
  Dataset data = Dataset::load(data_dir);
  ModelConfig mc;
  mc.family = family_from_name(family);
  mc.height = data.frame_height();
  mc.width = data.frame_width();
  mc.jumpy_factor = jumpy_c;
  mc.channel_scale = channel_scale;
  IM_CHECK(data.action_len() == mc.action_len(),
           "dataset action length does not match --c");
  ParamStore<float> ps(seed);
  EnvModel<float> model(mc, ps);
  TrainConfig tc;
  tc.steps = steps;
  tc.batch_size = batch;
  tc.lr = lr;
  tc.seed = seed;
  tc.out_dir = out;
  auto log = train_model(model, data, tc);
  std::printf("trained %s for %d steps, final loss %.3f -> %s\n", family.c_str(), steps,
              log.back().loss, out.c_str());
  return 0;
}

int cmd_bench(const std::string& models_arg, int tau, int batch, int reps,
              double channel_scale, const std::string& out) {
  std::vector<std::string> names;
  std::stringstream ss(models_arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) names.push_back(tok);
  IM_CHECK(!names.empty(), "--models must list at least one family");

  std::vector<std::unique_ptr<ParamStore<float>>> stores;
  std::vector<std::unique_ptr<EnvModel<float>>> models;
  std::vector<const EnvModel<float>*> ptrs;
  for (const auto& name : names) {
    ModelConfig mc;
    mc.channel_scale = channel_scale;
    std::string fam = name;
    const auto jpos = name.find(":jumpy");
    if (jpos != std::string::npos) {
      fam = name.substr(0, jpos);
      mc.jumpy_factor = std::stoi(name.substr(jpos + 6));
    }
    mc.family = family_from_name(fam);
    stores.push_back(std::make_unique<ParamStore<float>>(stores.size() + 1));
    models.push_back(std::make_unique<EnvModel<float>>(mc, *stores.back()));
    ptrs.push_back(models.back().get());
  }
  BenchConfig bc;
  bc.depth = tau;
  bc.batch = batch;
  bc.repetitions = reps;
  auto report = benchmark_rollouts<float>(ptrs, bc);
  if (!out.empty()) report.write_csv(out);
  std::printf("%-16s %10s %12s %10s\n", "family", "ms/step", "ms/env-step", "rel-speed");
  for (const auto& row : report.rows) {
    std::printf("%-16s %10.3f %12.3f %9.2fx\n",
                (row.family + (row.jumpy_factor > 1 ? ":jumpy" : "")).c_str(),
                row.per_step_ms, row.per_env_step_ms, row.rel_speed);
  }
  return 0;
}

int cmd_train_agent(const std::string& variant, const std::string& regime,
                    const std::string& model_ckpt, const std::string& env_name,
                    int action_repeat, int K, int tau, double lambda_d, long steps,
                    double lr, uint64_t seed, const std::string& out) {
  ParamStore<float> model_ps(1);
  std::unique_ptr<EnvModel<float>> model;
  if (!model_ckpt.empty()) {
    auto meta = load_checkpoint(model_ps, model_ckpt);
    ModelConfig mc = meta.at("model").get<ModelConfig>();
    model = std::make_unique<EnvModel<float>>(mc, model_ps);
  }
  AgentConfig acfg;
  acfg.variant = variant == "modulation" ? AgentVariant::I2aState
                                         : variant_from_name(variant);
  acfg.regime = regime_from_name(variant == "modulation" ? "modulation" : regime);
  acfg.rollout_count = K;
  acfg.rollout_depth = tau;
  acfg.lambda_distill = lambda_d;
  ParamStore<float> agent_ps(seed);
  Agent<float> agent(acfg, agent_ps, model.get());

  EnvConfig env_cfg = env_from_name(env_name, action_repeat);
  auto env = make_env(env_cfg);
  A2CConfig tcfg;
  tcfg.action_repeat = action_repeat;
  tcfg.total_env_steps = steps;
  tcfg.lr = lr;
  tcfg.seed = seed;
  tcfg.out_dir = out;
  A2CTrainer<float> trainer(agent, *env, tcfg);
  auto rows = trainer.run();
  std::printf("trained %s/%s for %ld env steps, mean return %.3f -> %s\n",
              variant.c_str(), regime.c_str(), trainer.env_steps(),
              rows.back().mean_return, out.c_str());
  return 0;
}

int cmd_study(const std::string& name, const std::string& spec_path,
              const std::string& out, bool replot) {
  if (replot) {
    plot_agent_study(out);
    std::printf("re-rendered plots in %s\n", out.c_str());
    return 0;
  }
  ExperimentSpec spec;
  if (!spec_path.empty()) {
    spec = load_spec(spec_path);
    if (!out.empty()) spec.out_dir = out;
  } else if (name == "model-comparison") {
    spec = canned_model_study(out);
  } else if (name == "agent-comparison") {
    spec = canned_agent_study(out);
  } else {
    IM_CHECK(false, "unknown study " + name + " (model-comparison | agent-comparison)");
  }
  if (spec.study == "model-comparison") {
    auto result = run_model_study<float>(spec);
    for (const auto& [fam, ms] : result.improvements) {
      std::printf("%-14s improvement %8.2f +- %.2f (1e-3 nats/pixel)\n", fam.c_str(),
                  ms.first, ms.second);
    }
  } else {
    auto result = run_agent_study<float>(spec);
    for (const auto& [label, ret] : result.final_returns) {
      std::printf("%-28s median final return %8.3f\n", label.c_str(), ret);
    }
  }
  std::printf("study artifacts in %s\n", spec.out_dir.c_str());
  return 0;
}

int cmd_gallery(const std::string& det_ckpt, const std::string& stoch_ckpt,
                const std::string& data_dir, int K, int tau, uint64_t seed,
                const std::string& out) {
  Dataset data = Dataset::load(data_dir);
  ParamStore<float> det_ps(1), sto_ps(2);
  auto det_meta = load_checkpoint(det_ps, det_ckpt);
  auto sto_meta = load_checkpoint(sto_ps, stoch_ckpt);
  EnvModel<float> det(det_meta.at("model").get<ModelConfig>(), det_ps);
  EnvModel<float> sto(sto_meta.at("model").get<ModelConfig>(), sto_ps);
  GalleryConfig gc;
  gc.depth = tau;
  gc.samples = K;
  gc.seed = seed;
  auto files = render_rollout_gallery<float>(det, sto, data, gc, out);
  for (const auto& f : files) std::printf("wrote %s\n", f.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"action-conditional environment models, fast latent rollouts, and "
               "imagination-augmented agents"};
  app.require_subcommand(1);

  // collect
  std::string c_env = "mini-pacman", c_policy = "pill-seeker", c_out = "dataset";
  int c_count = 100, c_T = 10, c_repeat = 4, c_jumpy = 1;
  uint64_t c_seed = 0;
  auto* collect = app.add_subcommand("collect", "collect a trajectory dataset");
  collect->add_option("--env", c_env, "bouncing-ball | mini-pacman");
  collect->add_option("--policy", c_policy, "uniform | pill-seeker | noop");
  collect->add_option("--count", c_count, "number of trajectories");
  collect->add_option("--T", c_T, "modeled steps per trajectory");
  collect->add_option("--action-repeat", c_repeat, "raw steps per policy action");
  collect->add_option("--jumpy-c", c_jumpy, "temporal subsampling factor");
  collect->add_option("--seed", c_seed, "rng seed");
  collect->add_option("--out", c_out, "output dataset directory")->required();

  // train-model
  std::string m_family = "sssm", m_data, m_out = "model-run";
  int m_c = 1, m_steps = 1000, m_batch = 16;
  double m_lr = 3e-4, m_scale = 0.25;
  uint64_t m_seed = 0;
  auto* train_model_cmd = app.add_subcommand("train-model", "train an environment model");
  train_model_cmd->add_option("--family", m_family,
                              "ar | rar | dssm-det | dssm-vae | sssm | sssm-uncond | "
                              "baseline-vae");
  train_model_cmd->add_option("--data", m_data, "dataset directory")->required();
  train_model_cmd->add_option("--c", m_c, "jumpy factor (must match the dataset)");
  train_model_cmd->add_option("--steps", m_steps, "optimizer steps");
  train_model_cmd->add_option("--batch", m_batch, "mini-batch size");
  train_model_cmd->add_option("--lr", m_lr, "learning rate");
  train_model_cmd->add_option("--channel-scale", m_scale, "channel width multiplier");
  train_model_cmd->add_option("--seed", m_seed, "rng seed");
  train_model_cmd->add_option("--out", m_out, "output directory")->required();

  // bench-rollout
  std::string b_models = "ar,rar,dssm-det,dssm-vae,sssm,sssm:jumpy4", b_out;
  int b_tau = 10, b_batch = 16, b_reps = 21;
  double b_scale = 1.0;
  auto* bench = app.add_subcommand("bench-rollout", "time Monte-Carlo rollouts");
  bench->add_option("--models", b_models,
                    "comma-separated families; append :jumpyC for jumpy variants");
  bench->add_option("--tau", b_tau, "rollout depth (model steps)");
  bench->add_option("--batch", b_batch, "chains per repetition");
  bench->add_option("--reps", b_reps, "timed repetitions");
  bench->add_option("--channel-scale", b_scale, "channel width multiplier");
  bench->add_option("--out", b_out, "report csv path");

  // train-agent
  std::string a_variant = "i2a-state", a_regime = "distilled", a_ckpt, a_env =
      "mini-pacman", a_out = "agent-run";
  int a_repeat = 4, a_K = 5, a_tau = 2;
  double a_lambda = 0.1, a_lr = 7e-4;
  long a_steps = 100000;
  uint64_t a_seed = 0;
  auto* train_agent_cmd = app.add_subcommand("train-agent", "train an agent variant");
  train_agent_cmd->add_option("--variant", a_variant,
                              "model-free | i2a-state | i2a-pixel | copy-baseline | "
                              "untrained-model | modulation");
  train_agent_cmd->add_option("--rollout-policy", a_regime,
                              "random | distilled | learn-to-query");
  train_agent_cmd->add_option("--model-ckpt", a_ckpt, "environment model checkpoint");
  train_agent_cmd->add_option("--env", a_env, "bouncing-ball | mini-pacman");
  train_agent_cmd->add_option("--action-repeat", a_repeat, "raw steps per decision");
  train_agent_cmd->add_option("--K", a_K, "rollouts per decision");
  train_agent_cmd->add_option("--tau", a_tau, "rollout depth");
  train_agent_cmd->add_option("--lambda-d", a_lambda, "distillation weight");
  train_agent_cmd->add_option("--steps", a_steps, "raw environment step budget");
  train_agent_cmd->add_option("--lr", a_lr, "learning rate");
  train_agent_cmd->add_option("--seed", a_seed, "rng seed");
  train_agent_cmd->add_option("--out", a_out, "output directory")->required();

  // study
  std::string s_name = "model-comparison", s_spec, s_out = "study-out";
  bool s_replot = false;
  auto* study = app.add_subcommand("study", "run a canned experiment study");
  study->add_option("--name", s_name, "model-comparison | agent-comparison");
  study->add_option("--spec", s_spec, "JSON spec file (overrides --name)");
  study->add_option("--out", s_out, "output directory");
  study->add_flag("--replot", s_replot, "re-render plots from existing metrics");

  // gallery
  std::string g_det, g_sto, g_data, g_out = "gallery";
  int g_K = 2, g_tau = 6;
  uint64_t g_seed = 0;
  auto* gallery = app.add_subcommand("gallery", "render rollout comparison strips");
  gallery->add_option("--det-ckpt", g_det, "deterministic model checkpoint")->required();
  gallery->add_option("--stoch-ckpt", g_sto, "stochastic model checkpoint")->required();
  gallery->add_option("--data", g_data, "dataset directory")->required();
  gallery->add_option("--K", g_K, "sample rollouts per context");
  gallery->add_option("--tau", g_tau, "rollout depth");
  gallery->add_option("--seed", g_seed, "rng seed");
  gallery->add_option("--out", g_out, "output directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (collect->parsed())
      return cmd_collect(c_env, c_policy, c_count, c_T, c_repeat, c_jumpy, c_seed, c_out);
    if (train_model_cmd->parsed())
      return cmd_train_model(m_family, m_data, m_c, m_steps, m_batch, m_lr, m_scale,
                             m_seed, m_out);
    if (bench->parsed()) return cmd_bench(b_models, b_tau, b_batch, b_reps, b_scale, b_out);
    if (train_agent_cmd->parsed())
      return cmd_train_agent(a_variant, a_regime, a_ckpt, a_env, a_repeat, a_K, a_tau,
                             a_lambda, a_steps, a_lr, a_seed, a_out);
    if (study->parsed()) return cmd_study(s_name, s_spec, s_out, s_replot);
    if (gallery->parsed())
      return cmd_gallery(g_det, g_sto, g_data, g_K, g_tau, g_seed, g_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
