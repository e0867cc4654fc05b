#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "imagine/agent/a2c.hpp"
#include "imagine/harness/gallery.hpp"
#include "imagine/model/train.hpp"
#include "imagine/rollout/bench.hpp"

namespace imagine {

// ---------------------------------------------------------------------------
// Metrics: append-only rows of (run id, seed, metric, step, value), one CSV
// per run, merged at report time. Reports read only these tables.
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string run_id;
  uint64_t seed = 0;
  std::string metric;
  long step = 0;
  double value = 0;
};

class MetricsTable {
 public:
  void append(MetricRow row) {
    if (!rows_.empty()) {
      for (auto it = rows_.rbegin(); it != rows_.rend(); ++it) {
        if (it->run_id == row.run_id && it->metric == row.metric) {
          IM_CHECK(it->step <= row.step, "metric steps must be monotone per run");
          break;
        }
      }
    }
    rows_.push_back(std::move(row));
  }

  const std::vector<MetricRow>& rows() const { return rows_; }

  void save(const std::string& path) const {
    std::ofstream f(path);
    f << "run_id,seed,metric,step,value\n";
    for (const auto& r : rows_)
      f << r.run_id << "," << r.seed << "," << r.metric << "," << r.step << ","
        << std::setprecision(12) << r.value << "\n";
  }

  static MetricsTable load(const std::string& path) {
    std::ifstream f(path);
    IM_CHECK(f.good(), "missing metrics table " + path);
    MetricsTable t;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      MetricRow r;
      std::string field;
      std::getline(ss, r.run_id, ',');
      std::getline(ss, field, ',');
      r.seed = std::stoull(field);
      std::getline(ss, r.metric, ',');
      std::getline(ss, field, ',');
      r.step = std::stol(field);
      std::getline(ss, field, ',');
      r.value = std::stod(field);
      t.rows_.push_back(std::move(r));
    }
    return t;
  }

  void merge(const MetricsTable& other) {
    for (const auto& r : other.rows_) rows_.push_back(r);
  }

  std::vector<double> values(const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : rows_)
      if (r.metric == metric) out.push_back(r.value);
    return out;
  }

 private:
  std::vector<MetricRow> rows_;
};

inline double median_of(std::vector<double> v) {
  IM_CHECK(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

inline double mean_of(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x / v.size();
  return m;
}

inline double stddev_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m) / v.size();
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

struct AgentRunSpec {
  std::string variant = "i2a-state";
  std::string regime = "distilled";
};

struct ExperimentSpec {
  std::string study = "model-comparison";  // or "agent-comparison"
  std::string out_dir = "out";
  std::vector<uint64_t> seeds = {1, 2, 3};

  EnvConfig env;

  // data collection
  int T = 10;
  int jumpy_c = 1;
  int train_trajectories = 400;
  int test_trajectories = 80;
  std::string data_policy = "pill-seeker";

  // model training
  double channel_scale = 0.25;
  int reward_bits = 8;
  int model_train_steps = 1200;
  int model_batch = 16;
  double model_lr = 3e-4;
  std::vector<std::string> families = {"baseline-vae", "dssm-det", "sssm"};

  // benchmark
  BenchConfig bench;

  // agent training
  int agent_K = 5;
  int agent_tau = 2;
  double lambda_distill = 0.1;
  double query_entropy_weight = 0.01;
  long agent_env_steps = 200000;
  double agent_lr = 7e-4;
  std::vector<AgentRunSpec> agent_runs;
};

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = {{"kind", c.kind == EnvKind::BouncingBall ? "bouncing-ball" : "mini-pacman"},
       {"height", c.height},
       {"width", c.width},
       {"action_repeat", c.action_repeat},
       {"rng_seed", c.rng_seed},
       {"ball_speed", c.ball_speed},
       {"ball_diffusion", c.ball_diffusion},
       {"ball_radius", c.ball_radius},
       {"maze", c.maze},
       {"cell_pixels", c.cell_pixels}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  const std::string kind = j.value("kind", "mini-pacman");
  c.kind = kind == "bouncing-ball" ? EnvKind::BouncingBall : EnvKind::MiniPacman;
  c.height = j.value("height", 80);
  c.width = j.value("width", 80);
  c.action_repeat = j.value("action_repeat", 1);
  c.rng_seed = j.value("rng_seed", 0ull);
  c.ball_speed = j.value("ball_speed", 1.5);
  c.ball_diffusion = j.value("ball_diffusion", 1.25);
  c.ball_radius = j.value("ball_radius", 6.0);
  c.maze = j.value("maze", std::string());
  c.cell_pixels = j.value("cell_pixels", 6);
}

inline void to_json(nlohmann::json& j, const AgentRunSpec& a) {
  j = {{"variant", a.variant}, {"regime", a.regime}};
}
inline void from_json(const nlohmann::json& j, AgentRunSpec& a) {
  a.variant = j.value("variant", "i2a-state");
  a.regime = j.value("regime", "distilled");
}

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = {{"study", s.study},
       {"out_dir", s.out_dir},
       {"seeds", s.seeds},
       {"env", s.env},
       {"T", s.T},
       {"jumpy_c", s.jumpy_c},
       {"train_trajectories", s.train_trajectories},
       {"test_trajectories", s.test_trajectories},
       {"data_policy", s.data_policy},
       {"channel_scale", s.channel_scale},
       {"reward_bits", s.reward_bits},
       {"model_train_steps", s.model_train_steps},
       {"model_batch", s.model_batch},
       {"model_lr", s.model_lr},
       {"families", s.families},
       {"bench_batch", s.bench.batch},
       {"bench_depth", s.bench.depth},
       {"bench_repetitions", s.bench.repetitions},
       {"agent_K", s.agent_K},
       {"agent_tau", s.agent_tau},
       {"lambda_distill", s.lambda_distill},
       {"query_entropy_weight", s.query_entropy_weight},
       {"agent_env_steps", s.agent_env_steps},
       {"agent_lr", s.agent_lr},
       {"agent_runs", s.agent_runs}};
}

inline void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  s.study = j.value("study", "model-comparison");
  s.out_dir = j.value("out_dir", "out");
  s.seeds = j.value("seeds", std::vector<uint64_t>{1, 2, 3});
  if (j.contains("env")) s.env = j.at("env").get<EnvConfig>();
  s.T = j.value("T", 10);
  s.jumpy_c = j.value("jumpy_c", 1);
  s.train_trajectories = j.value("train_trajectories", 400);
  s.test_trajectories = j.value("test_trajectories", 80);
  s.data_policy = j.value("data_policy", "pill-seeker");
  s.channel_scale = j.value("channel_scale", 0.25);
  s.reward_bits = j.value("reward_bits", 8);
  s.model_train_steps = j.value("model_train_steps", 1200);
  s.model_batch = j.value("model_batch", 16);
  s.model_lr = j.value("model_lr", 3e-4);
  s.families = j.value("families", std::vector<std::string>{"baseline-vae", "dssm-det",
                                                            "sssm"});
  s.bench.batch = j.value("bench_batch", 16);
  s.bench.depth = j.value("bench_depth", 10);
  s.bench.repetitions = j.value("bench_repetitions", 21);
  s.agent_K = j.value("agent_K", 5);
  s.agent_tau = j.value("agent_tau", 2);
  s.lambda_distill = j.value("lambda_distill", 0.1);
  s.query_entropy_weight = j.value("query_entropy_weight", 0.01);
  s.agent_env_steps = j.value("agent_env_steps", 200000L);
  s.agent_lr = j.value("agent_lr", 7e-4);
  s.agent_runs = j.value("agent_runs", std::vector<AgentRunSpec>{});
}

inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream f(path);
  IM_CHECK(f.good(), "cannot open spec " + path);
  return nlohmann::json::parse(f).get<ExperimentSpec>();
}

inline void save_spec(const ExperimentSpec& spec, const std::string& path) {
  std::ofstream f(path);
  f << nlohmann::json(spec).dump(2) << "\n";
}

/// The canned study layouts. The agent comparison covers every variant and
/// rollout-policy regime from the experiments.
inline ExperimentSpec canned_model_study(const std::string& out_dir) {
  ExperimentSpec s;
  s.study = "model-comparison";
  s.out_dir = out_dir;
  s.env.kind = EnvKind::MiniPacman;
  s.env.action_repeat = 4;
  return s;
}

inline ExperimentSpec canned_agent_study(const std::string& out_dir) {
  ExperimentSpec s;
  s.study = "agent-comparison";
  s.out_dir = out_dir;
  s.env.kind = EnvKind::MiniPacman;
  s.env.action_repeat = 4;
  s.agent_runs = {{"model-free", "random"},     {"copy-baseline", "random"},
                  {"untrained-model", "random"}, {"i2a-state", "random"},
                  {"i2a-state", "distilled"},    {"i2a-state", "learn-to-query"},
                  {"i2a-pixel", "distilled"},    {"modulation", "modulation"}};
  return s;
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

template <typename T>
ModelConfig model_config_for(const ExperimentSpec& spec, ModelFamily family) {
  ModelConfig mc;
  mc.family = family;
  mc.height = spec.env.height;
  mc.width = spec.env.width;
  mc.action_count = 5;
  mc.jumpy_factor = spec.jumpy_c;
  mc.reward_bits = spec.reward_bits;
  mc.channel_scale = spec.channel_scale;
  return mc;
}

inline std::string dataset_dir(const ExperimentSpec& spec, uint64_t seed, bool train) {
  return spec.out_dir + "/data/seed" + std::to_string(seed) + (train ? "/train" : "/test");
}

/// Collects (or reuses) the train/test trajectory sets for one seed.
inline void ensure_datasets(const ExperimentSpec& spec, uint64_t seed) {
  const std::string train_dir = dataset_dir(spec, seed, true);
  const std::string test_dir = dataset_dir(spec, seed, false);
  if (std::filesystem::exists(train_dir + "/manifest.json") &&
      std::filesystem::exists(test_dir + "/manifest.json"))
    return;
  auto env = make_env(spec.env);
  auto policy = make_policy(spec.env.kind == EnvKind::BouncingBall ? "uniform"
                                                                   : spec.data_policy);
  auto collect_into = [&](int count, uint64_t collect_seed, const std::string& dir) {
    Dataset ds(spec.T / spec.jumpy_c, spec.env.height, spec.env.width,
               5 * spec.jumpy_c);
    int remaining = count;
    uint64_t chunk_seed = collect_seed;
    while (remaining > 0) {
      const int chunk = std::min(remaining, 50);
      auto res = collect_trajectories(*env, *policy, spec.T, chunk,
                                      spec.env.action_repeat, chunk_seed++);
      IM_CHECK(!res.trajectories.empty(), "data collection starved");
      for (const auto& t : res.trajectories) {
        ds.add(spec.jumpy_c > 1 ? jumpy_preprocess(t, spec.jumpy_c) : t);
        if (--remaining == 0) break;
      }
    }
    nlohmann::json m;
    m["env"] = spec.env;
    m["seed"] = collect_seed;
    m["jumpy_c"] = spec.jumpy_c;
    m["action_repeat"] = spec.env.action_repeat;
    m["data_policy"] = spec.data_policy;
    ds.manifest()["collection"] = m;
    ds.save(dir);
  };
  collect_into(spec.train_trajectories, splitmix64_mix(seed, 0x747261696eull), train_dir);
  collect_into(spec.test_trajectories, splitmix64_mix(seed, 0x74657374ull), test_dir);
}

// ---------------------------------------------------------------------------
// Model comparison study
// ---------------------------------------------------------------------------

struct ModelStudyResult {
  MetricsTable metrics;
  BenchReport bench;
  // per family: mean and stddev of the likelihood improvement over the
  // frame-VAE baseline, in 1e-3 nats per pixel
  std::map<std::string, std::pair<double, double>> improvements;
};

template <typename T = float>
ModelStudyResult run_model_study(const ExperimentSpec& spec) {
  IM_CHECK(std::find(spec.families.begin(), spec.families.end(), "baseline-vae") !=
               spec.families.end(),
           "the model study needs the baseline-vae family for improvements");
  std::filesystem::create_directories(spec.out_dir);
  save_spec(spec, spec.out_dir + "/spec.json");
  MetricsTable metrics;

  // per-(family, seed) held-out scores
  std::map<std::string, std::map<uint64_t, double>> scores;
  for (uint64_t seed : spec.seeds) {
    ensure_datasets(spec, seed);
    Dataset train = Dataset::load(dataset_dir(spec, seed, true));
    Dataset test = Dataset::load(dataset_dir(spec, seed, false));
    for (const std::string& fam : spec.families) {
      const std::string run_id = fam + "-s" + std::to_string(seed);
      const std::string run_dir = spec.out_dir + "/runs/" + run_id;
      ParamStore<T> ps(splitmix64_mix(seed, hash_name(fam)));
      EnvModel<T> model(model_config_for<T>(spec, family_from_name(fam)), ps);
      TrainConfig tc;
      tc.steps = spec.model_train_steps;
      tc.batch_size = spec.model_batch;
      tc.lr = spec.model_lr;
      tc.seed = splitmix64_mix(seed, 0x6d6f64656cull);
      tc.out_dir = run_dir;
      auto log = train_model(model, train, tc);
      for (const auto& row : log) {
        metrics.append({run_id, seed, "train_loss", row.step, row.loss});
      }
      const double score =
          evaluate_model(model, test, splitmix64_mix(seed, 0x6576ull));
      scores[fam][seed] = score;
      metrics.append({run_id, seed, "test_nats_per_pixel", spec.model_train_steps,
                      score});
      MetricsTable per_run;
      for (const auto& r : metrics.rows())
        if (r.run_id == run_id) per_run.append(r);
      std::filesystem::create_directories(run_dir);
      per_run.save(run_dir + "/metrics.csv");
    }
  }

  // improvements over the baseline, per seed, in 1e-3 nats/pixel
  ModelStudyResult result;
  for (const std::string& fam : spec.families) {
    std::vector<double> imps;
    for (uint64_t seed : spec.seeds) {
      const double imp = 1000.0 * (scores[fam][seed] - scores["baseline-vae"][seed]);
      imps.push_back(imp);
      metrics.append({fam + "-s" + std::to_string(seed), seed,
                      "improvement_milli_nats_per_pixel", spec.model_train_steps, imp});
    }
    result.improvements[fam] = {mean_of(imps), stddev_of(imps)};
  }

  // rollout speed benchmark over the same families (fresh models; timing
  // does not depend on the learned values)
  {
    std::vector<std::unique_ptr<ParamStore<T>>> stores;
    std::vector<std::unique_ptr<EnvModel<T>>> models;
    std::vector<const EnvModel<T>*> ptrs;
    std::vector<std::string> bench_families = {"ar", "rar", "dssm-det", "dssm-vae",
                                               "sssm"};
    for (const auto& fam : bench_families) {
      stores.push_back(std::make_unique<ParamStore<T>>(1));
      models.push_back(std::make_unique<EnvModel<T>>(
          model_config_for<T>(spec, family_from_name(fam)), *stores.back()));
      ptrs.push_back(models.back().get());
    }
    ModelConfig jumpy = model_config_for<T>(spec, ModelFamily::SSSM);
    jumpy.jumpy_factor = 4;
    stores.push_back(std::make_unique<ParamStore<T>>(2));
    models.push_back(std::make_unique<EnvModel<T>>(jumpy, *stores.back()));
    ptrs.push_back(models.back().get());
    result.bench = benchmark_rollouts<T>(ptrs, spec.bench);
    result.bench.write_csv(spec.out_dir + "/bench.csv");
  }

  metrics.save(spec.out_dir + "/metrics.csv");
  result.metrics = metrics;

  // table-shaped report
  std::ofstream rep(spec.out_dir + "/report.txt");
  rep << "Held-out likelihood improvement over baseline-vae "
         "(1e-3 nats/pixel, mean +- stddev over "
      << spec.seeds.size() << " seeds)\n";
  for (const auto& [fam, ms] : result.improvements) {
    if (fam == "baseline-vae") continue;
    rep << "  " << std::left << std::setw(14) << fam << std::right << std::fixed
        << std::setprecision(2) << std::setw(9) << ms.first << " +- " << ms.second
        << "\n";
  }
  rep << "\nRelative rollout speed (per simulated environment step, first row = 1.0x)\n";
  for (const auto& row : result.bench.rows) {
    rep << "  " << std::left << std::setw(14)
        << (row.family + (row.jumpy_factor > 1 ? " (jumpy)" : "")) << std::right
        << std::fixed << std::setprecision(2) << std::setw(7) << row.rel_speed << "x\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Agent comparison study
// ---------------------------------------------------------------------------

struct AgentStudyResult {
  MetricsTable metrics;
  // per run label: median final return across seeds
  std::map<std::string, double> final_returns;
};

void plot_agent_study(const std::string& out_dir);

/// Trains (or reuses) the model checkpoints the agent study depends on: a
/// conditional model for the imagination agents and an unconditional one
/// for the modulation agent.
template <typename T>
void ensure_agent_models(const ExperimentSpec& spec, uint64_t seed,
                         const std::string& dir) {
  if (std::filesystem::exists(dir + "/model.imck") &&
      std::filesystem::exists(dir + "/uncond.imck"))
    return;
  ensure_datasets(spec, seed);
  Dataset train = Dataset::load(dataset_dir(spec, seed, true));
  std::filesystem::create_directories(dir);
  for (const bool uncond : {false, true}) {
    ParamStore<T> ps(splitmix64_mix(seed, uncond ? 0x75ull : 0x63ull));
    EnvModel<T> model(model_config_for<T>(spec, uncond ? ModelFamily::SSSM_UNCOND
                                                       : ModelFamily::SSSM),
                      ps);
    TrainConfig tc;
    tc.steps = spec.model_train_steps;
    tc.batch_size = spec.model_batch;
    tc.lr = spec.model_lr;
    tc.seed = splitmix64_mix(seed, 0x616d6f64ull);
    train_model(model, train, tc);
    nlohmann::json meta;
    meta["model"] = model.config();
    save_checkpoint(ps, dir + (uncond ? "/uncond.imck" : "/model.imck"), meta);
  }
}

inline std::string agent_run_label(const AgentRunSpec& run) {
  if (run.variant == "i2a-state" || run.variant == "i2a-pixel")
    return run.variant + "-" + run.regime;
  return run.variant;
}

template <typename T = float>
AgentStudyResult run_agent_study(const ExperimentSpec& spec) {
  std::filesystem::create_directories(spec.out_dir);
  save_spec(spec, spec.out_dir + "/spec.json");
  IM_CHECK(!spec.agent_runs.empty(), "agent study needs at least one run spec");
  AgentStudyResult result;
  MetricsTable metrics;

  for (uint64_t seed : spec.seeds) {
    const std::string model_dir = spec.out_dir + "/models/seed" + std::to_string(seed);
    ensure_agent_models<T>(spec, seed, model_dir);
    for (const auto& run : spec.agent_runs) {
      const std::string label = agent_run_label(run);
      const std::string run_id = label + "-s" + std::to_string(seed);
      const std::string run_dir = spec.out_dir + "/runs/" + run_id;

      const bool modulation = run.regime == "modulation";
      ParamStore<T> model_ps(1);
      ModelConfig mc;
      {
        const std::string ck =
            model_dir + (modulation ? "/uncond.imck" : "/model.imck");
        auto meta = load_checkpoint(model_ps, ck);
        mc = meta.at("model").template get<ModelConfig>();
      }
      EnvModel<T> model(mc, model_ps);
      if (run.variant == "untrained-model") {
        // frozen, freshly initialized weights
        ParamStore<T> fresh(splitmix64_mix(seed, 0x667265ull));
        EnvModel<T> fresh_model(mc, fresh);
        model_ps.copy_values_from(fresh);
      }

      AgentConfig acfg;
      // "modulation" is an i2a-state agent whose regime replaces the prior
      acfg.variant = run.variant == "modulation" ? AgentVariant::I2aState
                                                 : variant_from_name(run.variant);
      acfg.regime = regime_from_name(run.regime);
      acfg.rollout_count = spec.agent_K;
      acfg.rollout_depth = spec.agent_tau;
      acfg.lambda_distill = spec.lambda_distill;
      acfg.query_entropy_weight = spec.query_entropy_weight;
      ParamStore<T> agent_ps(splitmix64_mix(seed, hash_name(label)));
      const bool needs_model = acfg.variant != AgentVariant::ModelFree;
      Agent<T> agent(acfg, agent_ps, needs_model ? &model : nullptr);

      A2CConfig tcfg;
      tcfg.action_repeat = spec.env.action_repeat;
      tcfg.total_env_steps = spec.agent_env_steps;
      tcfg.lr = spec.agent_lr;
      tcfg.seed = splitmix64_mix(seed, hash_name(run_id));
      tcfg.out_dir = run_dir;
      auto env = make_env(spec.env);
      A2CTrainer<T> trainer(agent, *env, tcfg);
      auto rows = trainer.run();
      for (const auto& r : rows)
        metrics.append({run_id, seed, "episode_return", r.env_steps, r.mean_return});
      // final performance: mean return over the last 20% of logged points
      const size_t tail = std::max<size_t>(1, rows.size() / 5);
      std::vector<double> tail_returns;
      for (size_t i = rows.size() - tail; i < rows.size(); ++i)
        tail_returns.push_back(rows[i].mean_return);
      metrics.append({run_id, seed, "final_return", trainer.env_steps(),
                      mean_of(tail_returns)});
    }
  }
  metrics.save(spec.out_dir + "/metrics.csv");
  result.metrics = metrics;
  plot_agent_study(spec.out_dir);

  for (const auto& run : spec.agent_runs) {
    const std::string label = agent_run_label(run);
    std::vector<double> finals;
    for (const auto& r : metrics.rows())
      if (r.metric == "final_return" && r.run_id.rfind(label + "-s", 0) == 0)
        finals.push_back(r.value);
    if (!finals.empty()) result.final_returns[label] = median_of(finals);
  }
  return result;
}

/// Re-renders the learning-curve plot from the merged metrics CSV alone.
inline void plot_agent_study(const std::string& out_dir) {
  MetricsTable metrics = MetricsTable::load(out_dir + "/metrics.csv");
  // group: label -> seed -> curve
  std::map<std::string, std::map<uint64_t, std::vector<std::pair<double, double>>>> runs;
  for (const auto& r : metrics.rows()) {
    if (r.metric != "episode_return") continue;
    const auto pos = r.run_id.rfind("-s");
    const std::string label = r.run_id.substr(0, pos);
    runs[label][r.seed].push_back({static_cast<double>(r.step), r.value});
  }
  std::vector<PlotSeries> series;
  for (auto& [label, by_seed] : runs) {
    // per-variant median across seeds at common indices
    PlotSeries ps;
    ps.label = label;
    size_t npoints = 0;
    for (auto& [seed, curve] : by_seed) npoints = std::max(npoints, curve.size());
    for (size_t i = 0; i < npoints; ++i) {
      std::vector<double> xs, ys;
      for (auto& [seed, curve] : by_seed) {
        if (i < curve.size()) {
          xs.push_back(curve[i].first);
          ys.push_back(curve[i].second);
        }
      }
      if (!ys.empty()) ps.points.push_back({median_of(xs), median_of(ys)});
    }
    series.push_back(std::move(ps));
  }
  write_svg_lines(out_dir + "/learning_curves.svg", "episode return vs environment steps",
                  "environment steps", "episode return (running mean)", series);
}

}  // namespace imagine
