#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "imagine/rollout/rollout.hpp"

namespace imagine {

struct BenchConfig {
  int batch = 16;        // independent chains advanced per repetition
  int depth = 10;        // tau, in model steps
  int repetitions = 21;  // timed repetitions (median reported)
  int warmup = 5;
  uint64_t seed = 0;
};

struct BenchRow {
  std::string family;
  int jumpy_factor = 1;
  bool rendered = false;          // pixel rollout (AR/RAR) vs abstract state
  double per_step_ms = 0;         // median wall-clock per model step per chain
  double per_step_ms_mean = 0;
  double per_step_ms_stddev = 0;
  double per_env_step_ms = 0;     // per_step divided by the jumpy factor
  double rel_speed = 0;           // first row's per-env-step cost / this row's
};

struct BenchReport {
  std::vector<BenchRow> rows;

  void write_csv(const std::string& path) const {
    std::ofstream f(path);
    f << "family,jumpy_factor,rendered,per_step_ms,per_step_ms_mean,per_step_ms_stddev,"
         "per_env_step_ms,rel_speed\n";
    for (const auto& r : rows) {
      f << r.family << "," << r.jumpy_factor << "," << (r.rendered ? 1 : 0) << ","
        << r.per_step_ms << "," << r.per_step_ms_mean << "," << r.per_step_ms_stddev
        << "," << r.per_env_step_ms << "," << r.rel_speed << "\n";
    }
  }
};

/// Times tau-step Monte-Carlo rollouts per family at a fixed batch size.
/// State-space families roll abstract states; auto-regressive families
/// render frames (their rollouts have no other output). Jumpy families are
/// additionally accounted per simulated environment step (cost / c).
/// Single-threaded; run quiesced for stable numbers.
template <typename T>
BenchReport benchmark_rollouts(const std::vector<const EnvModel<T>*>& models,
                               const BenchConfig& bench) {
  IM_CHECK(!models.empty(), "benchmark needs at least one model");
  const ModelConfig& first_cfg = models.front()->config();
  for (const auto* m : models) {
    IM_CHECK(m->config().height == first_cfg.height &&
                 m->config().width == first_cfg.width,
             "benchmark models must share the observation size");
  }

  // One synthetic context, reused for every model's initial state.
  Rng frame_rng(splitmix64_mix(bench.seed, 0x6672616d65ull));
  std::vector<Frame> context;
  for (int i = 0; i < 3; ++i) {
    Frame f({first_cfg.height, first_cfg.width, 3});
    for (long j = 0; j < f.numel(); ++j)
      f[j] = static_cast<float>(frame_rng.uniform_int(256)) / 255.0f;
    context.push_back(std::move(f));
  }

  BenchReport report;
  for (const auto* model : models) {
    const ModelConfig& cfg = model->config();
    const bool rendered = !has_abstract_rollout(cfg.family);
    RolloutRequest req;
    req.count = 1;
    req.depth = bench.depth;
    req.features = rendered ? RolloutFeatures::Pixels : RolloutFeatures::State;
    req.mode = StepMode::Sample;

    const ModelState<T> s_init = model->init_state(context);
    auto uniform_policy = [&cfg](const Tensor<T>&, Rng& rng) {
      return rng.uniform_int(cfg.action_count);
    };

    auto run_once = [&](uint64_t seed) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int b = 0; b < bench.batch; ++b) {
        RolloutRequest r = req;
        r.seed = splitmix64_mix(seed, b);
        rollout<T>(*model, s_init, r, uniform_policy);
      }
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                       t0)
          .count();
    };

    for (int w = 0; w < bench.warmup; ++w) run_once(splitmix64_mix(bench.seed, 1000 + w));
    std::vector<double> per_step;
    for (int rep = 0; rep < bench.repetitions; ++rep) {
      const double ms = run_once(splitmix64_mix(bench.seed, rep));
      per_step.push_back(ms / (static_cast<double>(bench.batch) * bench.depth));
    }
    std::sort(per_step.begin(), per_step.end());
    const double median = per_step[per_step.size() / 2];
    double mean = 0;
    for (double v : per_step) mean += v / per_step.size();
    double var = 0;
    for (double v : per_step) var += (v - mean) * (v - mean) / per_step.size();

    BenchRow row;
    row.family = family_name(cfg.family);
    row.jumpy_factor = cfg.jumpy_factor;
    row.rendered = rendered;
    row.per_step_ms = median;
    row.per_step_ms_mean = mean;
    row.per_step_ms_stddev = std::sqrt(var);
    row.per_env_step_ms = median / cfg.jumpy_factor;
    IM_CHECK(row.per_step_ms > 0, "timing must be positive");
    report.rows.push_back(row);
  }
  const double base = report.rows.front().per_env_step_ms;
  for (auto& row : report.rows) row.rel_speed = base / row.per_env_step_ms;
  return report;
}

}  // namespace imagine
