#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imagine/env/collect.hpp"
#include "imagine/harness/plot.hpp"
#include "imagine/rollout/rollout.hpp"

namespace imagine {

/// Mean per-pixel distance from {0,1}: 0 for hard binary frames, large for
/// hedged (blurred) predictions.
template <typename T>
double blur_statistic(const Tensor<T>& frame) {
  double acc = 0;
  for (long i = 0; i < frame.numel(); ++i) {
    const double v = frame[i];
    acc += std::min(v, 1.0 - v);
  }
  return acc / frame.numel();
}

struct GalleryConfig {
  int contexts = 3;   // how many held-out trajectories to visualize
  int depth = 6;      // tau
  int samples = 2;    // K stochastic rollouts per context
  uint64_t seed = 0;
};

/// Side-by-side rollout strips: ground truth row, deterministic mean-rollout
/// row, then K stochastic sample rows, all from the same context and action
/// sequence. Returns the written file paths.
template <typename T>
std::vector<std::string> render_rollout_gallery(const EnvModel<T>& det_model,
                                                const EnvModel<T>& stoch_model,
                                                const Dataset& data,
                                                const GalleryConfig& cfg,
                                                const std::string& out_dir) {
  IM_CHECK(data.size() > 0, "gallery needs a dataset");
  IM_CHECK(data.steps() >= cfg.depth, "dataset trajectories shorter than the depth");
  std::filesystem::create_directories(out_dir);
  const int H = data.frame_height(), W = data.frame_width();
  std::vector<std::string> written;
  Rng pick(splitmix64_mix(cfg.seed, 0x67616cull));

  for (int ci = 0; ci < cfg.contexts; ++ci) {
    const Trajectory traj = data.get(pick.uniform_int(data.size()));
    std::vector<ActionRecord> actions(traj.actions.begin(),
                                      traj.actions.begin() + cfg.depth);

    std::vector<std::vector<Tensor<float>>> rows;
    std::vector<Tensor<float>> gt;
    for (int t = 0; t < cfg.depth; ++t)
      gt.push_back(traj.observations[t]);
    rows.push_back(gt);

    RolloutRequest det_req;
    det_req.count = 1;
    det_req.depth = cfg.depth;
    det_req.features = RolloutFeatures::Pixels;
    det_req.mode = StepMode::Mean;
    auto det = rollout<T>(det_model, det_model.init_state(traj.context), det_req,
                          nullptr, actions);
    std::vector<Tensor<float>> det_row;
    for (int t = 0; t < cfg.depth; ++t)
      det_row.push_back(det.features[0][t].template cast<float>());
    rows.push_back(det_row);

    RolloutRequest sto_req = det_req;
    sto_req.count = cfg.samples;
    sto_req.mode = StepMode::Sample;
    sto_req.seed = splitmix64_mix(cfg.seed, 1000 + ci);
    auto sto = rollout<T>(stoch_model, stoch_model.init_state(traj.context), sto_req,
                          nullptr, actions);
    for (int k = 0; k < cfg.samples; ++k) {
      std::vector<Tensor<float>> row;
      for (int t = 0; t < cfg.depth; ++t)
        row.push_back(sto.features[k][t].template cast<float>());
      rows.push_back(row);
    }

    // assemble: rows stacked vertically with 2px separators
    const int sep = 2;
    const int out_h = static_cast<int>(rows.size()) * (H + sep) - sep;
    const int out_w = cfg.depth * (W + sep) - sep;
    Tensor<float> strip({out_h, out_w, 3});
    strip.fill(0.5f);
    for (size_t r = 0; r < rows.size(); ++r)
      for (int t = 0; t < cfg.depth; ++t) {
        const auto& fr = rows[r][t];
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            for (int ch = 0; ch < 3; ++ch)
              strip(static_cast<int>(r) * (H + sep) + y, t * (W + sep) + x, ch) =
                  fr(y, x, ch);
      }
    const std::string path = out_dir + "/rollouts_" + std::to_string(ci) + ".ppm";
    write_ppm(path, strip);
    written.push_back(path);
  }
  return written;
}

}  // namespace imagine
