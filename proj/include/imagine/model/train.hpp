#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "imagine/env/collect.hpp"
#include "imagine/model/model.hpp"

namespace imagine {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"family", family_name(c.family)}, {"height", c.height},
       {"width", c.width},               {"action_count", c.action_count},
       {"jumpy_factor", c.jumpy_factor}, {"ar_order", c.ar_order},
       {"reward_bits", c.reward_bits},   {"channel_scale", c.channel_scale}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.family = family_from_name(j.at("family"));
  c.height = j.at("height");
  c.width = j.at("width");
  c.action_count = j.at("action_count");
  c.jumpy_factor = j.at("jumpy_factor");
  c.ar_order = j.at("ar_order");
  c.reward_bits = j.at("reward_bits");
  c.channel_scale = j.at("channel_scale");
}

struct TrainConfig {
  int steps = 1000;
  int batch_size = 16;
  double lr = 3e-4;
  uint64_t seed = 0;
  int log_every = 10;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir;       // empty: no files written
};

struct TrainLogRow {
  long step = 0;
  double loss = 0, pixel = 0, reward = 0, kl = 0;
  double wall_seconds = 0;
};

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream f(path);
  f << "step,loss,reconstruction,reward,kl,wall_seconds\n";
  for (const auto& r : rows) {
    f << r.step << "," << r.loss << "," << r.pixel << "," << r.reward << "," << r.kl
      << "," << r.wall_seconds << "\n";
  }
}

/// Minimizes -ELBO (or the exact negative log-likelihood for families
/// without latent variables) with adaptive-moment updates. Deterministic for
/// a fixed seed. Throws if the loss becomes non-finite.
template <typename T>
std::vector<TrainLogRow> train_model(EnvModel<T>& model, const Dataset& data,
                                     const TrainConfig& cfg) {
  IM_CHECK(data.size() > 0, "training dataset is empty");
  Adam<T> opt(AdamConfig{cfg.lr}, model.scope() + "/");
  Rng batch_rng(splitmix64_mix(cfg.seed, 0x6261746368ull));
  Rng sample_rng(splitmix64_mix(cfg.seed, 0x73616d706cull));
  std::vector<TrainLogRow> log;
  const auto t0 = std::chrono::steady_clock::now();
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  Tape<T> tape;
  for (int step = 1; step <= cfg.steps; ++step) {
    model.store().zero_grads();
    double loss_acc = 0, px_acc = 0, rw_acc = 0, kl_acc = 0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Trajectory traj = data.get(batch_rng.uniform_int(data.size()));
      tape.reset();
      Ctx<T> c{tape, true};
      SeqScoreVars<T> s = model.sequence_elbo_vars(c, traj, sample_rng);
      Var loss = scale(tape, s.total, T(-1) / static_cast<T>(cfg.batch_size));
      tape.backward(loss);
      loss_acc += static_cast<double>(tape.val(loss)[0]);
      px_acc += static_cast<double>(tape.val(s.pixel)[0]) / cfg.batch_size;
      rw_acc += static_cast<double>(tape.val(s.reward)[0]) / cfg.batch_size;
      kl_acc += static_cast<double>(tape.val(s.kl)[0]) / cfg.batch_size;
    }
    IM_CHECK(std::isfinite(loss_acc), "training diverged: non-finite loss at step " +
                                          std::to_string(step));
    opt.step(model.store());

    if (step % cfg.log_every == 0 || step == cfg.steps || step == 1) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log.push_back({step, loss_acc, px_acc, rw_acc, kl_acc, secs});
    }
    if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 &&
        step % cfg.checkpoint_every == 0) {
      nlohmann::json meta;
      meta["model"] = model.config();
      meta["step"] = step;
      save_checkpoint(model.store(),
                      cfg.out_dir + "/ckpt_" + std::to_string(step) + ".imck", meta);
    }
  }
  if (!cfg.out_dir.empty()) {
    nlohmann::json meta;
    meta["model"] = model.config();
    meta["step"] = cfg.steps;
    save_checkpoint(model.store(), cfg.out_dir + "/ckpt_final.imck", meta);
    write_train_log(cfg.out_dir + "/train_log.csv", log);
  }
  return log;
}

/// Mean per-pixel sequence score (nats / pixel) over a dataset; the ELBO for
/// latent families, the exact log-likelihood otherwise. Pixel normalization
/// follows the frame area (H*W).
template <typename T>
double evaluate_model(const EnvModel<T>& model, const Dataset& data, uint64_t seed,
                      int max_items = -1) {
  IM_CHECK(data.size() > 0, "evaluation dataset is empty");
  Rng rng(splitmix64_mix(seed, 0x6576616cull));
  const int n = max_items < 0 ? data.size() : std::min(max_items, data.size());
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    const Trajectory traj = data.get(i);
    const ScoreBreakdown s = model.sequence_elbo(traj, rng);
    acc += s.total / (static_cast<double>(traj.steps()) * model.config().height *
                      model.config().width);
  }
  return acc / n;
}

}  // namespace imagine
