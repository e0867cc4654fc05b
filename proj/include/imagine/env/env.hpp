#pragma once

#include <memory>
#include <vector>

#include "imagine/core/rng.hpp"
#include "imagine/core/tensor.hpp"

namespace imagine {

/// One rendered frame: (H, W, 3), every value in [0, 1], H and W divisible
/// by 8 (the encoder/decoder resampling factor).
using Frame = Tensor<float>;

inline void check_frame(const Frame& f) {
  IM_CHECK(f.ndim() == 3 && f.dim(2) == 3, "frame must be (H,W,3)");
  IM_CHECK(f.dim(0) % 8 == 0 && f.dim(1) % 8 == 0,
           "frame dims must be divisible by 8, got " + shape_str(f.shape()));
  for (long i = 0; i < f.numel(); ++i)
    IM_CHECK(f[i] >= 0.0f && f[i] <= 1.0f, "frame value outside [0,1]");
}

/// Discrete action as a tiled-ready vector. Non-jumpy records are one-hot of
/// length A; jumpy records concatenate c one-hot blocks (length c*A).
struct ActionRecord {
  Tensor<float> encoded;

  static ActionRecord one_hot(int action, int arity) {
    IM_CHECK(action >= 0 && action < arity, "action out of range");
    ActionRecord r;
    r.encoded = Tensor<float>({arity});
    r.encoded[action] = 1.0f;
    return r;
  }

  static ActionRecord concat(const std::vector<ActionRecord>& parts) {
    IM_CHECK(!parts.empty(), "cannot concatenate zero action records");
    int total = 0;
    for (const auto& p : parts) total += static_cast<int>(p.encoded.numel());
    ActionRecord r;
    r.encoded = Tensor<float>({total});
    int off = 0;
    for (const auto& p : parts) {
      std::copy(p.encoded.data(), p.encoded.data() + p.encoded.numel(),
                r.encoded.data() + off);
      off += static_cast<int>(p.encoded.numel());
    }
    return r;
  }

  static ActionRecord zeros(int len) {
    ActionRecord r;
    r.encoded = Tensor<float>({len});
    return r;
  }

  int length() const { return static_cast<int>(encoded.numel()); }

  /// Checks the one-per-block structure for a record of chunk size c.
  void validate(int arity, int chunk) const {
    IM_CHECK(length() == arity * chunk, "action record length mismatch");
    for (int b = 0; b < chunk; ++b) {
      int ones = 0;
      for (int a = 0; a < arity; ++a) {
        const float v = encoded[b * arity + a];
        IM_CHECK(v == 0.0f || v == 1.0f, "action record entries must be 0/1");
        ones += (v == 1.0f);
      }
      IM_CHECK(ones == 1, "each action block must have exactly one active entry");
    }
  }
};

/// Aligned modeled sequence: a 3-frame context, then T steps. actions[t] is
/// the action leading into observations[t]; rewards[t] is collected on that
/// transition.
struct Trajectory {
  std::vector<Frame> context;       // exactly 3
  std::vector<Frame> observations;  // T
  std::vector<ActionRecord> actions;
  std::vector<float> rewards;

  int steps() const { return static_cast<int>(observations.size()); }

  void validate() const {
    IM_CHECK(context.size() == 3, "trajectory context must hold exactly 3 frames");
    IM_CHECK(observations.size() == actions.size() && actions.size() == rewards.size(),
             "trajectory observation/action/reward lengths must agree");
    IM_CHECK(!observations.empty(), "trajectory must have at least one step");
  }
};

enum class EnvKind { BouncingBall, MiniPacman };

struct EnvConfig {
  EnvKind kind = EnvKind::MiniPacman;
  int height = 80;
  int width = 80;
  int action_repeat = 1;
  uint64_t rng_seed = 0;

  // Diffusive bouncing ball.
  double ball_speed = 1.5;      // drift magnitude, pixels per step
  double ball_diffusion = 1.25; // stddev of the per-axis position noise
  double ball_radius = 6.0;

  // Gridworld. Empty string selects the built-in maze.
  std::string maze;
  int cell_pixels = 6;

  void validate() const {
    IM_CHECK(action_repeat >= 1, "action_repeat must be >= 1");
    IM_CHECK(height % 8 == 0 && width % 8 == 0, "frame dims must be divisible by 8");
  }
};

struct StepResult {
  Frame obs;
  float reward = 0.0f;
  bool done = false;
};

/// Environment interface. A single instance must be stepped by one caller at
/// a time; independent instances may run in parallel.
class Env {
 public:
  virtual ~Env() = default;
  virtual int action_count() const = 0;
  virtual Frame reset(uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
  virtual bool done() const = 0;
  virtual std::unique_ptr<Env> clone_config() const = 0;
};

/// Steps N independent instances in lockstep.
class BatchedEnv {
 public:
  BatchedEnv(const Env& prototype, int n, uint64_t seed) {
    for (int i = 0; i < n; ++i) {
      envs_.push_back(prototype.clone_config());
      uint64_t s = seed;
      obs_.push_back(envs_.back()->reset(splitmix64(s) + i));
    }
  }

  int size() const { return static_cast<int>(envs_.size()); }
  Env& env(int i) { return *envs_[i]; }
  const Frame& obs(int i) const { return obs_[i]; }

  StepResult step(int i, int action) {
    StepResult r = envs_[i]->step(action);
    obs_[i] = r.obs;
    return r;
  }

  void reset(int i, uint64_t seed) { obs_[i] = envs_[i]->reset(seed); }

 private:
  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<Frame> obs_;
};

}  // namespace imagine
