#pragma once

#include <cmath>

#include "imagine/env/env.hpp"

namespace imagine {

struct BallState {
  double x = 40.0, y = 40.0;
  double vx = 1.0, vy = 0.0;
};

/// Advances the ball by its drift velocity plus per-axis Gaussian diffusion,
/// reflecting elastically at the frame edges (positions stay inside
/// [radius, size - radius] on both axes).
inline void ball_advance(BallState& s, double diffusion, double radius, int h, int w,
                         Rng& rng) {
  s.x += s.vx + (diffusion > 0.0 ? diffusion * rng.normal() : 0.0);
  s.y += s.vy + (diffusion > 0.0 ? diffusion * rng.normal() : 0.0);
  const double xmin = radius, xmax = w - radius;
  const double ymin = radius, ymax = h - radius;
  // A large diffusion kick can overshoot twice; iterate until inside.
  for (int guard = 0; guard < 16; ++guard) {
    bool bounced = false;
    if (s.x < xmin) { s.x = 2 * xmin - s.x; s.vx = -s.vx; bounced = true; }
    if (s.x > xmax) { s.x = 2 * xmax - s.x; s.vx = -s.vx; bounced = true; }
    if (s.y < ymin) { s.y = 2 * ymin - s.y; s.vy = -s.vy; bounced = true; }
    if (s.y > ymax) { s.y = 2 * ymax - s.y; s.vy = -s.vy; bounced = true; }
    if (!bounced) break;
  }
}

inline Frame render_ball(const BallState& s, double radius, int h, int w) {
  Frame f({h, w, 3});
  const double r2 = radius * radius;
  const int y0 = std::max(0, static_cast<int>(std::floor(s.y - radius - 1)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.y + radius + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(s.x - radius - 1)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(s.x + radius + 1)));
  for (int py = y0; py <= y1; ++py) {
    for (int px = x0; px <= x1; ++px) {
      const double dy = py + 0.5 - s.y;
      const double dx = px + 0.5 - s.x;
      if (dx * dx + dy * dy <= r2) {
        f(py, px, 0) = 1.0f;
        f(py, px, 1) = 1.0f;
        f(py, px, 2) = 1.0f;
      }
    }
  }
  return f;
}

/// Reward-free diffusive bouncing ball. All five actions are no-ops; the
/// action set exists so every environment shares one interface.
class BouncingBall : public Env {
 public:
  static constexpr int kActions = 5;

  explicit BouncingBall(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  int action_count() const override { return kActions; }

  Frame reset(uint64_t seed) override {
    rng_.reseed(seed);
    const double margin = cfg_.ball_radius + 2.0;
    state_.x = margin + rng_.uniform() * (cfg_.width - 2 * margin);
    state_.y = margin + rng_.uniform() * (cfg_.height - 2 * margin);
    const double angle = rng_.uniform() * 2.0 * M_PI;
    state_.vx = cfg_.ball_speed * std::cos(angle);
    state_.vy = cfg_.ball_speed * std::sin(angle);
    return render_ball(state_, cfg_.ball_radius, cfg_.height, cfg_.width);
  }

  StepResult step(int action) override {
    IM_CHECK(action >= 0 && action < kActions, "invalid action");
    ball_advance(state_, cfg_.ball_diffusion, cfg_.ball_radius, cfg_.height, cfg_.width,
                 rng_);
    return {render_ball(state_, cfg_.ball_radius, cfg_.height, cfg_.width), 0.0f, false};
  }

  bool done() const override { return false; }

  std::unique_ptr<Env> clone_config() const override {
    return std::make_unique<BouncingBall>(cfg_);
  }

  const BallState& state() const { return state_; }
  void set_state(const BallState& s) { state_ = s; }
  const EnvConfig& config() const { return cfg_; }

 private:
  EnvConfig cfg_;
  BallState state_;
  Rng rng_;
};

}  // namespace imagine
