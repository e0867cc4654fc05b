#pragma once

#include <array>
#include <deque>
#include <string>
#include <vector>

#include "imagine/env/env.hpp"

namespace imagine {

/// Pill-collecting gridworld with randomly wandering ghosts, rendered to an
/// 80x80 frame. Actions: UP, LEFT, DOWN, RIGHT, NOOP. Eating a pill gives
/// +1; ghost contact gives -1 and ends the episode; eating the last pill
/// also ends it.
class MiniPacman : public Env {
 public:
  static constexpr int kActions = 5;
  enum Action { UP = 0, LEFT = 1, DOWN = 2, RIGHT = 3, NOOP = 4 };

  explicit MiniPacman(EnvConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    parse_layout(cfg_.maze.empty() ? default_maze() : cfg_.maze);
  }

  static std::string default_maze() {
    return "#############\n"
           "#P..#...#..G#\n"
           "#.#.#.#.#.#.#\n"
           "#.#...#...#.#\n"
           "#.###.#.###.#\n"
           "#.....#.....#\n"
           "##.#.###.#.##\n"
           "#.....#.....#\n"
           "#.###.#.###.#\n"
           "#.#...#...#.#\n"
           "#.#.#.#.#.#.#\n"
           "#G..#...#...#\n"
           "#############\n";
  }

  int action_count() const override { return kActions; }

  Frame reset(uint64_t seed) override {
    rng_.reseed(seed);
    player_ = start_player_;
    ghosts_ = start_ghosts_;
    pills_ = start_pills_;
    pills_left_ = start_pills_left_;
    done_ = false;
    steps_ = 0;
    return render();
  }

  StepResult step(int action) override {
    IM_CHECK(!done_, "cannot step a finished episode");
    IM_CHECK(action >= 0 && action < kActions, "invalid action");
    float reward = 0.0f;
    ++steps_;

    const auto [dy, dx] = kDeltas[action];
    const int ny = player_.first + dy, nx = player_.second + dx;
    if (!wall(ny, nx)) player_ = {ny, nx};

    if (ghost_at(player_)) {
      reward -= 1.0f;
      done_ = true;
      return {render(), reward, done_};
    }
    if (pills_[idx(player_)]) {
      pills_[idx(player_)] = 0;
      --pills_left_;
      reward += 1.0f;
      if (pills_left_ == 0) done_ = true;
    }

    if (!done_) {
      for (auto& g : ghosts_) {
        std::array<int, 4> legal{};
        int n_legal = 0;
        for (int a = 0; a < 4; ++a) {
          const auto [gdy, gdx] = kDeltas[a];
          if (!wall(g.first + gdy, g.second + gdx)) legal[n_legal++] = a;
        }
        if (n_legal > 0) {
          const auto [gdy, gdx] = kDeltas[legal[rng_.uniform_int(n_legal)]];
          g = {g.first + gdy, g.second + gdx};
        }
      }
      if (ghost_at(player_)) {
        reward -= 1.0f;
        done_ = true;
      }
    }

    if (!done_ && steps_ >= max_episode_steps_) done_ = true;
    return {render(), reward, done_};
  }

  bool done() const override { return done_; }

  std::unique_ptr<Env> clone_config() const override {
    return std::make_unique<MiniPacman>(cfg_);
  }

  /// First move of a shortest path to the nearest pill (ties broken in
  /// action order), or NOOP if no pill is reachable. Used by the scripted
  /// data policy.
  int greedy_pill_action() const {
    if (pills_left_ == 0) return NOOP;
    std::vector<int> dist(rows_ * cols_, -1);
    std::vector<int> first_move(rows_ * cols_, NOOP);
    std::deque<std::pair<int, int>> queue;
    dist[idx(player_)] = 0;
    queue.push_back(player_);
    while (!queue.empty()) {
      const auto cell = queue.front();
      queue.pop_front();
      if (pills_[idx(cell)]) return first_move[idx(cell)];
      for (int a = 0; a < 4; ++a) {
        const auto [dy, dx] = kDeltas[a];
        const std::pair<int, int> next{cell.first + dy, cell.second + dx};
        if (wall(next.first, next.second) || dist[idx(next)] >= 0) continue;
        dist[idx(next)] = dist[idx(cell)] + 1;
        first_move[idx(next)] = dist[idx(cell)] == 0 ? a : first_move[idx(cell)];
        queue.push_back(next);
      }
    }
    return NOOP;
  }

  std::pair<int, int> player() const { return player_; }
  const std::vector<std::pair<int, int>>& ghosts() const { return ghosts_; }
  int pills_left() const { return pills_left_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }

 private:
  static constexpr std::array<std::pair<int, int>, 5> kDeltas{
      {{-1, 0}, {0, -1}, {1, 0}, {0, 1}, {0, 0}}};

  void parse_layout(const std::string& maze) {
    std::vector<std::string> lines;
    std::string line;
    for (char c : maze) {
      if (c == '\n') {
        if (!line.empty()) lines.push_back(line);
        line.clear();
      } else {
        line.push_back(c);
      }
    }
    if (!line.empty()) lines.push_back(line);
    IM_CHECK(!lines.empty(), "empty maze layout");
    rows_ = static_cast<int>(lines.size());
    cols_ = static_cast<int>(lines[0].size());
    walls_.assign(rows_ * cols_, 0);
    start_pills_.assign(rows_ * cols_, 0);
    start_ghosts_.clear();
    start_pills_left_ = 0;
    bool have_player = false;
    for (int y = 0; y < rows_; ++y) {
      IM_CHECK(static_cast<int>(lines[y].size()) == cols_, "ragged maze layout");
      for (int x = 0; x < cols_; ++x) {
        switch (lines[y][x]) {
          case '#': walls_[y * cols_ + x] = 1; break;
          case '.': start_pills_[y * cols_ + x] = 1; ++start_pills_left_; break;
          case 'P': start_player_ = {y, x}; have_player = true; break;
          case 'G': start_ghosts_.push_back({y, x}); break;
          case ' ': break;
          default: IM_CHECK(false, std::string("bad maze char '") + lines[y][x] + "'");
        }
      }
    }
    IM_CHECK(have_player, "maze layout needs a player start 'P'");
    IM_CHECK(cfg_.cell_pixels * rows_ <= cfg_.height &&
                 cfg_.cell_pixels * cols_ <= cfg_.width,
             "maze does not fit the configured frame");
    pills_ = start_pills_;
    pills_left_ = start_pills_left_;
    player_ = start_player_;
    ghosts_ = start_ghosts_;
  }

  int idx(std::pair<int, int> c) const { return c.first * cols_ + c.second; }
  int idx(int y, int x) const { return y * cols_ + x; }
  bool wall(int y, int x) const {
    if (y < 0 || y >= rows_ || x < 0 || x >= cols_) return true;
    return walls_[idx(y, x)] != 0;
  }
  bool ghost_at(std::pair<int, int> c) const {
    for (const auto& g : ghosts_) {
      if (g == c) return true;
    }
    return false;
  }

  Frame render() const {
    Frame f({cfg_.height, cfg_.width, 3});
    const int cp = cfg_.cell_pixels;
    const int oy = (cfg_.height - rows_ * cp) / 2;
    const int ox = (cfg_.width - cols_ * cp) / 2;
    auto paint = [&](int cy, int cx, int inset, float r, float g, float b) {
      for (int py = inset; py < cp - inset; ++py)
        for (int px = inset; px < cp - inset; ++px) {
          const int y = oy + cy * cp + py, x = ox + cx * cp + px;
          f(y, x, 0) = r;
          f(y, x, 1) = g;
          f(y, x, 2) = b;
        }
    };
    for (int y = 0; y < rows_; ++y)
      for (int x = 0; x < cols_; ++x) {
        if (walls_[idx(y, x)]) {
          paint(y, x, 0, 40 / 255.0f, 40 / 255.0f, 220 / 255.0f);
        } else if (pills_[idx(y, x)]) {
          const int c = cp / 2;
          for (int py = c - 1; py <= c; ++py)
            for (int px = c - 1; px <= c; ++px) {
              f(oy + y * cp + py, ox + x * cp + px, 0) = 1.0f;
              f(oy + y * cp + py, ox + x * cp + px, 1) = 1.0f;
              f(oy + y * cp + py, ox + x * cp + px, 2) = 180 / 255.0f;
            }
        }
      }
    paint(player_.first, player_.second, 1, 1.0f, 220 / 255.0f, 0.0f);
    for (const auto& g : ghosts_)
      paint(g.first, g.second, 1, 230 / 255.0f, 50 / 255.0f, 50 / 255.0f);
    return f;
  }

  EnvConfig cfg_;
  int rows_ = 0, cols_ = 0;
  std::vector<uint8_t> walls_;
  std::vector<uint8_t> pills_, start_pills_;
  std::pair<int, int> player_, start_player_;
  std::vector<std::pair<int, int>> ghosts_, start_ghosts_;
  int pills_left_ = 0, start_pills_left_ = 0;
  bool done_ = false;
  int steps_ = 0;
  int max_episode_steps_ = 500;
  Rng rng_;
};

}  // namespace imagine
