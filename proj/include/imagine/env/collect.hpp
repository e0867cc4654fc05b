#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imagine/env/bouncing_ball.hpp"
#include "imagine/env/env.hpp"
#include "imagine/env/mini_pacman.hpp"

namespace imagine {

inline std::unique_ptr<Env> make_env(const EnvConfig& cfg) {
  switch (cfg.kind) {
    case EnvKind::BouncingBall: return std::make_unique<BouncingBall>(cfg);
    case EnvKind::MiniPacman: return std::make_unique<MiniPacman>(cfg);
  }
  IM_CHECK(false, "unknown environment kind");
  return nullptr;
}

/// Maps the current observation (and, for scripted policies, the live
/// environment) to an action.
class DataPolicy {
 public:
  virtual ~DataPolicy() = default;
  virtual int act(const Env& env, const Frame& obs, Rng& rng) = 0;
};

class UniformPolicy : public DataPolicy {
 public:
  int act(const Env& env, const Frame&, Rng& rng) override {
    return rng.uniform_int(env.action_count());
  }
};

class ConstantPolicy : public DataPolicy {
 public:
  explicit ConstantPolicy(int action) : action_(action) {}
  int act(const Env&, const Frame&, Rng&) override { return action_; }

 private:
  int action_;
};

/// Epsilon-greedy shortest-path pill seeker for the gridworld.
class PillSeekerPolicy : public DataPolicy {
 public:
  explicit PillSeekerPolicy(double epsilon = 0.2) : epsilon_(epsilon) {}

  int act(const Env& env, const Frame&, Rng& rng) override {
    const auto* pac = dynamic_cast<const MiniPacman*>(&env);
    IM_CHECK(pac != nullptr, "pill seeker policy requires the gridworld");
    if (rng.uniform() < epsilon_) return rng.uniform_int(pac->action_count());
    return pac->greedy_pill_action();
  }

 private:
  double epsilon_;
};

inline std::unique_ptr<DataPolicy> make_policy(const std::string& name) {
  if (name == "uniform") return std::make_unique<UniformPolicy>();
  if (name == "pill-seeker") return std::make_unique<PillSeekerPolicy>(0.2);
  if (name == "noop") return std::make_unique<ConstantPolicy>(4);
  IM_CHECK(false, "unknown data policy " + name);
  return nullptr;
}

struct CollectResult {
  std::vector<Trajectory> trajectories;
  long raw_env_steps = 0;    // counts every underlying environment step
  int discarded_episodes = 0;
  bool budget_exhausted = false;  // fewer trajectories than requested
};

/// Collects `count` trajectories of T modeled steps each. One policy action
/// is chosen per block of `action_repeat` raw steps; the block's last frame
/// is kept and its rewards are summed. The first 3 kept frames form the
/// context. Episodes ending before 3+T blocks are discarded.
inline CollectResult collect_trajectories(Env& env, DataPolicy& policy, int T, int count,
                                          int action_repeat, uint64_t seed,
                                          long max_raw_steps = -1) {
  IM_CHECK(T >= 1, "T must be >= 1");
  IM_CHECK(count >= 1, "count must be >= 1");
  IM_CHECK(action_repeat >= 1, "action_repeat must be >= 1");
  if (max_raw_steps < 0) {
    max_raw_steps = 64L * count * (3 + T) * action_repeat + 100000;
  }
  CollectResult result;
  Rng policy_rng(splitmix64(seed) ^ 0x706f6c696379ull);
  uint64_t episode_seed_state = seed;
  const int blocks = 3 + T;
  const int A = env.action_count();

  while (static_cast<int>(result.trajectories.size()) < count) {
    if (result.raw_env_steps >= max_raw_steps) {
      result.budget_exhausted = true;
      break;
    }
    Frame obs = env.reset(splitmix64(episode_seed_state));
    std::vector<Frame> kept;
    std::vector<int> block_actions;
    std::vector<float> block_rewards;
    bool died = false;
    for (int b = 0; b < blocks && !died; ++b) {
      const int action = policy.act(env, obs, policy_rng);
      float acc = 0.0f;
      for (int r = 0; r < action_repeat; ++r) {
        StepResult sr = env.step(action);
        ++result.raw_env_steps;
        acc += sr.reward;
        obs = sr.obs;
        if (sr.done) {
          died = true;
          break;
        }
      }
      if (died) break;
      kept.push_back(obs);
      block_actions.push_back(action);
      block_rewards.push_back(acc);
    }
    if (died || static_cast<int>(kept.size()) < blocks) {
      ++result.discarded_episodes;
      continue;
    }
    Trajectory traj;
    traj.context.assign(kept.begin(), kept.begin() + 3);
    traj.observations.assign(kept.begin() + 3, kept.end());
    for (int t = 0; t < T; ++t) {
      traj.actions.push_back(ActionRecord::one_hot(block_actions[3 + t], A));
      traj.rewards.push_back(block_rewards[3 + t]);
    }
    traj.validate();
    result.trajectories.push_back(std::move(traj));
  }
  return result;
}

/// Temporal abstraction by a factor c: keeps every c-th observation,
/// concatenates the c actions between kept frames and sums their rewards.
/// The 3-frame context is left untouched. Requires c | T.
inline Trajectory jumpy_preprocess(const Trajectory& traj, int c) {
  traj.validate();
  IM_CHECK(c >= 1, "jumpy factor must be >= 1");
  const int T = traj.steps();
  IM_CHECK(T % c == 0, "jumpy factor " + std::to_string(c) + " must divide T = " +
                           std::to_string(T));
  if (c == 1) return traj;
  Trajectory out;
  out.context = traj.context;
  const int Tn = T / c;
  for (int k = 0; k < Tn; ++k) {
    out.observations.push_back(traj.observations[k * c + c - 1]);
    std::vector<ActionRecord> parts(traj.actions.begin() + k * c,
                                    traj.actions.begin() + (k + 1) * c);
    out.actions.push_back(ActionRecord::concat(parts));
    float r = 0.0f;
    for (int s = 0; s < c; ++s) r += traj.rewards[k * c + s];
    out.rewards.push_back(r);
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Trajectory sets: fixed-stride binary records plus a JSON manifest.
// Frames are stored as u8 (all palette values are exact multiples of 1/255,
// so quantization is lossless for these environments).
// ---------------------------------------------------------------------------

class Dataset {
 public:
  Dataset() = default;
  Dataset(int T, int frame_h, int frame_w, int action_len)
      : T_(T), h_(frame_h), w_(frame_w), alen_(action_len) {}

  void add(const Trajectory& traj) {
    traj.validate();
    IM_CHECK(traj.steps() == T_, "trajectory length mismatch");
    IM_CHECK(traj.actions[0].length() == alen_, "action record length mismatch");
    const size_t base = bytes_.size();
    bytes_.resize(base + record_bytes());
    uint8_t* p = bytes_.data() + base;
    auto put_frame = [&](const Frame& f) {
      IM_CHECK(f.dim(0) == h_ && f.dim(1) == w_, "frame size mismatch");
      for (long i = 0; i < f.numel(); ++i)
        *p++ = static_cast<uint8_t>(std::lround(f[i] * 255.0f));
    };
    for (const auto& f : traj.context) put_frame(f);
    for (const auto& f : traj.observations) put_frame(f);
    for (const auto& a : traj.actions)
      for (long i = 0; i < a.encoded.numel(); ++i)
        *p++ = static_cast<uint8_t>(a.encoded[i]);
    for (float r : traj.rewards) {
      std::memcpy(p, &r, sizeof(float));
      p += sizeof(float);
    }
    ++count_;
  }

  Trajectory get(int i) const {
    IM_CHECK(i >= 0 && i < count_, "trajectory index out of range");
    const uint8_t* p = bytes_.data() + static_cast<size_t>(i) * record_bytes();
    Trajectory traj;
    auto read_frame = [&]() {
      Frame f({h_, w_, 3});
      for (long j = 0; j < f.numel(); ++j) f[j] = *p++ / 255.0f;
      return f;
    };
    for (int k = 0; k < 3; ++k) traj.context.push_back(read_frame());
    for (int t = 0; t < T_; ++t) traj.observations.push_back(read_frame());
    for (int t = 0; t < T_; ++t) {
      ActionRecord a = ActionRecord::zeros(alen_);
      for (int j = 0; j < alen_; ++j) a.encoded[j] = static_cast<float>(*p++);
      traj.actions.push_back(std::move(a));
    }
    for (int t = 0; t < T_; ++t) {
      float r;
      std::memcpy(&r, p, sizeof(float));
      p += sizeof(float);
      traj.rewards.push_back(r);
    }
    return traj;
  }

  int size() const { return count_; }
  int steps() const { return T_; }
  int frame_height() const { return h_; }
  int frame_width() const { return w_; }
  int action_len() const { return alen_; }

  nlohmann::json& manifest() { return manifest_; }
  const nlohmann::json& manifest() const { return manifest_; }

  void save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json m = manifest_;
    m["T"] = T_;
    m["frame_height"] = h_;
    m["frame_width"] = w_;
    m["action_len"] = alen_;
    m["count"] = count_;
    std::ofstream mf(dir + "/manifest.json");
    mf << m.dump(2) << "\n";
    std::ofstream bf(dir + "/records.bin", std::ios::binary);
    bf.write(reinterpret_cast<const char*>(bytes_.data()),
             static_cast<std::streamsize>(bytes_.size()));
    IM_CHECK(bf.good(), "failed to write records to " + dir);
  }

  static Dataset load(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    IM_CHECK(mf.good(), "missing manifest in " + dir);
    nlohmann::json m = nlohmann::json::parse(mf);
    Dataset d(m.at("T"), m.at("frame_height"), m.at("frame_width"), m.at("action_len"));
    d.manifest_ = m;
    d.count_ = m.at("count");
    std::ifstream bf(dir + "/records.bin", std::ios::binary);
    IM_CHECK(bf.good(), "missing records in " + dir);
    d.bytes_.resize(static_cast<size_t>(d.count_) * d.record_bytes());
    bf.read(reinterpret_cast<char*>(d.bytes_.data()),
            static_cast<std::streamsize>(d.bytes_.size()));
    IM_CHECK(bf.gcount() == static_cast<std::streamsize>(d.bytes_.size()),
             "records file truncated in " + dir);
    return d;
  }

 private:
  size_t record_bytes() const {
    return static_cast<size_t>(3 + T_) * h_ * w_ * 3 +
           static_cast<size_t>(T_) * alen_ + static_cast<size_t>(T_) * sizeof(float);
  }

  int T_ = 0, h_ = 0, w_ = 0, alen_ = 0;
  int count_ = 0;
  std::vector<uint8_t> bytes_;
  nlohmann::json manifest_;
};

}  // namespace imagine
