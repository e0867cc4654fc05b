#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <vector>

#include "imagine/agent/i2a.hpp"
#include "imagine/env/collect.hpp"

namespace imagine {

struct A2CConfig {
  int env_copies = 16;
  int action_repeat = 4;
  long total_env_steps = 100000;  // raw environment steps across all copies
  double lr = 7e-4;
  uint64_t seed = 0;
  int log_every_updates = 25;
  std::string out_dir;  // empty: no files written
};

struct AgentMetricsRow {
  long env_steps = 0;
  long updates = 0;
  double mean_return = 0;  // running mean over the last 100 completed episodes
  long episodes = 0;
  double loss = 0, policy_loss = 0, value_loss = 0, entropy = 0, distill_kl = 0;
};

inline void write_agent_metrics(const std::string& path,
                                const std::vector<AgentMetricsRow>& rows) {
  std::ofstream f(path);
  f << "env_steps,updates,mean_return,episodes,loss,policy_loss,value_loss,entropy,"
       "distill_kl\n";
  for (const auto& r : rows) {
    f << r.env_steps << "," << r.updates << "," << r.mean_return << "," << r.episodes
      << "," << r.loss << "," << r.policy_loss << "," << r.value_loss << "," << r.entropy
      << "," << r.distill_kl << "\n";
  }
}

/// Synchronous n-step advantage actor-critic over parallel environment
/// copies with action repeat. One learner owns the parameters; the
/// environment model (when present) receives no updates. Deterministic for
/// a fixed seed.
template <typename T>
class A2CTrainer {
 public:
  A2CTrainer(Agent<T>& agent, const Env& prototype, A2CConfig cfg)
      : agent_(agent),
        cfg_(cfg),
        opt_(AdamConfig{cfg.lr}, "agent/"),
        act_rng_(splitmix64_mix(cfg.seed, 0x616374ull)),
        rollout_rng_(splitmix64_mix(cfg.seed, 0x726f6cull)) {
    IM_CHECK(cfg_.env_copies >= 1 && cfg_.action_repeat >= 1, "bad trainer config");
    for (int i = 0; i < cfg_.env_copies; ++i) {
      slots_.push_back(Slot{prototype.clone_config(), {}, 0.0,
                            splitmix64_mix(cfg.seed, 0x657073ull + i)});
      reset_slot(slots_.back());
    }
  }

  const std::vector<AgentMetricsRow>& metrics() const { return metrics_; }
  long env_steps() const { return env_steps_; }
  long updates() const { return updates_; }
  double mean_recent_return() const {
    if (recent_returns_.empty()) return 0.0;
    return std::accumulate(recent_returns_.begin(), recent_returns_.end(), 0.0) /
           recent_returns_.size();
  }

  /// One synchronous update over all environment copies; returns the loss.
  double update() {
    const AgentConfig& acfg = agent_.config();
    agent_.store().zero_grads();
    double loss_acc = 0, pg_acc = 0, value_acc = 0, ent_acc = 0, kl_acc = 0;
    const T norm = T(1) / static_cast<T>(acfg.unroll * cfg_.env_copies);

    for (auto& slot : slots_) {
      Tape<T> tape;
      struct StepRec {
        Var logits, value, pi_r_logits, query_entropy;
        int action = 0;
        double reward = 0;
        bool done = false;
      };
      std::vector<StepRec> recs;
      for (int t = 0; t < acfg.unroll; ++t) {
        auto fwd = agent_.forward(tape, slot.history, rollout_rng_, true);
        const Tensor<T>& probs = tape.val(softmax(tape, fwd.logits));
        std::vector<double> p(probs.data(), probs.data() + probs.numel());
        const int action = act_rng_.categorical(p.data(), static_cast<int>(p.size()));
        auto [reward, done] = step_env(slot, action);
        recs.push_back({fwd.logits, fwd.value, fwd.pi_r_logits, fwd.query_entropy,
                        action, reward, done});
      }
      // bootstrap from the value of the post-unroll state
      double bootstrap = 0.0;
      if (!recs.back().done) {
        Tape<T> scratch;
        auto fwd = agent_.forward(scratch, slot.history, rollout_rng_, false);
        bootstrap = static_cast<double>(scratch.val(fwd.value)[0]);
      }
      // n-step returns
      std::vector<double> returns(recs.size());
      double run = bootstrap;
      for (int t = static_cast<int>(recs.size()) - 1; t >= 0; --t) {
        run = recs[t].reward + (recs[t].done ? 0.0 : acfg.discount * run);
        returns[t] = run;
      }

      Var loss;
      for (size_t t = 0; t < recs.size(); ++t) {
        const StepRec& r = recs[t];
        const double v = static_cast<double>(tape.val(r.value)[0]);
        const double adv = returns[t] - v;
        Var logp = pick(tape, log_softmax(tape, r.logits), r.action);
        Var pg = scale(tape, logp, static_cast<T>(-adv));
        Var vdiff = affine(tape, r.value, T(1), static_cast<T>(-returns[t]));
        Var vloss = scale(tape, square(tape, vdiff), static_cast<T>(acfg.value_coeff));
        Var probs = softmax(tape, r.logits);
        Var logprobs = log_softmax(tape, r.logits);
        Var entropy = scale(tape, dot(tape, probs, logprobs), T(-1));
        Var ent_term = scale(tape, entropy, static_cast<T>(-acfg.entropy_bonus));
        Var step_loss = add(tape, add(tape, pg, vloss), ent_term);
        if (r.pi_r_logits.valid()) {
          Var dl = distillation_loss(tape, r.logits, r.pi_r_logits, acfg.lambda_distill);
          step_loss = add(tape, step_loss, dl);
          kl_acc += static_cast<double>(tape.val(dl)[0]) /
                    std::max(acfg.lambda_distill, 1e-12);
        }
        if (r.query_entropy.valid() && acfg.query_entropy_weight > 0) {
          step_loss = add(tape, step_loss,
                          scale(tape, r.query_entropy,
                                static_cast<T>(acfg.query_entropy_weight)));
        }
        pg_acc += static_cast<double>(tape.val(pg)[0]);
        value_acc += static_cast<double>(tape.val(vloss)[0]);
        ent_acc += static_cast<double>(tape.val(entropy)[0]);
        loss = loss.valid() ? add(tape, loss, step_loss) : step_loss;
      }
      loss = scale(tape, loss, norm);
      const double lv = static_cast<double>(tape.val(loss)[0]);
      IM_CHECK(std::isfinite(lv), "agent training diverged: non-finite loss at update " +
                                      std::to_string(updates_));
      loss_acc += lv;
      tape.backward(loss);
    }
    opt_.step(agent_.store());
    ++updates_;

    const double steps_n = static_cast<double>(acfg.unroll * cfg_.env_copies);
    window_.loss += loss_acc;
    window_.pg += pg_acc / steps_n;
    window_.value += value_acc / steps_n;
    window_.entropy += ent_acc / steps_n;
    window_.kl += kl_acc / steps_n;
    window_.count += 1;
    return loss_acc;
  }

  /// Runs until the raw environment-step budget is exhausted.
  std::vector<AgentMetricsRow> run() {
    while (env_steps_ < cfg_.total_env_steps) {
      update();
      if (updates_ % cfg_.log_every_updates == 0) log_row();
    }
    log_row();
    if (!cfg_.out_dir.empty()) {
      std::filesystem::create_directories(cfg_.out_dir);
      write_agent_metrics(cfg_.out_dir + "/metrics.csv", metrics_);
      nlohmann::json meta;
      meta["variant"] = variant_name(agent_.config().variant);
      meta["regime"] = regime_name(agent_.config().regime);
      save_checkpoint(agent_.store(), cfg_.out_dir + "/agent_final.imck", meta);
    }
    return metrics_;
  }

 private:
  struct Slot {
    std::unique_ptr<Env> env;
    std::vector<Frame> history;
    double episode_return = 0;
    uint64_t seed_state = 0;
  };

  void reset_slot(Slot& slot) {
    Frame f = slot.env->reset(splitmix64(slot.seed_state));
    slot.history.assign(3, f);
    slot.episode_return = 0;
  }

  std::pair<double, bool> step_env(Slot& slot, int action) {
    double reward = 0;
    bool done = false;
    Frame last;
    for (int r = 0; r < cfg_.action_repeat && !done; ++r) {
      StepResult sr = slot.env->step(action);
      ++env_steps_;
      reward += sr.reward;
      last = std::move(sr.obs);
      done = sr.done;
    }
    slot.episode_return += reward;
    if (done) {
      recent_returns_.push_back(slot.episode_return);
      if (recent_returns_.size() > 100) recent_returns_.pop_front();
      ++episodes_;
      reset_slot(slot);
    } else {
      slot.history.erase(slot.history.begin());
      slot.history.push_back(std::move(last));
    }
    return {reward, done};
  }

  void log_row() {
    AgentMetricsRow row;
    row.env_steps = env_steps_;
    row.updates = updates_;
    row.mean_return = mean_recent_return();
    row.episodes = episodes_;
    const double n = std::max(1.0, window_.count);
    row.loss = window_.loss / n;
    row.policy_loss = window_.pg / n;
    row.value_loss = window_.value / n;
    row.entropy = window_.entropy / n;
    row.distill_kl = window_.kl / n;
    metrics_.push_back(row);
    window_ = Window{};
  }

  struct Window {
    double loss = 0, pg = 0, value = 0, entropy = 0, kl = 0;
    double count = 0;
  };

  Agent<T>& agent_;
  A2CConfig cfg_;
  Adam<T> opt_;
  Rng act_rng_, rollout_rng_;
  std::vector<Slot> slots_;
  std::vector<AgentMetricsRow> metrics_;
  std::deque<double> recent_returns_;
  Window window_;
  long env_steps_ = 0;
  long updates_ = 0;
  long episodes_ = 0;
};

}  // namespace imagine
