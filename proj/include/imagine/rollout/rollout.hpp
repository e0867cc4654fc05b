#pragma once

#include <functional>
#include <vector>

#include "imagine/model/model.hpp"

namespace imagine {

enum class RolloutFeatures { State, Pixels };

struct RolloutRequest {
  int count = 1;   // K independent chains
  int depth = 1;   // tau steps per chain
  RolloutFeatures features = RolloutFeatures::State;
  StepMode mode = StepMode::Sample;
  uint64_t seed = 0;

  void validate() const {
    IM_CHECK(count >= 1 && depth >= 1, "rollout needs count >= 1 and depth >= 1");
  }
};

/// K x tau imagined features plus per-step reward logits and the actions
/// that produced them.
template <typename T>
struct ImaginationBundle {
  std::vector<std::vector<Tensor<T>>> features;       // [K][tau]
  std::vector<std::vector<Tensor<T>>> reward_logits;  // [K][tau]
  std::vector<std::vector<Tensor<T>>> actions;        // [K][tau]
  ModelState<T> init;

  int count() const { return static_cast<int>(features.size()); }
  int depth() const { return features.empty() ? 0 : static_cast<int>(features[0].size()); }
};

/// Chooses internal actions during rollouts. Returns an action index given
/// the current abstract state (or rendered frame, for pixel rollouts).
template <typename T>
using RolloutPolicyFn = std::function<int(const Tensor<T>& feature, Rng& rng)>;

namespace detail_rollout {

inline ActionRecord repeat_one_hot(int action, int arity, int chunk) {
  std::vector<ActionRecord> parts(chunk, ActionRecord::one_hot(action, arity));
  return ActionRecord::concat(parts);
}

template <typename T>
void check_rollout_model(const EnvModel<T>& model, const RolloutRequest& req) {
  req.validate();
  if (req.features == RolloutFeatures::State) {
    IM_CHECK(has_abstract_rollout(model.config().family),
             std::string("state-feature rollouts require an abstract state; family ") +
                 family_name(model.config().family) + " must render pixels");
  }
}

}  // namespace detail_rollout

/// Monte-Carlo rollout in the value domain: K independent chains of `depth`
/// generative steps from one initial state. State-feature rollouts never
/// touch the pixel decoder; pixel rollouts decode every step. Actions come
/// from `policy` (or `fixed_actions` for all chains when given).
template <typename T>
ImaginationBundle<T> rollout(const EnvModel<T>& model, const ModelState<T>& s_init,
                             const RolloutRequest& req, RolloutPolicyFn<T> policy,
                             const std::vector<ActionRecord>& fixed_actions = {}) {
  detail_rollout::check_rollout_model(model, req);
  const ModelConfig& cfg = model.config();
  if (!fixed_actions.empty()) {
    IM_CHECK(static_cast<int>(fixed_actions.size()) == req.depth,
             "fixed action sequence must have length tau");
  } else {
    IM_CHECK(static_cast<bool>(policy), "rollout needs a policy or a fixed sequence");
  }
  const bool pixels = req.features == RolloutFeatures::Pixels;
  ImaginationBundle<T> bundle;
  bundle.init = s_init;
  bundle.features.resize(req.count);
  bundle.reward_logits.resize(req.count);
  bundle.actions.resize(req.count);

  Tape<T> tape;
  for (int k = 0; k < req.count; ++k) {
    Rng chain_rng(splitmix64_mix(req.seed, 0x726f6c6cull + k));
    ModelState<T> st = s_init;
    for (int t = 0; t < req.depth; ++t) {
      ActionRecord rec;
      if (!fixed_actions.empty()) {
        rec = fixed_actions[t];
      } else {
        const Tensor<T>& feat = pixels ? (st.s.empty() ? st.fifo_frames.back() : st.s)
                                       : st.s;
        rec = detail_rollout::repeat_one_hot(policy(feat, chain_rng), cfg.action_count,
                                             cfg.jumpy_factor);
      }
      tape.reset();
      Ctx<T> c{tape, false};
      StateVars<T> sv = model.lift(c, st);
      Var action = tape.constant(rec.encoded.template cast<T>());
      StepVars<T> out = model.generative_step_vars(c, sv, action, &chain_rng, req.mode,
                                                   /*decode_pixels=*/pixels);
      if (pixels) {
        bundle.features[k].push_back(tape.val(sigmoid(tape, out.pixel_log_odds)));
      } else {
        bundle.features[k].push_back(tape.val(out.next.s));
      }
      bundle.reward_logits[k].push_back(tape.val(out.reward_logits));
      bundle.actions[k].push_back(tape.val(action));
      st = model.lower(tape, out.next);
    }
  }
  return bundle;
}

/// Relaxed-action rollout: probability vectors are tiled into the model in
/// place of one-hot records. At one-hot inputs this is bitwise identical to
/// rollout(). Vectors must be nonnegative and sum to 1 (tolerance 1e-6) per
/// action block.
template <typename T>
ImaginationBundle<T> rollout_relaxed(const EnvModel<T>& model, const ModelState<T>& s_init,
                                     const RolloutRequest& req,
                                     const std::vector<Tensor<T>>& prob_vectors) {
  detail_rollout::check_rollout_model(model, req);
  const ModelConfig& cfg = model.config();
  IM_CHECK(static_cast<int>(prob_vectors.size()) == req.depth,
           "need one probability vector per rollout step");
  for (const auto& p : prob_vectors) {
    IM_CHECK(p.numel() == cfg.action_len(), "probability vector length mismatch");
    for (int b = 0; b < cfg.jumpy_factor; ++b) {
      T sum = 0;
      for (int a = 0; a < cfg.action_count; ++a) {
        const T v = p[b * cfg.action_count + a];
        IM_CHECK(v >= T(0), "action probabilities must be nonnegative");
        sum += v;
      }
      IM_CHECK(std::abs(sum - T(1)) <= T(1e-6),
               "action probabilities must sum to 1 per block");
    }
  }
  const bool pixels = req.features == RolloutFeatures::Pixels;
  ImaginationBundle<T> bundle;
  bundle.init = s_init;
  bundle.features.resize(req.count);
  bundle.reward_logits.resize(req.count);
  bundle.actions.resize(req.count);
  Tape<T> tape;
  for (int k = 0; k < req.count; ++k) {
    Rng chain_rng(splitmix64_mix(req.seed, 0x726f6c6cull + k));
    ModelState<T> st = s_init;
    for (int t = 0; t < req.depth; ++t) {
      tape.reset();
      Ctx<T> c{tape, false};
      StateVars<T> sv = model.lift(c, st);
      Var action = tape.constant(prob_vectors[t]);
      StepVars<T> out = model.generative_step_vars(c, sv, action, &chain_rng, req.mode,
                                                   pixels);
      if (pixels) {
        bundle.features[k].push_back(tape.val(sigmoid(tape, out.pixel_log_odds)));
      } else {
        bundle.features[k].push_back(tape.val(out.next.s));
      }
      bundle.reward_logits[k].push_back(tape.val(out.reward_logits));
      bundle.actions[k].push_back(tape.val(action));
      st = model.lower(tape, out.next);
    }
  }
  return bundle;
}

/// On-tape rollout for training paths that differentiate through the chain
/// (learning-to-query, modulation). `action_provider` returns the action
/// record Var for chain k, step t, given the current state Var; it may be a
/// differentiable function of the state. The chain stays on the caller's
/// tape; model parameters follow the Ctx's trainable flag.
template <typename T>
struct BundleVars {
  std::vector<std::vector<Var>> features;
  std::vector<std::vector<Var>> reward_logits;
  std::vector<std::vector<Var>> actions;
};

template <typename T>
BundleVars<T> rollout_on_tape(
    Ctx<T>& c, const EnvModel<T>& model, const StateVars<T>& s_init,
    const RolloutRequest& req,
    const std::function<Var(Ctx<T>&, Var state, int k, int t)>& action_provider,
    const PriorOverride<T>* prior_override = nullptr) {
  detail_rollout::check_rollout_model(model, req);
  const bool pixels = req.features == RolloutFeatures::Pixels;
  BundleVars<T> bundle;
  bundle.features.resize(req.count);
  bundle.reward_logits.resize(req.count);
  bundle.actions.resize(req.count);
  for (int k = 0; k < req.count; ++k) {
    Rng chain_rng(splitmix64_mix(req.seed, 0x726f6c6cull + k));
    StateVars<T> st = s_init;
    for (int t = 0; t < req.depth; ++t) {
      Var action = action_provider(c, st.s, k, t);
      StepVars<T> out = model.generative_step_vars(c, st, action, &chain_rng, req.mode,
                                                   pixels, prior_override);
      bundle.features[k].push_back(pixels ? sigmoid(c.tape, out.pixel_log_odds)
                                          : out.next.s);
      bundle.reward_logits[k].push_back(out.reward_logits);
      bundle.actions[k].push_back(action);
      st = out.next;
    }
  }
  return bundle;
}

}  // namespace imagine
