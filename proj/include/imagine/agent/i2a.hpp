#pragma once

#include <optional>
#include <string>
#include <vector>

#include "imagine/agent/nets.hpp"
#include "imagine/rollout/rollout.hpp"

namespace imagine {

enum class AgentVariant {
  ModelFree,
  I2aState,
  I2aPixel,
  CopyBaseline,
  UntrainedModelBaseline
};

enum class RolloutRegime { Random, Distilled, LearnToQuery, Modulation };

inline const char* variant_name(AgentVariant v) {
  switch (v) {
    case AgentVariant::ModelFree: return "model-free";
    case AgentVariant::I2aState: return "i2a-state";
    case AgentVariant::I2aPixel: return "i2a-pixel";
    case AgentVariant::CopyBaseline: return "copy-baseline";
    case AgentVariant::UntrainedModelBaseline: return "untrained-model";
  }
  return "?";
}

inline AgentVariant variant_from_name(const std::string& s) {
  for (AgentVariant v : {AgentVariant::ModelFree, AgentVariant::I2aState,
                         AgentVariant::I2aPixel, AgentVariant::CopyBaseline,
                         AgentVariant::UntrainedModelBaseline}) {
    if (s == variant_name(v)) return v;
  }
  IM_CHECK(false, "unknown agent variant " + s);
  return AgentVariant::ModelFree;
}

inline const char* regime_name(RolloutRegime r) {
  switch (r) {
    case RolloutRegime::Random: return "random";
    case RolloutRegime::Distilled: return "distilled";
    case RolloutRegime::LearnToQuery: return "learn-to-query";
    case RolloutRegime::Modulation: return "modulation";
  }
  return "?";
}

inline RolloutRegime regime_from_name(const std::string& s) {
  for (RolloutRegime r : {RolloutRegime::Random, RolloutRegime::Distilled,
                          RolloutRegime::LearnToQuery, RolloutRegime::Modulation}) {
    if (s == regime_name(r)) return r;
  }
  IM_CHECK(false, "unknown rollout policy regime " + s);
  return RolloutRegime::Random;
}

struct AgentConfig {
  AgentVariant variant = AgentVariant::I2aState;
  RolloutRegime regime = RolloutRegime::Distilled;
  int rollout_count = 5;   // K
  int rollout_depth = 2;   // tau
  double lambda_distill = 0.1;
  double query_entropy_weight = 0.0;  // sharpening penalty on pi_r (learn-to-query)
  // actor-critic
  double discount = 0.99;
  int unroll = 5;
  double value_coeff = 0.5;
  double entropy_bonus = 0.01;
  // frame geometry fallback, used only when no model is attached
  int frame_height = 80;
  int frame_width = 80;
  int action_count = 5;

  void validate() const {
    IM_CHECK(rollout_count >= 0 && rollout_depth >= 1, "bad rollout dimensions");
    IM_CHECK(lambda_distill >= 0 && query_entropy_weight >= 0, "weights must be >= 0");
    IM_CHECK(discount > 0 && discount <= 1, "discount in (0,1]");
  }
};

/// Imagination-augmented actor-critic agent. The policy/value heads combine
/// a model-free CNN path with a summary of K Monte-Carlo rollouts of a
/// pre-trained, frozen environment model. Baselines reuse the identical
/// architecture with the model path degraded (copies of the initial state,
/// an untrained model, or no model path at all).
template <typename T>
class Agent {
 public:
  static constexpr int kLstmHidden = 256;

  Agent(AgentConfig cfg, ParamStore<T>& store, const EnvModel<T>* model,
        std::string scope = "agent")
      : cfg_(cfg), store_(&store), model_(model), scope_(std::move(scope)) {
    cfg_.validate();
    if (cfg_.variant != AgentVariant::ModelFree) {
      IM_CHECK(model_ != nullptr, "this variant needs an environment model");
    }
    const ModelConfig* mc = model_ ? &model_->config() : nullptr;
    height_ = mc ? mc->height : cfg_.frame_height;
    width_ = mc ? mc->width : cfg_.frame_width;
    actions_ = mc ? mc->action_count : cfg_.action_count;
    if (cfg_.regime == RolloutRegime::Modulation) {
      IM_CHECK(mc && mc->family == ModelFamily::SSSM_UNCOND,
               "the modulation regime requires an action-unconditional model");
    }
    if (cfg_.variant == AgentVariant::I2aPixel) {
      IM_CHECK(cfg_.regime != RolloutRegime::LearnToQuery &&
                   cfg_.regime != RolloutRegime::Modulation,
               "pixel rollouts support the random and distilled regimes");
    }

    mf_ = ModelFreePath<T>(store, scope_ + "/mf", height_, width_);
    const bool has_model_path = cfg_.variant != AgentVariant::ModelFree;
    const int code = has_model_path ? cfg_.rollout_count * kLstmHidden : 0;
    head_ = Dense<T>(store, scope_ + "/head", code + 512, actions_ + 1);

    if (has_model_path && cfg_.rollout_count > 0) {
      const bool pixels = cfg_.variant == AgentVariant::I2aPixel;
      const int in_h = pixels ? height_ : mc->state_height();
      const int in_w = pixels ? width_ : mc->state_width();
      const int in_ch = pixels ? 3 : mc->state_channels();
      enc_ = ImaginationEncoder<T>(store, scope_ + "/summarizer/enc", pixels, in_h, in_w,
                                   in_ch);
      lstm_ = LstmCell<T>(store, scope_ + "/summarizer/lstm", 128, kLstmHidden);
    }
    if (needs_rollout_policy()) {
      if (cfg_.variant == AgentVariant::I2aPixel) {
        pixel_pi_r_ = PixelRolloutPolicy<T>(store, scope_ + "/pi_r", height_, width_,
                                            actions_);
      } else {
        state_pi_r_ = StateRolloutPolicy<T>(store, scope_ + "/pi_r", mc->state_height(),
                                            mc->state_width(), mc->state_channels(),
                                            actions_);
      }
    }
    if (cfg_.regime == RolloutRegime::Modulation) {
      p_imag_ = GaussianHead<T>(store, scope_ + "/p_imag",
                                mc->state_channels() + mc->action_len(), mc->sc(32),
                                mc->state_channels());
    }
  }

  const AgentConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return *store_; }
  const EnvModel<T>* model() const { return model_; }
  int action_count() const { return actions_; }
  const GaussianHead<T>& p_imag() const { return p_imag_; }

  bool needs_rollout_policy() const {
    return cfg_.variant != AgentVariant::ModelFree &&
           cfg_.variant != AgentVariant::CopyBaseline &&
           cfg_.variant != AgentVariant::UntrainedModelBaseline &&
           cfg_.rollout_count > 0 &&
           (cfg_.regime == RolloutRegime::Distilled ||
            cfg_.regime == RolloutRegime::LearnToQuery);
  }

  struct Forward {
    Var logits;
    Var value;
    Var pi_r_logits;       // at s_{t|t}; valid under the distilled regime
    Var query_entropy;     // mean entropy of pi_r over imagined steps (learn-to-query)
    long generative_steps = 0;
  };

  /// One decision. `frames` holds the last 3 observed frames (oldest
  /// first); the newest is the current observation. Records everything on
  /// the caller's tape; the model stays frozen, agent parameters follow
  /// `train_agent_params`.
  Forward forward(Tape<T>& tape, const std::vector<Frame>& frames, Rng& rng,
                  bool train_agent_params = true) const {
    IM_CHECK(frames.size() == 3, "agent forward needs the last 3 frames");
    Ctx<T> agent_ctx{tape, train_agent_params};
    Ctx<T> model_ctx{tape, false};  // pre-trained model is always frozen

    Var obs = tape.constant(frames.back().template cast<T>());
    Var mf_code = mf_(agent_ctx, obs);

    Forward out;
    std::vector<Var> head_in;
    if (cfg_.variant != AgentVariant::ModelFree && cfg_.rollout_count > 0) {
      const long gen_before = model_->counters().generative_steps;
      Var code = model_based_code(agent_ctx, model_ctx, frames, rng, out);
      out.generative_steps = model_->counters().generative_steps - gen_before;
      head_in.push_back(code);
    }
    head_in.push_back(mf_code);
    Var joint = head_in.size() == 1 ? head_in[0] : concat_last(tape, head_in);
    Var head_out = head_(agent_ctx, joint);
    out.logits = slice_last(tape, head_out, 0, actions_);
    out.value = pick(tape, head_out, actions_);
    return out;
  }

  /// pi_r logits for an abstract state (value domain), used when sampling
  /// rollout actions under the distilled regime and for its loss target.
  Var pi_r_logits_var(Ctx<T>& c, Var feature) const {
    IM_CHECK(needs_rollout_policy(), "this agent has no rollout policy");
    if (cfg_.variant == AgentVariant::I2aPixel) return pixel_pi_r_(c, feature);
    return state_pi_r_(c, feature);
  }

 private:
  /// Expected value of the reward-head output under independent bit
  /// probabilities, plus the zero and sign probabilities.
  Var reward_stats_from_logits(Ctx<T>& c, Var logits) const {
    const int N = model_->config().reward_bits;
    Var probs = sigmoid(c.tape, logits);
    Var mag_bits = slice_last(c.tape, probs, 0, N);
    Tensor<T> pow2({N});
    for (int i = 0; i < N; ++i) pow2[i] = static_cast<T>(1L << i);
    Var magnitude = dot(c.tape, mag_bits, c.tape.constant(pow2));
    Var p_sign = pick(c.tape, probs, N);
    Var p_zero = pick(c.tape, probs, N + 1);
    Var sign_factor = affine(c.tape, p_sign, T(-2), T(1));   // 1 - 2 p_sign
    Var nonzero = affine(c.tape, p_zero, T(-1), T(1));       // 1 - p_zero
    Var expected = mul(c.tape, mul(c.tape, magnitude, sign_factor), nonzero);
    return concat_last(c.tape, {expected, p_zero, p_sign});
  }

  Var zero_reward_stats(Ctx<T>& c) const {
    return c.tape.constant(Tensor<T>({ImaginationEncoder<T>::kRewardStats}));
  }

  /// Summarizes one rollout: steps consumed in reverse order, final hidden
  /// state returned.
  Var summarize_chain(Ctx<T>& c, const std::vector<Var>& feats,
                      const std::vector<Var>& rstats) const {
    typename LstmCell<T>::State st = lstm_.zero_state(c);
    for (int t = static_cast<int>(feats.size()) - 1; t >= 0; --t) {
      Var enc = enc_(c, feats[t], rstats[t]);
      st = lstm_(c, enc, st);
    }
    return st.h;
  }

  Var model_based_code(Ctx<T>& agent_ctx, Ctx<T>& model_ctx,
                       const std::vector<Frame>& frames, Rng& rng, Forward& out) const {
    Tape<T>& tape = agent_ctx.tape;
    const ModelConfig& mc = model_->config();
    std::vector<Var> ctx_vars;
    for (const auto& f : frames) ctx_vars.push_back(tape.constant(f.template cast<T>()));
    StateVars<T> s_init = model_->init_state_vars(model_ctx, ctx_vars);
    const bool pixels = cfg_.variant == AgentVariant::I2aPixel;

    if (needs_rollout_policy() && cfg_.regime == RolloutRegime::Distilled) {
      out.pi_r_logits = pi_r_logits_var(agent_ctx, pixels ? ctx_vars.back() : s_init.s);
    }

    RolloutRequest req;
    req.count = cfg_.rollout_count;
    req.depth = cfg_.rollout_depth;
    req.features = pixels ? RolloutFeatures::Pixels : RolloutFeatures::State;
    req.seed = rng.next_u64();

    std::vector<std::vector<Var>> feats(req.count), rstats(req.count);

    if (cfg_.variant == AgentVariant::CopyBaseline) {
      // all imaginations are the initial state representation; no model steps
      for (int k = 0; k < req.count; ++k)
        for (int t = 0; t < req.depth; ++t) {
          feats[k].push_back(s_init.s);
          rstats[k].push_back(zero_reward_stats(agent_ctx));
        }
    } else if (cfg_.regime == RolloutRegime::LearnToQuery) {
      // relaxed probability vectors, differentiable through the whole chain
      std::vector<Var> entropies;
      auto provider = [&](Ctx<T>& c2, Var state, int, int) {
        Ctx<T> pc{c2.tape, agent_ctx.train};
        Var logits = pi_r_logits_var(pc, state);
        Var probs = softmax(c2.tape, logits);
        Var logp = log_softmax(c2.tape, logits);
        entropies.push_back(scale(c2.tape, dot(c2.tape, probs, logp), T(-1)));
        if (mc.jumpy_factor == 1) return probs;
        std::vector<Var> blocks(mc.jumpy_factor, probs);
        return concat_last(c2.tape, blocks);
      };
      auto bundle = rollout_on_tape<T>(model_ctx, *model_, s_init, req, provider);
      for (int k = 0; k < req.count; ++k)
        for (int t = 0; t < req.depth; ++t) {
          feats[k].push_back(bundle.features[k][t]);
          rstats[k].push_back(
              reward_stats_from_logits(agent_ctx, bundle.reward_logits[k][t]));
        }
      if (!entropies.empty()) {
        Var total = entropies[0];
        for (size_t i = 1; i < entropies.size(); ++i)
          total = add(tape, total, entropies[i]);
        out.query_entropy = scale(tape, total, T(1) / static_cast<T>(entropies.size()));
      }
    } else if (cfg_.regime == RolloutRegime::Modulation) {
      PriorOverride<T> over{&p_imag_, agent_ctx.train};
      auto provider = [&](Ctx<T>& c2, Var, int, int) {
        return c2.tape.constant(Tensor<T>({mc.action_len()}));
      };
      auto bundle = rollout_on_tape<T>(model_ctx, *model_, s_init, req, provider, &over);
      for (int k = 0; k < req.count; ++k)
        for (int t = 0; t < req.depth; ++t) {
          feats[k].push_back(bundle.features[k][t]);
          rstats[k].push_back(
              reward_stats_from_logits(agent_ctx, bundle.reward_logits[k][t]));
        }
    } else {
      // Random or Distilled: sampled one-hot actions, chain treated as data
      RolloutPolicyFn<T> policy;
      if (cfg_.regime == RolloutRegime::Random ||
          cfg_.variant == AgentVariant::UntrainedModelBaseline) {
        const int A = actions_;
        policy = [A](const Tensor<T>&, Rng& r) { return r.uniform_int(A); };
      } else {
        policy = [this](const Tensor<T>& feature, Rng& r) {
          Tape<T> scratch;
          Ctx<T> c2{scratch, false};
          Var logits = pi_r_logits_var(c2, scratch.constant(feature));
          const Tensor<T>& p = scratch.val(softmax(scratch, logits));
          std::vector<double> probs(p.data(), p.data() + p.numel());
          return r.categorical(probs.data(), static_cast<int>(probs.size()));
        };
      }
      ModelState<T> init_value = model_->lower(tape, s_init);
      auto bundle = rollout<T>(*model_, init_value, req, policy);
      for (int k = 0; k < req.count; ++k)
        for (int t = 0; t < req.depth; ++t) {
          feats[k].push_back(tape.constant(bundle.features[k][t]));
          Ctx<T> cc{tape, false};
          rstats[k].push_back(reward_stats_from_logits(
              cc, tape.constant(bundle.reward_logits[k][t])));
        }
    }

    std::vector<Var> codes;
    for (int k = 0; k < req.count; ++k)
      codes.push_back(summarize_chain(agent_ctx, feats[k], rstats[k]));
    return codes.size() == 1 ? codes[0] : concat_last(tape, codes);
  }

  AgentConfig cfg_;
  ParamStore<T>* store_;
  const EnvModel<T>* model_;
  std::string scope_;
  int height_ = 80, width_ = 80, actions_ = 5;
  ModelFreePath<T> mf_;
  Dense<T> head_;
  ImaginationEncoder<T> enc_;
  LstmCell<T> lstm_;
  StateRolloutPolicy<T> state_pi_r_;
  PixelRolloutPolicy<T> pixel_pi_r_;
  GaussianHead<T> p_imag_;
};

/// lambda_D * KL(pi || pi_r) with the behavioral policy detached; gradients
/// reach only pi_r.
template <typename T>
Var distillation_loss(Tape<T>& tp, Var pi_logits, Var pi_r_logits, double lambda) {
  const Tensor<T>& pl = tp.val(pi_logits);
  IM_CHECK(pl.shape() == tp.val(pi_r_logits).shape(),
           "distillation: action arity mismatch");
  Var pi_const = stop_gradient(tp, softmax(tp, pi_logits));
  Var log_pi_const = stop_gradient(tp, log_softmax(tp, pi_logits));
  Var log_pi_r = log_softmax(tp, pi_r_logits);
  Var cross = dot(tp, pi_const, sub(tp, log_pi_const, log_pi_r));
  return scale(tp, cross, static_cast<T>(lambda));
}

}  // namespace imagine
