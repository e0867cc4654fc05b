#pragma once

#include <optional>
#include <string>
#include <vector>

#include "imagine/env/env.hpp"
#include "imagine/model/losses.hpp"
#include "imagine/nn/blocks.hpp"

namespace imagine {

enum class ModelFamily { AR, RAR, DSSM_DET, DSSM_VAE, SSSM, SSSM_UNCOND, BASELINE_VAE };

inline const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::AR: return "ar";
    case ModelFamily::RAR: return "rar";
    case ModelFamily::DSSM_DET: return "dssm-det";
    case ModelFamily::DSSM_VAE: return "dssm-vae";
    case ModelFamily::SSSM: return "sssm";
    case ModelFamily::SSSM_UNCOND: return "sssm-uncond";
    case ModelFamily::BASELINE_VAE: return "baseline-vae";
  }
  return "?";
}

inline ModelFamily family_from_name(const std::string& s) {
  for (ModelFamily f : {ModelFamily::AR, ModelFamily::RAR, ModelFamily::DSSM_DET,
                        ModelFamily::DSSM_VAE, ModelFamily::SSSM, ModelFamily::SSSM_UNCOND,
                        ModelFamily::BASELINE_VAE}) {
    if (s == family_name(f)) return f;
  }
  IM_CHECK(false, "unknown model family " + s);
  return ModelFamily::SSSM;
}

/// True for families whose training objective carries a KL term.
inline bool has_posterior(ModelFamily f) {
  return f == ModelFamily::DSSM_VAE || f == ModelFamily::SSSM ||
         f == ModelFamily::SSSM_UNCOND || f == ModelFamily::BASELINE_VAE;
}

inline bool is_state_space(ModelFamily f) {
  return f == ModelFamily::RAR || f == ModelFamily::DSSM_DET ||
         f == ModelFamily::DSSM_VAE || f == ModelFamily::SSSM ||
         f == ModelFamily::SSSM_UNCOND;
}

/// Families whose rollouts can stay in abstract state space (no pixel
/// rendering required per step).
inline bool has_abstract_rollout(ModelFamily f) {
  return f == ModelFamily::DSSM_DET || f == ModelFamily::DSSM_VAE ||
         f == ModelFamily::SSSM || f == ModelFamily::SSSM_UNCOND;
}

struct ModelConfig {
  ModelFamily family = ModelFamily::SSSM;
  int height = 80;
  int width = 80;
  int action_count = 5;
  int jumpy_factor = 1;  // c; trajectories must already be preprocessed
  int ar_order = 3;      // AR only
  int reward_bits = 8;   // N
  double channel_scale = 1.0;

  int sc(int c) const {
    return std::max(1, static_cast<int>(std::lround(c * channel_scale)));
  }
  int state_channels() const { return sc(64); }
  int action_len() const { return action_count * jumpy_factor; }
  int state_height() const { return height / 8; }
  int state_width() const { return width / 8; }

  void validate() const {
    IM_CHECK(height % 8 == 0 && width % 8 == 0, "frame dims must be divisible by 8");
    IM_CHECK(action_count >= 1 && jumpy_factor >= 1, "bad action configuration");
    IM_CHECK(reward_bits >= 1, "reward_bits must be >= 1");
    IM_CHECK(channel_scale > 0.0 && channel_scale <= 1.0, "channel_scale in (0,1]");
    IM_CHECK(sc(64) % 4 == 0, "state channels must be divisible by 4 for the decoder");
    if (family == ModelFamily::AR) IM_CHECK(ar_order >= 1, "AR needs ar_order >= 1");
  }
};

/// Model state between steps, in the value domain. SSM families use `s`;
/// RAR additionally carries the previous frame; AR carries FIFO buffers of
/// the last K frames and K-1 actions instead of an abstract state.
template <typename T>
struct ModelState {
  Tensor<T> s;
  Tensor<T> prev_frame;
  std::vector<Tensor<T>> fifo_frames;
  std::vector<Tensor<T>> fifo_actions;
};

/// Same state lifted onto a tape for differentiable chaining.
template <typename T>
struct StateVars {
  Var s;
  Var prev_frame;
  std::vector<Var> fifo_frames;
  std::vector<Var> fifo_actions;
};

enum class StepMode { Sample, Mean };

template <typename T>
struct StepVars {
  StateVars<T> next;
  LatentStatsVar<T> prior;
  LatentStatsVar<T> posterior;  // only valid on inference steps of latent families
  Var z;                        // latent fed to the decoder (sample or mean)
  Var pixel_log_odds;           // only valid if pixels were decoded
  Var reward_logits;
};

/// Substitute distribution for the latent prior during rollouts (the
/// modulation agent's trainable imagination head). The replacement must have
/// the prior module's architecture; `trainable` routes gradients to it even
/// when the surrounding model is frozen.
template <typename T>
struct PriorOverride {
  const GaussianHead<T>* head = nullptr;
  bool trainable = false;
};

template <typename T>
struct SeqScoreVars {
  Var total;   // pixel + reward - kl
  Var pixel;
  Var reward;
  Var kl;
};

struct ScoreBreakdown {
  double total = 0, pixel = 0, reward = 0, kl = 0;
};

/// One action-conditional generative environment model. All step functions
/// record onto the caller's tape; value-domain wrappers use a scratch tape.
template <typename T>
class EnvModel {
 public:
  struct Counters {
    long generative_steps = 0;
    long inference_steps = 0;
    long pixel_decodes = 0;
    long encoder_calls = 0;
    void reset() { *this = Counters{}; }
  };

  EnvModel(ModelConfig cfg, ParamStore<T>& store, std::string scope = "model")
      : cfg_(cfg), store_(&store), scope_(std::move(scope)) {
    cfg_.validate();
    const int CH = cfg_.state_channels();
    const int alen = cfg_.action_len();
    encoder_ = Encoder<T>(store, scope_ + "/encoder", 3, cfg_.sc(16), cfg_.sc(32), CH);
    decoder_ = Decoder<T>(store, scope_ + "/decoder", CH, CH, cfg_.sc(32), cfg_.sc(64),
                          cfg_.sc(24), cfg_.state_height(), cfg_.state_width(),
                          cfg_.reward_bits);
    if (cfg_.family == ModelFamily::AR) {
      ar_fuse_ = ConvStack<T>(store, scope_ + "/ar_fuse", {1, CH, 3, CH, 3, CH},
                              cfg_.ar_order * CH + cfg_.ar_order * alen);
    } else {
      initial_ = InitialState<T>(store, scope_ + "/initial", CH);
      prior_ = GaussianHead<T>(store, scope_ + "/prior", CH + alen, cfg_.sc(32), CH);
      if (has_posterior(cfg_.family)) {
        posterior_ = GaussianHead<T>(store, scope_ + "/posterior", CH + alen + 3 * CH,
                                     cfg_.sc(32), CH);
      }
      if (cfg_.family != ModelFamily::BASELINE_VAE) {
        const int extra = cfg_.family == ModelFamily::RAR ? CH : 0;
        transition_ = Transition<T>(store, scope_ + "/transition", 2 * CH + alen + extra,
                                    cfg_.sc(32), cfg_.sc(32), CH);
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& store() { return *store_; }
  const std::string& scope() const { return scope_; }
  Counters& counters() const { return counters_; }

  Var encode(Ctx<T>& c, Var frame) const {
    ++counters_.encoder_calls;
    return encoder_(c, frame);
  }

  // -- initial state ---------------------------------------------------------

  StateVars<T> init_state_vars(Ctx<T>& c, const std::vector<Var>& context) const {
    IM_CHECK(context.size() == 3, "initial state needs exactly 3 context frames");
    for (Var f : context) {
      const auto& fv = c.tape.val(f);
      IM_CHECK(fv.dim(0) == cfg_.height && fv.dim(1) == cfg_.width,
               "context frame size mismatch");
    }
    StateVars<T> st;
    if (cfg_.family == ModelFamily::AR) {
      // The context fills the FIFO; actions preceding it are unknown and
      // enter as zero records.
      const int K = cfg_.ar_order;
      for (int i = 0; i < K; ++i)
        st.fifo_frames.push_back(context[context.size() - K + i]);
      for (int i = 0; i < K - 1; ++i)
        st.fifo_actions.push_back(c.tape.constant(Tensor<T>({cfg_.action_len()})));
      return st;
    }
    Var e0 = encode(c, context[0]);
    Var e1 = encode(c, context[1]);
    Var e2 = encode(c, context[2]);
    st.s = initial_(c, e0, e1, e2);
    if (cfg_.family == ModelFamily::RAR || cfg_.family == ModelFamily::BASELINE_VAE) {
      st.prev_frame = context[2];
    }
    return st;
  }

  ModelState<T> init_state(const std::vector<Frame>& context) const {
    Tape<T> tape;
    Ctx<T> c{tape, false};
    std::vector<Var> ctx_vars;
    for (const auto& f : context) ctx_vars.push_back(tape.constant(f.template cast<T>()));
    return lower(tape, init_state_vars(c, ctx_vars));
  }

  StateVars<T> lift(Ctx<T>& c, const ModelState<T>& st) const {
    StateVars<T> v;
    if (!st.s.empty()) v.s = c.tape.constant(st.s);
    if (!st.prev_frame.empty()) v.prev_frame = c.tape.constant(st.prev_frame);
    for (const auto& f : st.fifo_frames) v.fifo_frames.push_back(c.tape.constant(f));
    for (const auto& a : st.fifo_actions) v.fifo_actions.push_back(c.tape.constant(a));
    return v;
  }

  ModelState<T> lower(Tape<T>& tape, const StateVars<T>& v) const {
    ModelState<T> st;
    if (v.s.valid()) st.s = tape.val(v.s);
    if (v.prev_frame.valid()) st.prev_frame = tape.val(v.prev_frame);
    for (Var f : v.fifo_frames) st.fifo_frames.push_back(tape.val(f));
    for (Var a : v.fifo_actions) st.fifo_actions.push_back(tape.val(a));
    return st;
  }

  // -- stepping --------------------------------------------------------------

  /// Advances the model under its own generative distribution. `rng` may be
  /// null in Mean mode (or for families without stochastic nodes). RAR and
  /// AR always render pixels since they feed on their own outputs.
  StepVars<T> generative_step_vars(Ctx<T>& c, const StateVars<T>& st, Var action,
                                   Rng* rng, StepMode mode, bool decode_pixels,
                                   const PriorOverride<T>* prior_override = nullptr) const {
    ++counters_.generative_steps;
    check_action(c, action);
    StepVars<T> out;
    switch (cfg_.family) {
      case ModelFamily::AR: {
        Var fused = ar_fused(c, st, action);
        out.pixel_log_odds = decode_pixels_from(c, fused, fused);
        out.reward_logits = decoder_.reward_logits(c, fused);
        Var rendered = sigmoid(c.tape, out.pixel_log_odds);
        out.next = advance_fifo(c, st, action, rendered);
        return out;
      }
      case ModelFamily::BASELINE_VAE: {
        out.prior = prior_stats(c, st.s, effective_action(c, action));
        out.z = latent_from(c, out.prior, rng, mode);
        if (decode_pixels) out.pixel_log_odds = decode_pixels_from(c, st.s, out.z);
        out.reward_logits = decoder_.reward_logits(c, st.s);
        out.next = st;  // frames are modeled independently given the context
        return out;
      }
      default: break;
    }
    Var eff_action = effective_action(c, action);
    out.prior = prior_stats(c, st.s, eff_action, prior_override);
    const bool stochastic_state = cfg_.family == ModelFamily::SSSM ||
                                  cfg_.family == ModelFamily::SSSM_UNCOND;
    Var z_state = stochastic_state ? latent_from(c, out.prior, rng, mode) : out.prior.mu;
    std::vector<Var> parts{st.s, broadcast_action(c, eff_action), z_state};
    if (cfg_.family == ModelFamily::RAR) {
      IM_CHECK(st.prev_frame.valid(), "RAR generative step needs the previous frame");
      parts.push_back(encode(c, st.prev_frame));
    }
    out.next.s = transition_(c, concat_last(c.tape, parts));
    // Decoder latent: stochastic decoders sample (or take the mean in Mean
    // mode); the fully deterministic family always uses the prior mean.
    if (cfg_.family == ModelFamily::SSSM || cfg_.family == ModelFamily::SSSM_UNCOND) {
      out.z = z_state;
    } else if (cfg_.family == ModelFamily::DSSM_VAE) {
      out.z = latent_from(c, out.prior, rng, mode);
    } else {
      out.z = out.prior.mu;
    }
    const bool render = decode_pixels || cfg_.family == ModelFamily::RAR;
    if (render) {
      out.pixel_log_odds = decode_pixels_from(c, out.next.s, out.z);
      if (cfg_.family == ModelFamily::RAR)
        out.next.prev_frame = sigmoid(c.tape, out.pixel_log_odds);
    }
    out.reward_logits = decoder_.reward_logits(c, out.next.s);
    return out;
  }

  /// Teacher-forced step: the filtering posterior sees the next observation;
  /// latent families advance with a reparameterized posterior sample (or the
  /// prior mean, for families with deterministic state paths).
  StepVars<T> inference_step_vars(Ctx<T>& c, const StateVars<T>& st, Var action,
                                  Var next_obs, Rng& rng) const {
    ++counters_.inference_steps;
    check_action(c, action);
    StepVars<T> out;
    if (cfg_.family == ModelFamily::AR) {
      Var fused = ar_fused(c, st, action);
      out.pixel_log_odds = decode_pixels_from(c, fused, fused);
      out.reward_logits = decoder_.reward_logits(c, fused);
      out.next = advance_fifo(c, st, action, next_obs);
      return out;
    }
    Var eff_action = effective_action(c, action);
    out.prior = prior_stats(c, st.s, eff_action);

    Var z_post;
    if (has_posterior(cfg_.family)) {
      Var e_next = encode(c, next_obs);
      Var h = concat_last(c.tape, {st.s, broadcast_action(c, eff_action), e_next,
                                   out.prior.mu, out.prior.sigma});
      out.posterior = posterior_(c, h);
      z_post = reparam_sample(c, out.posterior, rng);
    }

    if (cfg_.family == ModelFamily::BASELINE_VAE) {
      out.z = z_post;
      out.pixel_log_odds = decode_pixels_from(c, st.s, out.z);
      out.reward_logits = decoder_.reward_logits(c, st.s);
      out.next = st;
      return out;
    }

    const bool stochastic_state = cfg_.family == ModelFamily::SSSM ||
                                  cfg_.family == ModelFamily::SSSM_UNCOND;
    Var z_state = stochastic_state ? z_post : out.prior.mu;
    std::vector<Var> parts{st.s, broadcast_action(c, eff_action), z_state};
    if (cfg_.family == ModelFamily::RAR) {
      IM_CHECK(st.prev_frame.valid(), "RAR inference step needs the previous frame");
      parts.push_back(encode(c, st.prev_frame));
    }
    out.next.s = transition_(c, concat_last(c.tape, parts));
    if (cfg_.family == ModelFamily::RAR) out.next.prev_frame = next_obs;
    out.z = has_posterior(cfg_.family) ? z_post : out.prior.mu;
    out.pixel_log_odds = decode_pixels_from(c, out.next.s, out.z);
    out.reward_logits = decoder_.reward_logits(c, out.next.s);
    return out;
  }

  // -- sequence objectives ----------------------------------------------------

  /// Evidence lower bound of a trajectory (to be maximized), one
  /// reparameterized posterior sample per step, analytic KL. For families
  /// without a posterior this reduces to the exact log-likelihood.
  SeqScoreVars<T> sequence_elbo_vars(Ctx<T>& c, const Trajectory& traj, Rng& rng) const {
    check_trajectory(traj);
    std::vector<Var> ctx_vars;
    for (const auto& f : traj.context)
      ctx_vars.push_back(c.tape.constant(f.template cast<T>()));
    StateVars<T> st = init_state_vars(c, ctx_vars);
    Var pixel_total, reward_total, kl_total;
    for (int t = 0; t < traj.steps(); ++t) {
      Var action = c.tape.constant(traj.actions[t].encoded.template cast<T>());
      Tensor<T> next_obs = traj.observations[t].template cast<T>();
      Var obs_var = c.tape.constant(next_obs);
      StepVars<T> step = inference_step_vars(c, st, action, obs_var, rng);
      Var px = pixel_log_prob(c.tape, step.pixel_log_odds, next_obs);
      Var rw = reward_log_prob(c.tape, step.reward_logits, traj.rewards[t],
                               cfg_.reward_bits);
      pixel_total = pixel_total.valid() ? add(c.tape, pixel_total, px) : px;
      reward_total = reward_total.valid() ? add(c.tape, reward_total, rw) : rw;
      if (has_posterior(cfg_.family)) {
        Var kl = gaussian_kl(c.tape, step.posterior, step.prior);
        kl_total = kl_total.valid() ? add(c.tape, kl_total, kl) : kl;
      }
      st = step.next;
    }
    if (!kl_total.valid()) kl_total = c.tape.constant(Tensor<T>::scalar(T(0)));
    Var total = sub(c.tape, add(c.tape, pixel_total, reward_total), kl_total);
    return {total, pixel_total, reward_total, kl_total};
  }

  ScoreBreakdown sequence_elbo(const Trajectory& traj, Rng& rng) const {
    Tape<T> tape;
    Ctx<T> c{tape, false};
    SeqScoreVars<T> s = sequence_elbo_vars(c, traj, rng);
    return {static_cast<double>(tape.val(s.total)[0]),
            static_cast<double>(tape.val(s.pixel)[0]),
            static_cast<double>(tape.val(s.reward)[0]),
            static_cast<double>(tape.val(s.kl)[0])};
  }

  /// Negative log-likelihood along teacher-forced steps. Only defined for
  /// families without latent variables.
  Var mle_loss_vars(Ctx<T>& c, const Trajectory& traj) const {
    IM_CHECK(!has_posterior(cfg_.family),
             "mle_loss is undefined for latent-variable families; use the ELBO");
    Rng unused(0);
    SeqScoreVars<T> s = sequence_elbo_vars(c, traj, unused);
    return scale(c.tape, s.total, T(-1));
  }

  double mle_loss(const Trajectory& traj) const {
    Tape<T> tape;
    Ctx<T> c{tape, false};
    return static_cast<double>(tape.val(mle_loss_vars(c, traj))[0]);
  }

  /// Single-sample ELBO and sampled importance weight log p(o,z)/q(z) for
  /// the same draw; both use the sampled log-ratio rather than the analytic
  /// KL. Used by the bound-consistency oracle.
  double sampled_elbo_draw(const Trajectory& traj, Rng& rng) const {
    IM_CHECK(has_posterior(cfg_.family), "sampled draws need a posterior");
    Tape<T> tape;
    Ctx<T> c{tape, false};
    check_trajectory(traj);
    std::vector<Var> ctx_vars;
    for (const auto& f : traj.context)
      ctx_vars.push_back(tape.constant(f.template cast<T>()));
    StateVars<T> st = init_state_vars(c, ctx_vars);
    double acc = 0;
    for (int t = 0; t < traj.steps(); ++t) {
      Var action = tape.constant(traj.actions[t].encoded.template cast<T>());
      Tensor<T> next_obs = traj.observations[t].template cast<T>();
      Var obs_var = tape.constant(next_obs);
      StepVars<T> step = inference_step_vars(c, st, action, obs_var, rng);
      acc += static_cast<double>(
          tape.val(pixel_log_prob(c.tape, step.pixel_log_odds, next_obs))[0]);
      acc += static_cast<double>(tape.val(
          reward_log_prob(c.tape, step.reward_logits, traj.rewards[t], cfg_.reward_bits))[0]);
      acc += static_cast<double>(tape.val(gaussian_log_prob(c.tape, step.z, step.prior))[0]);
      acc -= static_cast<double>(
          tape.val(gaussian_log_prob(c.tape, step.z, step.posterior))[0]);
      st = step.next;
    }
    return acc;
  }

 private:
  void check_action(Ctx<T>& c, Var action) const {
    IM_CHECK(c.tape.val(action).numel() == cfg_.action_len(),
             "action record length " + std::to_string(c.tape.val(action).numel()) +
                 " does not match model (" + std::to_string(cfg_.action_len()) + ")");
  }

  void check_trajectory(const Trajectory& traj) const {
    traj.validate();
    IM_CHECK(traj.actions[0].length() == cfg_.action_len(),
             "trajectory action length does not match model config");
    IM_CHECK(traj.observations[0].dim(0) == cfg_.height &&
                 traj.observations[0].dim(1) == cfg_.width,
             "trajectory frame size does not match model config");
  }

  Var effective_action(Ctx<T>& c, Var action) const {
    if (cfg_.family == ModelFamily::SSSM_UNCOND ||
        cfg_.family == ModelFamily::BASELINE_VAE) {
      return c.tape.constant(Tensor<T>({cfg_.action_len()}));
    }
    return action;
  }

  Var broadcast_action(Ctx<T>& c, Var action) const {
    return broadcast_plane(c.tape, action, cfg_.state_height(), cfg_.state_width());
  }

  LatentStatsVar<T> prior_stats(Ctx<T>& c, Var s, Var eff_action,
                                const PriorOverride<T>* prior_override = nullptr) const {
    IM_CHECK(s.valid(), "state missing (was init_state called?)");
    Var h = concat_last(c.tape, {s, broadcast_action(c, eff_action)});
    if (prior_override != nullptr) {
      IM_CHECK(prior_override->head != nullptr, "prior override without a head");
      Ctx<T> oc{c.tape, prior_override->trainable};
      return (*prior_override->head)(oc, h);
    }
    return prior_(c, h);
  }

  Var latent_from(Ctx<T>& c, const LatentStatsVar<T>& stats, Rng* rng,
                  StepMode mode) const {
    if (mode == StepMode::Mean) return stats.mu;
    IM_CHECK(rng != nullptr, "sample mode needs an rng");
    return reparam_sample(c, stats, *rng);
  }

  Var reparam_sample(Ctx<T>& c, const LatentStatsVar<T>& stats, Rng& rng) const {
    Tensor<T> eps(c.tape.val(stats.mu).shape());
    rng.fill_normal(eps, 1.0);
    Var eps_var = c.tape.constant(std::move(eps));
    return add(c.tape, stats.mu, mul(c.tape, stats.sigma, eps_var));
  }

  Var decode_pixels_from(Ctx<T>& c, Var s, Var z) const {
    ++counters_.pixel_decodes;
    return decoder_.pixels(c, s, z);
  }

  Var ar_fused(Ctx<T>& c, const StateVars<T>& st, Var action) const {
    IM_CHECK(static_cast<int>(st.fifo_frames.size()) == cfg_.ar_order,
             "AR FIFO must hold exactly ar_order frames");
    std::vector<Var> parts;
    for (Var f : st.fifo_frames) parts.push_back(encode(c, f));
    std::vector<Var> acts = st.fifo_actions;
    acts.push_back(action);
    parts.push_back(broadcast_action(c, concat_last(c.tape, acts)));
    return ar_fuse_(c, concat_last(c.tape, parts));
  }

  StateVars<T> advance_fifo(Ctx<T>& c, const StateVars<T>& st, Var action,
                            Var new_frame) const {
    StateVars<T> next;
    next.fifo_frames.assign(st.fifo_frames.begin() + 1, st.fifo_frames.end());
    next.fifo_frames.push_back(new_frame);
    if (cfg_.ar_order > 1) {
      next.fifo_actions.assign(st.fifo_actions.begin() + 1, st.fifo_actions.end());
      next.fifo_actions.push_back(action);
    }
    return next;
  }

  ModelConfig cfg_;
  ParamStore<T>* store_;
  std::string scope_;
  Encoder<T> encoder_;
  Decoder<T> decoder_;
  InitialState<T> initial_;
  GaussianHead<T> prior_;
  GaussianHead<T> posterior_;
  Transition<T> transition_;
  ConvStack<T> ar_fuse_;
  mutable Counters counters_;
};

}  // namespace imagine
