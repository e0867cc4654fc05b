#include <gtest/gtest.h>

#include <memory>

#include "imagine/rollout/bench.hpp"
#include "imagine/rollout/rollout.hpp"
#include "test_util.hpp"

namespace imagine {
namespace {

ModelConfig micro_config(ModelFamily family) {
  ModelConfig cfg;
  cfg.family = family;
  cfg.height = 16;
  cfg.width = 16;
  cfg.action_count = 5;
  cfg.channel_scale = 0.125;
  cfg.reward_bits = 4;
  return cfg;
}

Trajectory micro_trajectory(int T, uint64_t seed) {
  Rng rng(seed);
  Trajectory t;
  auto frame = [&]() {
    Frame f({16, 16, 3});
    for (long i = 0; i < f.numel(); ++i)
      f[i] = static_cast<float>(rng.uniform_int(256)) / 255.0f;
    return f;
  };
  for (int i = 0; i < 3; ++i) t.context.push_back(frame());
  for (int i = 0; i < T; ++i) {
    t.observations.push_back(frame());
    t.actions.push_back(ActionRecord::one_hot(rng.uniform_int(5), 5));
    t.rewards.push_back(0.0f);
  }
  return t;
}

template <typename T>
RolloutPolicyFn<T> uniform_policy() {
  return [](const Tensor<T>&, Rng& rng) { return rng.uniform_int(5); };
}

TEST(Rollout, SingleStepSingleChain) {
  ParamStore<double> ps(1);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 2).context);
  RolloutRequest req;
  req.count = 1;
  req.depth = 1;
  auto bundle = rollout<double>(model, st, req, nullptr, {ActionRecord::one_hot(2, 5)});
  ASSERT_EQ(bundle.count(), 1);
  ASSERT_EQ(bundle.depth(), 1);
  EXPECT_EQ(bundle.features[0][0].shape(), Shape({2, 2, 8}));
  EXPECT_EQ(bundle.reward_logits[0][0].shape(), Shape({6}));
}

TEST(Rollout, DeterministicFamilyChainsIdentical) {
  ParamStore<double> ps(2);
  EnvModel<double> model(micro_config(ModelFamily::DSSM_DET), ps);
  auto st = model.init_state(micro_trajectory(1, 3).context);
  RolloutRequest req;
  req.count = 5;
  req.depth = 3;
  std::vector<ActionRecord> fixed = {ActionRecord::one_hot(0, 5),
                                     ActionRecord::one_hot(1, 5),
                                     ActionRecord::one_hot(2, 5)};
  auto bundle = rollout<double>(model, st, req, nullptr, fixed);
  for (int k = 1; k < 5; ++k)
    for (int t = 0; t < 3; ++t)
      EXPECT_TRUE(same_values(bundle.features[k][t], bundle.features[0][t]));
}

TEST(Rollout, StochasticFamilyChainsDiffer) {
  ParamStore<double> ps(3);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 4).context);
  RolloutRequest req;
  req.count = 5;
  req.depth = 2;
  req.seed = 9;
  std::vector<ActionRecord> fixed = {ActionRecord::one_hot(1, 5),
                                     ActionRecord::one_hot(1, 5)};
  auto bundle = rollout<double>(model, st, req, nullptr, fixed);
  // per-element variance across chains is positive
  double var_acc = 0;
  const long n = bundle.features[0][0].numel();
  for (long i = 0; i < n; ++i) {
    double mean = 0;
    for (int k = 0; k < 5; ++k) mean += bundle.features[k][0][i] / 5.0;
    for (int k = 0; k < 5; ++k) {
      const double d = bundle.features[k][0][i] - mean;
      var_acc += d * d;
    }
  }
  EXPECT_GT(var_acc, 0.0);
  EXPECT_FALSE(same_values(bundle.features[0][0], bundle.features[1][0]));
}

TEST(Rollout, FixedSeedReproducible) {
  ParamStore<double> ps(4);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 5).context);
  RolloutRequest req;
  req.count = 3;
  req.depth = 4;
  req.seed = 123;
  auto a = rollout<double>(model, st, req, uniform_policy<double>());
  auto b = rollout<double>(model, st, req, uniform_policy<double>());
  for (int k = 0; k < 3; ++k)
    for (int t = 0; t < 4; ++t) {
      ASSERT_TRUE(same_values(a.features[k][t], b.features[k][t]));
      ASSERT_TRUE(same_values(a.actions[k][t], b.actions[k][t]));
    }
}

TEST(Rollout, StateFeaturesNeverTouchPixelDecoder) {
  ParamStore<double> ps(5);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 6).context);
  model.counters().reset();
  RolloutRequest req;
  req.count = 4;
  req.depth = 5;
  rollout<double>(model, st, req, uniform_policy<double>());
  EXPECT_EQ(model.counters().pixel_decodes, 0);
  EXPECT_EQ(model.counters().generative_steps, 20);

  RolloutRequest preq = req;
  preq.features = RolloutFeatures::Pixels;
  model.counters().reset();
  rollout<double>(model, st, preq, uniform_policy<double>());
  EXPECT_EQ(model.counters().pixel_decodes, 20);
}

TEST(Rollout, StateFeaturesRejectedForAutoRegressive) {
  for (ModelFamily f : {ModelFamily::AR, ModelFamily::RAR}) {
    ParamStore<double> ps(6);
    EnvModel<double> model(micro_config(f), ps);
    auto st = model.init_state(micro_trajectory(1, 7).context);
    RolloutRequest req;
    EXPECT_THROW(rollout<double>(model, st, req, uniform_policy<double>()),
                 ContractError);
    // pixel rollouts work
    req.features = RolloutFeatures::Pixels;
    auto bundle = rollout<double>(model, st, req, uniform_policy<double>());
    EXPECT_EQ(bundle.features[0][0].shape(), Shape({16, 16, 3}));
  }
}

TEST(RolloutRelaxed, OneHotMatchesDiscreteBitwise) {
  ParamStore<double> ps(7);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 8).context);
  RolloutRequest req;
  req.count = 2;
  req.depth = 3;
  req.seed = 77;
  std::vector<ActionRecord> fixed = {ActionRecord::one_hot(3, 5),
                                     ActionRecord::one_hot(0, 5),
                                     ActionRecord::one_hot(4, 5)};
  std::vector<Tensor<double>> probs;
  for (const auto& a : fixed) probs.push_back(a.encoded.cast<double>());
  auto discrete = rollout<double>(model, st, req, nullptr, fixed);
  auto relaxed = rollout_relaxed<double>(model, st, req, probs);
  for (int k = 0; k < 2; ++k)
    for (int t = 0; t < 3; ++t)
      ASSERT_TRUE(same_values(discrete.features[k][t], relaxed.features[k][t]));
}

TEST(RolloutRelaxed, UniformVectorAcceptedNonNormalizedRejected) {
  ParamStore<double> ps(8);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 9).context);
  RolloutRequest req;
  auto uniform = Tensor<double>::full({5}, 0.2);
  EXPECT_NO_THROW(rollout_relaxed<double>(model, st, req, {uniform}));
  auto bad = Tensor<double>::full({5}, 0.3);
  EXPECT_THROW(rollout_relaxed<double>(model, st, req, {bad}), ContractError);
  auto negative = Tensor<double>::full({5}, 0.2);
  negative[0] = -0.2;
  negative[1] = 0.6;
  EXPECT_THROW(rollout_relaxed<double>(model, st, req, {negative}), ContractError);
}

TEST(RolloutRelaxed, ChainIsDifferentiableWrtProbabilities) {
  ParamStore<double> ps(9);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 10).context);
  Rng frng(11);
  auto funnel = test::random_tensor({2, 2, 8}, frng);

  // two steps on one tape, probabilities as differentiable inputs
  struct Built {
    Var loss;
    std::vector<Var> steps;
  };
  auto build = [&](Tape<double>& tape, const Tensor<double>& p0v,
                   const Tensor<double>& p1v, bool as_input) {
    Ctx<double> c{tape, false};
    StateVars<double> sv = model.lift(c, st);
    Var p0 = as_input ? tape.input(p0v) : tape.constant(p0v);
    Var p1 = as_input ? tape.input(p1v) : tape.constant(p1v);
    RolloutRequest req;
    req.count = 1;
    req.depth = 2;
    req.seed = 5;
    std::vector<Var> steps{p0, p1};
    auto bundle = rollout_on_tape<double>(
        c, model, sv, req, [&](Ctx<double>&, Var, int, int t) { return steps[t]; });
    Var loss = sum_all(tape, mul(tape, bundle.features[0][1], tape.constant(funnel)));
    return Built{loss, steps};
  };

  Tensor<double> p0 = Tensor<double>::full({5}, 0.2);
  Tensor<double> p1 = Tensor<double>::full({5}, 0.2);
  Tape<double> tape;
  Built bt = build(tape, p0, p1, true);
  tape.backward(bt.loss);
  Tensor<double> g0 = tape.grad_of(bt.steps[0]);
  double gnorm = 0;
  for (long i = 0; i < g0.numel(); ++i) gnorm += std::abs(g0[i]);
  EXPECT_GT(gnorm, 1e-8);  // nonzero gradient through the whole chain

  // finite-difference probe on one coordinate of the first-step vector
  const double h = 1e-6;
  auto eval = [&](const Tensor<double>& a, const Tensor<double>& b) {
    Tape<double> t2;
    Built b2 = build(t2, a, b, false);
    return t2.val(b2.loss)[0];
  };
  Tensor<double> pp = p0, pm = p0;
  pp[1] += h;
  pm[1] -= h;
  const double numeric = (eval(pp, p1) - eval(pm, p1)) / (2 * h);
  EXPECT_NEAR(g0[1], numeric, 1e-4 * std::max(1.0, std::abs(numeric)));
}

TEST(RolloutRelaxed, FrozenModelGetsNoGradient) {
  ParamStore<double> ps(10);
  EnvModel<double> model(micro_config(ModelFamily::SSSM), ps);
  auto st = model.init_state(micro_trajectory(1, 12).context);
  ps.zero_grads();
  Tape<double> tape;
  Ctx<double> c{tape, false};  // model frozen
  StateVars<double> sv = model.lift(c, st);
  RolloutRequest req;
  req.count = 1;
  req.depth = 2;
  auto bundle = rollout_on_tape<double>(
      c, model, sv, req, [&](Ctx<double>& cc, Var, int, int) {
        return cc.tape.input(Tensor<double>::full({5}, 0.2));
      });
  Var loss = sum_all(tape, bundle.features[0][1]);
  tape.backward(loss);
  for (auto& [n, e] : ps) EXPECT_EQ(e.grad.sum(), 0.0) << n;
}

TEST(Benchmark, MicroScaleReportIsComplete) {
  std::vector<std::unique_ptr<ParamStore<float>>> stores;
  std::vector<std::unique_ptr<EnvModel<float>>> models;
  for (ModelFamily f : {ModelFamily::AR, ModelFamily::RAR, ModelFamily::DSSM_DET,
                        ModelFamily::SSSM}) {
    stores.push_back(std::make_unique<ParamStore<float>>(20));
    models.push_back(std::make_unique<EnvModel<float>>(micro_config(f), *stores.back()));
  }
  ModelConfig jumpy_cfg = micro_config(ModelFamily::SSSM);
  jumpy_cfg.jumpy_factor = 4;
  stores.push_back(std::make_unique<ParamStore<float>>(21));
  models.push_back(std::make_unique<EnvModel<float>>(jumpy_cfg, *stores.back()));

  std::vector<const EnvModel<float>*> ptrs;
  for (const auto& m : models) ptrs.push_back(m.get());
  BenchConfig bench;
  bench.batch = 2;
  bench.depth = 2;
  bench.repetitions = 3;
  bench.warmup = 1;
  auto report = benchmark_rollouts<float>(ptrs, bench);
  ASSERT_EQ(report.rows.size(), 5u);
  EXPECT_DOUBLE_EQ(report.rows[0].rel_speed, 1.0);  // family vs itself
  for (const auto& row : report.rows) {
    EXPECT_GT(row.per_step_ms, 0.0);
    EXPECT_GT(row.rel_speed, 0.0);
  }
  EXPECT_TRUE(report.rows[0].rendered);   // ar renders
  EXPECT_FALSE(report.rows[3].rendered);  // sssm stays abstract
  EXPECT_EQ(report.rows[4].jumpy_factor, 4);
  EXPECT_NEAR(report.rows[4].per_env_step_ms, report.rows[4].per_step_ms / 4, 1e-12);
}

}  // namespace
}  // namespace imagine
