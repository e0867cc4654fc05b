#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "imagine/core/ops.hpp"
#include "imagine/core/params.hpp"
#include "test_util.hpp"

namespace imagine {
namespace {

using test::max_grad_rel_err;
using test::random_tensor;

TEST(Tensor, BasicsAndReshape) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  t(1, 2, 3) = 5.0;
  EXPECT_DOUBLE_EQ(t[23], 5.0);
  auto r = t.reshaped({24});
  EXPECT_DOUBLE_EQ(r[23], 5.0);
  EXPECT_THROW(t.reshaped({5}), ContractError);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  EXPECT_NE(a.next_u64(), c.next_u64());
  Rng d(7);
  double mean = 0, var = 0;
  const int n = 20000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = d.normal();
  for (double x : xs) mean += x / n;
  for (double x : xs) var += (x - mean) * (x - mean) / n;
  EXPECT_NEAR(mean, 0.0, 0.03);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(ParamStore, InitIndependentOfCreationOrder) {
  ParamStore<double> a(1), b(1);
  auto& w1 = a.weight("x/w", {3, 3, 4, 8});
  auto& b1 = a.bias("x/b", {8});
  auto& b2 = b.bias("x/b", {8});
  auto& w2 = b.weight("x/w", {3, 3, 4, 8});
  EXPECT_TRUE(same_values(w1.value, w2.value));
  EXPECT_TRUE(same_values(b1.value, b2.value));
  EXPECT_EQ(a.value_digest(), b.value_digest());
}

TEST(ParamStore, CheckpointRoundTrip) {
  ParamStore<double> a(3);
  a.weight("m/conv/w", {3, 3, 2, 4});
  a.bias("m/conv/b", {4});
  const auto dir = std::filesystem::temp_directory_path() / "imagine_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "test.imck").string();
  save_checkpoint(a, path, {{"note", 1}});
  ParamStore<double> b(99);
  auto meta = load_checkpoint(b, path);
  EXPECT_EQ(meta.at("note"), 1);
  EXPECT_EQ(a.value_digest(), b.value_digest());
}

TEST(Adam, ZeroLearningRateLeavesParamsUnchanged) {
  ParamStore<double> ps(5);
  auto& w = ps.weight("p/w", {4, 4});
  Tensor<double> before = w.value;
  w.grad.fill(1.5);
  Adam<double> opt(AdamConfig{0.0});
  opt.step(ps);
  EXPECT_TRUE(same_values(before, w.value));
}

// --- gradient checks over every op ------------------------------------------

TEST(OpsGrad, Elementwise) {
  Rng rng(11);
  auto x = random_tensor({3, 2, 4}, rng, 1.0, 0.1);
  auto funnel = random_tensor({3, 2, 4}, rng);
  auto reduce = [funnel](Tape<double>& tp, Var v) {
    return sum_all(tp, mul(tp, v, tp.constant(funnel)));
  };
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, relu(tp, in[0]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, sigmoid(tp, in[0]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, tanh_op(tp, in[0]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, softplus(tp, in[0]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, exp_op(tp, in[0]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, square(tp, in[0]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({x}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, affine(tp, in[0], 2.5, -0.25));
            }),
            1e-4);
  auto pos = random_tensor({3, 2, 4}, rng, 0.3, 2.0);  // bounded away from 0
  EXPECT_LT(max_grad_rel_err({pos}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, log_op(tp, in[0]));
            }),
            1e-4);
}

TEST(OpsGrad, BinaryAndReductions) {
  Rng rng(12);
  auto a = random_tensor({2, 3, 3}, rng);
  auto b = random_tensor({2, 3, 3}, rng, 0.5, 2.0);
  auto funnel = random_tensor({2, 3, 3}, rng);
  auto reduce = [funnel](Tape<double>& tp, Var v) {
    return sum_all(tp, mul(tp, v, tp.constant(funnel)));
  };
  EXPECT_LT(max_grad_rel_err({a, b}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, add(tp, in[0], in[1]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({a, b}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, sub(tp, in[0], in[1]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({a, b}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, mul(tp, in[0], in[1]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({a, b}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return reduce(tp, div(tp, in[0], in[1]));
            }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({a}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return mean_all(tp, in[0]);
            }),
            1e-4);
  auto v = random_tensor({6}, rng);
  EXPECT_LT(max_grad_rel_err({v}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return pick(tp, in[0], 3);
            }),
            1e-4);
  auto v2 = random_tensor({6}, rng);
  EXPECT_LT(max_grad_rel_err({v, v2}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              return dot(tp, in[0], in[1]);
            }),
            1e-4);
}

TEST(OpsGrad, ShapeOps) {
  Rng rng(13);
  auto a = random_tensor({4, 4, 3}, rng);
  auto b = random_tensor({4, 4, 5}, rng);
  auto funnel8 = random_tensor({4, 4, 8}, rng);
  EXPECT_LT(max_grad_rel_err({a, b}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              Var cat = concat_last(tp, {in[0], in[1]});
              return sum_all(tp, mul(tp, cat, tp.constant(funnel8)));
            }),
            1e-4);
  auto funnel2 = random_tensor({4, 4, 2}, rng);
  EXPECT_LT(max_grad_rel_err({b}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              Var s = slice_last(tp, in[0], 1, 2);
              return sum_all(tp, mul(tp, s, tp.constant(funnel2)));
            }),
            1e-4);
  auto m = random_tensor({4, 4, 2}, rng);
  auto funnel_s2d = random_tensor({2, 2, 8}, rng);
  EXPECT_LT(max_grad_rel_err({m}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              Var s = space_to_depth(tp, in[0], 2);
              return sum_all(tp, mul(tp, s, tp.constant(funnel_s2d)));
            }),
            1e-4);
  auto d = random_tensor({2, 2, 8}, rng);
  auto funnel_d2s = random_tensor({4, 4, 2}, rng);
  EXPECT_LT(max_grad_rel_err({d}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              Var s = depth_to_space(tp, in[0], 2);
              return sum_all(tp, mul(tp, s, tp.constant(funnel_d2s)));
            }),
            1e-4);
  auto vec = random_tensor({5}, rng);
  auto funnel_b = random_tensor({3, 4, 5}, rng);
  EXPECT_LT(max_grad_rel_err({vec}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              Var s = broadcast_plane(tp, in[0], 3, 4);
              return sum_all(tp, mul(tp, s, tp.constant(funnel_b)));
            }),
            1e-4);
  auto pool_in = random_tensor({3, 3, 4}, rng);
  auto funnel_p = random_tensor({3, 3, 4}, rng);
  EXPECT_LT(max_grad_rel_err({pool_in}, [&](Tape<double>& tp, const std::vector<Var>& in) {
              Var s = channel_max_tile(tp, in[0]);
              return sum_all(tp, mul(tp, s, tp.constant(funnel_p)));
            }),
            1e-4);
}

TEST(Ops, SpaceToDepthRoundTripIsIdentity) {
  Rng rng(14);
  for (int k : {2, 4}) {
    auto x = random_tensor({8, 8, 3}, rng);
    Tape<double> tp;
    Var v = tp.constant(x);
    Var y = depth_to_space(tp, space_to_depth(tp, v, k), k);
    EXPECT_TRUE(same_values(tp.val(y), x));
  }
}

TEST(OpsGrad, ConvSameAndValid) {
  Rng rng(15);
  auto x = random_tensor({4, 4, 3}, rng);
  auto w = random_tensor({3, 3, 3, 5}, rng, 0.4);
  auto b = random_tensor({5}, rng, 0.2);
  auto funnel = random_tensor({4, 4, 5}, rng);
  EXPECT_LT(max_grad_rel_err({x, w, b},
                             [&](Tape<double>& tp, const std::vector<Var>& in) {
                               Var y = conv2d_same(tp, in[0], in[1], in[2]);
                               return sum_all(tp, mul(tp, y, tp.constant(funnel)));
                             }),
            1e-4);
  auto xv = random_tensor({7, 7, 2}, rng);
  auto wv = random_tensor({3, 3, 2, 4}, rng, 0.4);
  auto bv = random_tensor({4}, rng, 0.2);
  auto funnel_v = random_tensor({3, 3, 4}, rng);
  EXPECT_LT(max_grad_rel_err({xv, wv, bv},
                             [&](Tape<double>& tp, const std::vector<Var>& in) {
                               Var y = conv2d_valid(tp, in[0], in[1], in[2], 2);
                               return sum_all(tp, mul(tp, y, tp.constant(funnel_v)));
                             }),
            1e-4);
}

TEST(OpsGrad, Linear) {
  Rng rng(16);
  auto x = random_tensor({6}, rng);
  auto w = random_tensor({6, 4}, rng, 0.5);
  auto b = random_tensor({4}, rng, 0.2);
  auto funnel = random_tensor({4}, rng);
  EXPECT_LT(max_grad_rel_err({x, w, b},
                             [&](Tape<double>& tp, const std::vector<Var>& in) {
                               Var y = linear(tp, in[0], in[1], in[2]);
                               return dot(tp, y, tp.constant(funnel));
                             }),
            1e-4);
}

TEST(OpsGrad, SoftmaxFamilies) {
  Rng rng(17);
  auto logits = random_tensor({5}, rng);
  auto funnel = random_tensor({5}, rng);
  EXPECT_LT(max_grad_rel_err({logits},
                             [&](Tape<double>& tp, const std::vector<Var>& in) {
                               return dot(tp, softmax(tp, in[0]), tp.constant(funnel));
                             }),
            1e-4);
  EXPECT_LT(max_grad_rel_err({logits},
                             [&](Tape<double>& tp, const std::vector<Var>& in) {
                               return dot(tp, log_softmax(tp, in[0]), tp.constant(funnel));
                             }),
            1e-4);
  // entropy of a softmax, a composite both heads use
  EXPECT_LT(max_grad_rel_err({logits},
                             [&](Tape<double>& tp, const std::vector<Var>& in) {
                               Var p = softmax(tp, in[0]);
                               Var lp = log_softmax(tp, in[0]);
                               return scale(tp, dot(tp, p, lp), -1.0);
                             }),
            1e-4);
}

TEST(OpsGrad, BernoulliScore) {
  Rng rng(18);
  auto log_odds = random_tensor({2, 2, 3}, rng, 1.5);
  Tensor<double> targets({2, 2, 3});
  Rng trng(19);
  for (long i = 0; i < targets.numel(); ++i) targets[i] = trng.uniform();
  targets[0] = 0.0;  // exercise the 0 log 0 convention
  targets[1] = 1.0;
  for (bool entropy : {false, true}) {
    EXPECT_LT(max_grad_rel_err({log_odds},
                               [&](Tape<double>& tp, const std::vector<Var>& in) {
                                 return bernoulli_score(tp, in[0], targets, entropy);
                               }),
              1e-4);
  }
}

TEST(Tape, FrozenParamsGetNoGradients) {
  ParamStore<double> ps(1);
  auto& w = ps.weight("w", {3, 3});
  Tape<double> tp;
  Var wv = tp.param(w, /*trainable=*/false);
  Var x = tp.input(Tensor<double>::full({3}, 1.0));
  Var y = linear(tp, x, wv, tp.constant(Tensor<double>({3})));
  Var loss = sum_all(tp, y);
  tp.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad.sum(), 0.0);
  // the input still gets its gradient through the frozen weights
  double gsum = 0;
  for (long i = 0; i < tp.grad_of(x).numel(); ++i) gsum += tp.grad_of(x)[i];
  EXPECT_NE(gsum, 0.0);
}

TEST(Tape, StopGradientBlocksFlow) {
  Tape<double> tp;
  Var x = tp.input(Tensor<double>::full({4}, 2.0));
  Var y = stop_gradient(tp, x);
  Var loss = sum_all(tp, mul(tp, y, y));
  tp.backward(loss);
  EXPECT_DOUBLE_EQ(tp.grad_of(x).sum(), 0.0);
}

}  // namespace
}  // namespace imagine
