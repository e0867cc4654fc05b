#include <gtest/gtest.h>

#include "imagine/nn/blocks.hpp"
#include "test_util.hpp"

namespace imagine {
namespace {

using test::conv2d_reference;
using test::max_store_grad_rel_err;
using test::random_tensor;

Shape out_shape(ParamStore<double>& ps, const std::function<Var(Ctx<double>&)>& f) {
  Tape<double> tape;
  Ctx<double> c{tape, false};
  return tape.val(f(c)).shape();
}

TEST(ConvStack, ShapeMatchesPlan) {
  ParamStore<double> ps(1);
  ConvStack<double> stack(ps, "cs", {1, 32, 5, 32, 3, 64}, 128);
  Rng rng(2);
  auto x = random_tensor({10, 10, 128}, rng, 0.1);
  Shape s = out_shape(ps, [&](Ctx<double>& c) { return stack(c, c.tape.constant(x)); });
  EXPECT_EQ(s, Shape({10, 10, 64}));
}

TEST(ConvStack, SkipChannelMismatchRejected) {
  ConvStackSpec bad{1, 32, 5, 48, 3, 64};
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(ConvStack, ZeroParamsGiveZeroOutput) {
  ParamStore<double> ps(1);
  ConvStack<double> stack(ps, "cs", {3, 4, 3, 4, 1, 8}, 4);
  for (auto& [n, e] : ps) e.value.zero();
  Rng rng(3);
  auto x = random_tensor({5, 5, 4}, rng);
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var y = stack(c, tape.constant(x));
  EXPECT_DOUBLE_EQ(max_abs_diff(tape.val(y), Tensor<double>({5, 5, 8})), 0.0);
}

TEST(ConvStack, MatchesStraightLineReference) {
  ParamStore<double> ps(7);
  ConvStack<double> stack(ps, "cs", {1, 4, 3, 4, 1, 8}, 8);
  Rng rng(4);
  auto x = random_tensor({4, 4, 8}, rng);
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var y = stack(c, tape.constant(x));

  auto relu_ref = [](Tensor<double> t) {
    for (long i = 0; i < t.numel(); ++i) t[i] = std::max(0.0, t[i]);
    return t;
  };
  auto w = [&](const std::string& n) { return ps.at("cs/" + n + "/w").value; };
  auto b = [&](const std::string& n) { return ps.at("cs/" + n + "/b").value; };
  Tensor<double> h1 = relu_ref(conv2d_reference(x, w("conv1"), b("conv1")));
  Tensor<double> h2 = conv2d_reference(h1, w("conv2"), b("conv2"));
  h2.add_(h1);
  Tensor<double> ref = conv2d_reference(relu_ref(h2), w("conv3"), b("conv3"));
  EXPECT_LT(max_abs_diff(tape.val(y), ref), 1e-12);
}

TEST(ResConv, ShapesAndIdentitySkip) {
  ParamStore<double> ps(1);
  ResConv<double> rc(ps, "rc", 64, 32, 64);
  EXPECT_FALSE(rc.use_proj);
  Rng rng(5);
  auto x = random_tensor({10, 10, 64}, rng, 0.1);
  Shape s = out_shape(ps, [&](Ctx<double>& c) { return rc(c, c.tape.constant(x)); });
  EXPECT_EQ(s, Shape({10, 10, 64}));

  // zero inner weights: residual identity
  for (auto& [n, e] : ps) e.value.zero();
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var y = rc(c, tape.constant(x));
  EXPECT_LT(max_abs_diff(tape.val(y), x), 1e-15);

  // non-64-channel input goes through the learned projection
  ParamStore<double> ps2(2);
  ResConv<double> rc2(ps2, "rc", 133, 32, 64);
  EXPECT_TRUE(rc2.use_proj);
  auto x2 = random_tensor({10, 10, 133}, rng, 0.1);
  Shape s2 = out_shape(ps2, [&](Ctx<double>& c2) { return rc2(c2, c2.tape.constant(x2)); });
  EXPECT_EQ(s2, Shape({10, 10, 64}));
}

TEST(PoolInject, AddsGlobalMaxChannels) {
  ParamStore<double> ps(6);
  PoolInject<double> pi(ps, "pi", 64, 32);
  Rng rng(6);
  auto x = random_tensor({10, 10, 64}, rng);
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var y = pi(c, tape.constant(x));
  ASSERT_EQ(tape.val(y).shape(), Shape({10, 10, 96}));

  // channels beyond ch(x) are spatially constant and equal the max of the
  // corresponding convolution response, computed directly
  Tensor<double> m =
      conv2d_reference(x, ps.at("pi/conv/w").value, ps.at("pi/conv/b").value);
  for (int cch = 0; cch < 32; ++cch) {
    double mx = m(0, 0, cch);
    for (int yy = 0; yy < 10; ++yy)
      for (int xx = 0; xx < 10; ++xx) mx = std::max(mx, m(yy, xx, cch));
    for (int yy = 0; yy < 10; ++yy)
      for (int xx = 0; xx < 10; ++xx)
        EXPECT_NEAR(tape.val(y)(yy, xx, 64 + cch), mx, 1e-12);
  }
}

TEST(PoolInject, ConstantInputStaysConstant) {
  ParamStore<double> ps(8);
  PoolInject<double> pi(ps, "pi", 8, 4);
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var y = pi(c, tape.constant(Tensor<double>::full({6, 6, 8}, 0.37)));
  const auto& yv = tape.val(y);
  for (int ch = 0; ch < 12; ++ch)
    for (int yy = 0; yy < 6; ++yy)
      for (int xx = 0; xx < 6; ++xx) EXPECT_NEAR(yv(yy, xx, ch), yv(0, 0, ch), 1e-12);
}

TEST(Encoder, ShapesAtBothResolutions) {
  ParamStore<double> ps(1);
  Encoder<double> enc(ps, "enc", 3, 16, 32, 64);
  Rng rng(7);
  auto o80 = random_tensor({80, 80, 3}, rng, 0.2, 0.5);
  EXPECT_EQ(out_shape(ps, [&](Ctx<double>& c) { return enc(c, c.tape.constant(o80)); }),
            Shape({10, 10, 64}));
  auto o200 = random_tensor({200, 160, 3}, rng, 0.2, 0.5);
  EXPECT_EQ(out_shape(ps, [&](Ctx<double>& c) { return enc(c, c.tape.constant(o200)); }),
            Shape({25, 20, 64}));
  // rearrangement alone conserves element count
  Tape<double> tape;
  Var v = space_to_depth(tape, tape.constant(o80), 4);
  EXPECT_EQ(tape.val(v).shape(), Shape({20, 20, 48}));
  // indivisible sizes rejected
  auto bad = random_tensor({12, 12, 3}, rng);
  Tape<double> tape2;
  Ctx<double> c2{tape2, false};
  EXPECT_THROW(enc(c2, tape2.constant(bad)), ContractError);
}

TEST(Decoder, PixelAndRewardShapes) {
  ParamStore<double> ps(1);
  Decoder<double> dec(ps, "dec", 64, 64, 32, 64, 24, 10, 10, 8);
  Rng rng(8);
  auto s = random_tensor({10, 10, 64}, rng, 0.1);
  auto z = random_tensor({10, 10, 64}, rng, 0.1);
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var px = dec.pixels(c, tape.constant(s), tape.constant(z));
  EXPECT_EQ(tape.val(px).shape(), Shape({80, 80, 3}));
  Var rw = dec.reward_logits(c, tape.constant(s));
  EXPECT_EQ(tape.val(rw).shape(), Shape({10}));

  // zero weights: all log-odds zero, every Bernoulli probability 1/2
  for (auto& [n, e] : ps) e.value.zero();
  Tape<double> tape2;
  Ctx<double> c2{tape2, false};
  Var px2 = dec.pixels(c2, tape2.constant(s), tape2.constant(z));
  EXPECT_DOUBLE_EQ(max_abs_diff(tape2.val(px2), Tensor<double>({80, 80, 3})), 0.0);

  // spatial mismatch rejected
  auto z_bad = random_tensor({5, 5, 64}, rng);
  Tape<double> tape3;
  Ctx<double> c3{tape3, false};
  EXPECT_THROW(dec.pixels(c3, tape3.constant(s), tape3.constant(z_bad)), ContractError);
}

TEST(GaussianHead, SoftplusSigma) {
  ParamStore<double> ps(1);
  GaussianHead<double> head(ps, "prior", 69, 32, 64);
  Rng rng(9);
  auto x = random_tensor({10, 10, 69}, rng, 0.2);
  {
    Tape<double> tape;
    Ctx<double> c{tape, false};
    auto stats = head(c, tape.constant(x));
    EXPECT_EQ(tape.val(stats.mu).shape(), Shape({10, 10, 64}));
    EXPECT_EQ(tape.val(stats.sigma).shape(), Shape({10, 10, 64}));
    for (long i = 0; i < tape.val(stats.sigma).numel(); ++i)
      EXPECT_GT(tape.val(stats.sigma)[i], 0.0);
  }
  // zero weights: pre-activation 0, sigma = softplus(0) = ln 2 everywhere
  for (auto& [n, e] : ps) e.value.zero();
  Tape<double> tape;
  Ctx<double> c{tape, false};
  auto stats = head(c, tape.constant(x));
  for (long i = 0; i < tape.val(stats.sigma).numel(); ++i)
    EXPECT_NEAR(tape.val(stats.sigma)[i], std::log(2.0), 1e-12);
}

TEST(Transition, ShapesWithAndWithoutExtra) {
  ParamStore<double> ps(1);
  Transition<double> tr(ps, "tr", 64 + 5 + 64, 32, 32, 64);
  Rng rng(10);
  auto cat = random_tensor({10, 10, 133}, rng, 0.1);
  EXPECT_EQ(out_shape(ps, [&](Ctx<double>& c) { return tr(c, c.tape.constant(cat)); }),
            Shape({10, 10, 64}));
  // pool & inject inside sees c_state channels and re-expands by 32
  EXPECT_EQ(ps.at("tr/res2/conv1/w").value.shape(), Shape({3, 3, 96, 32}));

  ParamStore<double> ps2(2);
  Transition<double> tr2(ps2, "tr", 64 + 5 + 64 + 64, 32, 32, 64);
  auto cat2 = random_tensor({10, 10, 197}, rng, 0.1);
  EXPECT_EQ(out_shape(ps2, [&](Ctx<double>& c) { return tr2(c, c.tape.constant(cat2)); }),
            Shape({10, 10, 64}));
}

TEST(InitialState, FusesThreeEmbeddings) {
  ParamStore<double> ps(1);
  InitialState<double> init(ps, "init", 64);
  EXPECT_EQ(ps.at("init/stack/conv1/w").value.shape(), Shape({1, 1, 192, 64}));
  Rng rng(11);
  auto e0 = random_tensor({10, 10, 64}, rng, 0.2);
  auto e1 = random_tensor({10, 10, 64}, rng, 0.2);
  auto e2 = random_tensor({10, 10, 64}, rng, 0.2);
  Tape<double> tape;
  Ctx<double> c{tape, false};
  Var a = init(c, tape.constant(e0), tape.constant(e1), tape.constant(e2));
  EXPECT_EQ(tape.val(a).shape(), Shape({10, 10, 64}));
  // concatenation order matters
  Var b = init(c, tape.constant(e2), tape.constant(e1), tape.constant(e0));
  EXPECT_GT(max_abs_diff(tape.val(a), tape.val(b)), 1e-6);
}

TEST(Broadcast, TilesActionCoefficients) {
  Tape<double> tape;
  Tensor<double> onehot({5});
  onehot[2] = 1.0;
  Var v = broadcast_plane(tape, tape.constant(onehot), 10, 10);
  EXPECT_EQ(tape.val(v).shape(), Shape({10, 10, 5}));
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x)
      for (int a = 0; a < 5; ++a)
        EXPECT_DOUBLE_EQ(tape.val(v)(y, x, a), a == 2 ? 1.0 : 0.0);

  Var probs = broadcast_plane(tape, tape.constant(Tensor<double>::full({5}, 0.2)), 3, 3);
  for (long i = 0; i < tape.val(probs).numel(); ++i)
    EXPECT_DOUBLE_EQ(tape.val(probs)[i], 0.2);

  // jumpy record c=2, A=5
  Var jumpy = broadcast_plane(tape, tape.constant(Tensor<double>({10})), 10, 10);
  EXPECT_EQ(tape.val(jumpy).shape(), Shape({10, 10, 10}));
}

TEST(Blocks, PureFunctionsOfInputAndParams) {
  ParamStore<double> ps(21);
  ConvStack<double> stack(ps, "cs", {1, 4, 3, 4, 3, 8}, 6);
  Rng rng(12);
  auto x = random_tensor({6, 6, 6}, rng);
  auto run = [&]() {
    Tape<double> tape;
    Ctx<double> c{tape, false};
    return tape.val(stack(c, tape.constant(x)));
  };
  EXPECT_TRUE(same_values(run(), run()));
}

// Analytic gradients of every block against central differences, micro
// shapes, double precision.
TEST(BlocksGrad, AllBlocksMatchFiniteDifferences) {
  Rng rng(13);
  auto funnel_loss = [&](Ctx<double>& c, Var y, const Tensor<double>& funnel) {
    return sum_all(c.tape, mul(c.tape, y, c.tape.constant(funnel)));
  };
  // Zero-initialized biases leave pre-activations centered on the relu kink,
  // where central differences are meaningless; shift them.
  auto jitter_biases = [&](ParamStore<double>& ps) {
    Rng jrng(99);
    for (auto& [n, e] : ps) {
      if (n.size() >= 2 && n.compare(n.size() - 2, 2, "/b") == 0) {
        for (long i = 0; i < e.value.numel(); ++i) e.value[i] += 0.2 * jrng.normal();
      }
    }
  };
  {
    ParamStore<double> ps(31);
    ConvStack<double> stack(ps, "cs", {1, 4, 3, 4, 3, 6}, 5);
    jitter_biases(ps);
    auto x = random_tensor({4, 4, 5}, rng, 0.5);
    auto funnel = random_tensor({4, 4, 6}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    return funnel_loss(c, stack(c, c.tape.constant(x)), funnel);
                  }),
              1e-4);
  }
  {
    ParamStore<double> ps(32);
    ResConv<double> rc(ps, "rc", 7, 4, 6);
    jitter_biases(ps);
    auto x = random_tensor({4, 4, 7}, rng, 0.5);
    auto funnel = random_tensor({4, 4, 6}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    return funnel_loss(c, rc(c, c.tape.constant(x)), funnel);
                  }),
              1e-4);
  }
  {
    ParamStore<double> ps(33);
    PoolInject<double> pi(ps, "pi", 5, 3);
    jitter_biases(ps);
    auto x = random_tensor({4, 4, 5}, rng, 0.5);
    auto funnel = random_tensor({4, 4, 8}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    return funnel_loss(c, pi(c, c.tape.constant(x)), funnel);
                  }),
              1e-4);
  }
  {
    ParamStore<double> ps(34);
    Encoder<double> enc(ps, "enc", 3, 2, 3, 4);
    jitter_biases(ps);
    auto o = random_tensor({16, 16, 3}, rng, 0.3, 0.5);
    auto funnel = random_tensor({2, 2, 4}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    return funnel_loss(c, enc(c, c.tape.constant(o)), funnel);
                  },
                  12),
              1e-4);
  }
  {
    ParamStore<double> ps(35);
    Decoder<double> dec(ps, "dec", 4, 4, 3, 4, 3, 2, 2, 4);
    jitter_biases(ps);
    auto s = random_tensor({2, 2, 4}, rng, 0.5);
    auto z = random_tensor({2, 2, 4}, rng, 0.5);
    auto funnel_px = random_tensor({16, 16, 3}, rng);
    auto funnel_rw = random_tensor({6}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    Var px = dec.pixels(c, c.tape.constant(s), c.tape.constant(z));
                    Var rw = dec.reward_logits(c, c.tape.constant(s));
                    return add(c.tape, funnel_loss(c, px, funnel_px),
                               funnel_loss(c, rw, funnel_rw));
                  },
                  12),
              1e-4);
  }
  {
    ParamStore<double> ps(36);
    GaussianHead<double> head(ps, "gh", 6, 3, 4);
    jitter_biases(ps);
    auto x = random_tensor({3, 3, 6}, rng, 0.5);
    auto f1 = random_tensor({3, 3, 4}, rng);
    auto f2 = random_tensor({3, 3, 4}, rng);
    EXPECT_LT(max_store_grad_rel_err(ps,
                                     [&](Ctx<double>& c) {
                                       auto st = head(c, c.tape.constant(x));
                                       return add(c.tape, funnel_loss(c, st.mu, f1),
                                                  funnel_loss(c, st.sigma, f2));
                                     }),
              1e-4);
  }
  {
    ParamStore<double> ps(37);
    Transition<double> tr(ps, "tr", 9, 4, 3, 5);
    jitter_biases(ps);
    auto x = random_tensor({3, 3, 9}, rng, 0.5);
    auto funnel = random_tensor({3, 3, 5}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    return funnel_loss(c, tr(c, c.tape.constant(x)), funnel);
                  },
                  12),
              1e-4);
  }
  {
    ParamStore<double> ps(38);
    InitialState<double> init(ps, "init", 4);
    jitter_biases(ps);
    auto e0 = random_tensor({3, 3, 4}, rng, 0.5);
    auto e1 = random_tensor({3, 3, 4}, rng, 0.5);
    auto e2 = random_tensor({3, 3, 4}, rng, 0.5);
    auto funnel = random_tensor({3, 3, 4}, rng);
    EXPECT_LT(max_store_grad_rel_err(
                  ps,
                  [&](Ctx<double>& c) {
                    return funnel_loss(c,
                                       init(c, c.tape.constant(e0), c.tape.constant(e1),
                                            c.tape.constant(e2)),
                                       funnel);
                  }),
              1e-4);
  }
  {
    ParamStore<double> ps(39);
    LstmCell<double> lstm(ps, "lstm", 5, 4);
    jitter_biases(ps);
    auto x0 = random_tensor({5}, rng, 0.5);
    auto x1 = random_tensor({5}, rng, 0.5);
    auto funnel = random_tensor({4}, rng);
    EXPECT_LT(max_store_grad_rel_err(ps,
                                     [&](Ctx<double>& c) {
                                       auto st = lstm.zero_state(c);
                                       st = lstm(c, c.tape.constant(x0), st);
                                       st = lstm(c, c.tape.constant(x1), st);
                                       return dot(c.tape, st.h, c.tape.constant(funnel));
                                     }),
              1e-4);
  }
}

}  // namespace
}  // namespace imagine
