#pragma once

#include <string>
#include <vector>

#include "imagine/core/ops.hpp"

namespace imagine {

/// Evaluation context: the tape to record onto and whether parameters used
/// under it should receive gradients. Frozen models evaluate with
/// train = false, which also skips their weight-gradient work entirely.
template <typename T>
struct Ctx {
  Tape<T>& tape;
  bool train = true;

  Var p(ParamEntry<T>& e) const { return tape.param(e, train); }
};

/// Size-preserving convolution layer.
template <typename T>
struct Conv2d {
  ParamEntry<T>* w = nullptr;
  ParamEntry<T>* b = nullptr;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int k, int cin, int cout)
      : w(&ps.weight(name + "/w", {k, k, cin, cout})),
        b(&ps.bias(name + "/b", {cout})) {}

  Var operator()(Ctx<T>& c, Var x) const {
    return conv2d_same(c.tape, x, c.p(*w), c.p(*b));
  }
};

/// Valid convolution with stride (agent trunks).
template <typename T>
struct ConvStrided {
  ParamEntry<T>* w = nullptr;
  ParamEntry<T>* b = nullptr;
  int stride = 1;

  ConvStrided() = default;
  ConvStrided(ParamStore<T>& ps, const std::string& name, int k, int s, int cin, int cout)
      : w(&ps.weight(name + "/w", {k, k, cin, cout})),
        b(&ps.bias(name + "/b", {cout})),
        stride(s) {}

  Var operator()(Ctx<T>& c, Var x) const {
    return conv2d_valid(c.tape, x, c.p(*w), c.p(*b), stride);
  }
};

template <typename T>
struct Dense {
  ParamEntry<T>* w = nullptr;
  ParamEntry<T>* b = nullptr;

  Dense() = default;
  Dense(ParamStore<T>& ps, const std::string& name, int in, int out)
      : w(&ps.weight(name + "/w", {in, out})), b(&ps.bias(name + "/b", {out})) {}

  Var operator()(Ctx<T>& c, Var x) const { return linear(c.tape, x, c.p(*w), c.p(*b)); }
};

/// Kernel/channel plan of a three-convolution stack. The first two output
/// channel counts must agree because the first activation is added onto the
/// second convolution's output.
struct ConvStackSpec {
  int k1, c1, k2, c2, k3, c3;

  void validate() const {
    IM_CHECK(c1 == c2, "conv stack: skip add needs c1 == c2, got " +
                           std::to_string(c1) + " vs " + std::to_string(c2));
    IM_CHECK(k1 % 2 == 1 && k2 % 2 == 1 && k3 % 2 == 1,
             "conv stack: kernels must be odd for size preservation");
  }
};

/// y = conv3(relu(conv2(relu(conv1(x))) + relu(conv1(x)))). Preserves the
/// spatial size; output channels c3.
template <typename T>
struct ConvStack {
  Conv2d<T> conv1, conv2, conv3;

  ConvStack() = default;
  ConvStack(ParamStore<T>& ps, const std::string& name, const ConvStackSpec& spec, int cin) {
    spec.validate();
    conv1 = Conv2d<T>(ps, name + "/conv1", spec.k1, cin, spec.c1);
    conv2 = Conv2d<T>(ps, name + "/conv2", spec.k2, spec.c1, spec.c2);
    conv3 = Conv2d<T>(ps, name + "/conv3", spec.k3, spec.c2, spec.c3);
  }

  Var operator()(Ctx<T>& c, Var x) const {
    Var h1 = relu(c.tape, conv1(c, x));
    Var h2 = relu(c.tape, add(c.tape, conv2(c, h1), h1));
    return conv3(c, h2);
  }
};

/// y = skip(x) + conv(3,c_out)(relu(conv(5,c_mid)(relu(conv(3,c_mid)(x))))).
/// When the input channel count differs from c_out the skip path is a
/// learned 1x1 projection, otherwise the identity.
template <typename T>
struct ResConv {
  Conv2d<T> conv1, conv2, conv3;
  Conv2d<T> proj;
  bool use_proj = false;

  ResConv() = default;
  ResConv(ParamStore<T>& ps, const std::string& name, int cin, int c_mid, int c_out) {
    conv1 = Conv2d<T>(ps, name + "/conv1", 3, cin, c_mid);
    conv2 = Conv2d<T>(ps, name + "/conv2", 5, c_mid, c_mid);
    conv3 = Conv2d<T>(ps, name + "/conv3", 3, c_mid, c_out);
    use_proj = (cin != c_out);
    if (use_proj) proj = Conv2d<T>(ps, name + "/proj", 1, cin, c_out);
  }

  Var operator()(Ctx<T>& c, Var x) const {
    Var h = relu(c.tape, conv1(c, x));
    h = relu(c.tape, conv2(c, h));
    h = conv3(c, h);
    Var s = use_proj ? proj(c, x) : x;
    return add(c.tape, s, h);
  }
};

/// Global information layer: a 3x3 convolution, per-channel spatial max,
/// tiled back and concatenated onto the input. Adds c_pool channels.
template <typename T>
struct PoolInject {
  Conv2d<T> conv;

  PoolInject() = default;
  PoolInject(ParamStore<T>& ps, const std::string& name, int cin, int c_pool) {
    conv = Conv2d<T>(ps, name + "/conv", 3, cin, c_pool);
  }

  Var operator()(Ctx<T>& c, Var x) const {
    Var m = conv(c, x);
    Var g = channel_max_tile(c.tape, m);
    return concat_last(c.tape, {x, g});
  }
};

/// Observation embedding: two space-to-depth reductions (4 then 2)
/// interleaved with conv stacks; maps (H, W, cin) to (H/8, W/8, c_state).
template <typename T>
struct Encoder {
  ConvStack<T> stack1, stack2;
  int cin = 3;

  Encoder() = default;
  Encoder(ParamStore<T>& ps, const std::string& name, int cin_, int c16, int c32, int c_state)
      : cin(cin_) {
    stack1 = ConvStack<T>(ps, name + "/stack1", {3, c16, 5, c16, 3, c_state}, cin_ * 16);
    stack2 = ConvStack<T>(ps, name + "/stack2", {3, c32, 5, c32, 3, c_state}, c_state * 4);
  }

  Var operator()(Ctx<T>& c, Var o) const {
    const Tensor<T>& ov = c.tape.val(o);
    IM_CHECK(ov.ndim() == 3 && ov.dim(0) % 8 == 0 && ov.dim(1) % 8 == 0,
             "encoder: frame dims must be divisible by 8, got " + shape_str(ov.shape()));
    Var h = space_to_depth(c.tape, o, 4);
    h = stack1(c, h);
    h = space_to_depth(c.tape, h, 2);
    h = stack2(c, h);
    return relu(c.tape, h);
  }
};

template <typename T>
struct LatentStatsVar {
  Var mu;
  Var sigma;
};

/// Shared head shape of the prior and posterior: a conv stack whose final
/// convolution emits 2*c_latent channels, split into a mean and a
/// softplus-rectified standard deviation.
template <typename T>
struct GaussianHead {
  ConvStack<T> stack;
  int c_latent = 0;

  GaussianHead() = default;
  GaussianHead(ParamStore<T>& ps, const std::string& name, int cin, int c32, int c_latent_)
      : c_latent(c_latent_) {
    stack = ConvStack<T>(ps, name + "/stack", {1, c32, 3, c32, 3, 2 * c_latent_}, cin);
  }

  LatentStatsVar<T> operator()(Ctx<T>& c, Var x) const {
    Var h = stack(c, x);
    Var mu = slice_last(c.tape, h, 0, c_latent);
    Var sigma = softplus(c.tape, slice_last(c.tape, h, c_latent, c_latent));
    return {mu, sigma};
  }
};

/// State transition g(s, z, a [, extra]): concat, residual stack, relu,
/// pool & inject, residual stack. Output has c_state channels.
template <typename T>
struct Transition {
  ResConv<T> res1, res2;
  PoolInject<T> pool;

  Transition() = default;
  Transition(ParamStore<T>& ps, const std::string& name, int cin, int c_mid, int c_pool,
             int c_state) {
    res1 = ResConv<T>(ps, name + "/res1", cin, c_mid, c_state);
    pool = PoolInject<T>(ps, name + "/pool", c_state, c_pool);
    res2 = ResConv<T>(ps, name + "/res2", c_state + c_pool, c_mid, c_state);
  }

  Var operator()(Ctx<T>& c, Var concat_in) const {
    Var h = relu(c.tape, res1(c, concat_in));
    h = pool(c, h);
    return res2(c, h);
  }
};

/// Pixel and reward observation heads. The pixel path expands (h, w)
/// back to (8h, 8w, 3) log-odds; the reward path reads the state alone.
template <typename T>
struct Decoder {
  ConvStack<T> stack1, stack2;
  Conv2d<T> reward_conv;
  Dense<T> reward_fc;
  int reward_bits = 8;

  Decoder() = default;
  Decoder(ParamStore<T>& ps, const std::string& name, int c_state, int c_latent, int c32,
          int c64, int c24, int state_h, int state_w, int reward_bits_)
      : reward_bits(reward_bits_) {
    IM_CHECK(c64 % 4 == 0, "decoder: first-stack channels must split across depth-to-space");
    stack1 = ConvStack<T>(ps, name + "/stack1", {1, c32, 5, c32, 3, c64}, c_state + c_latent);
    stack2 = ConvStack<T>(ps, name + "/stack2", {3, c64, 3, c64, 1, 48}, c64 / 4);
    reward_conv = Conv2d<T>(ps, name + "/reward_conv", 3, c_state, c24);
    reward_fc = Dense<T>(ps, name + "/reward_fc", state_h * state_w * c24, reward_bits_ + 2);
  }

  Var pixels(Ctx<T>& c, Var s, Var z) const {
    const Tensor<T>& sv = c.tape.val(s);
    const Tensor<T>& zv = c.tape.val(z);
    IM_CHECK(sv.dim(0) == zv.dim(0) && sv.dim(1) == zv.dim(1),
             "decoder: state/latent spatial mismatch");
    Var h = concat_last(c.tape, {s, z});
    h = stack1(c, h);
    h = depth_to_space(c.tape, h, 2);
    h = stack2(c, h);
    return depth_to_space(c.tape, h, 4);
  }

  Var reward_logits(Ctx<T>& c, Var s) const {
    Var h = relu(c.tape, reward_conv(c, s));
    return reward_fc(c, flatten(c.tape, h));
  }
};

/// Fuses three context embeddings into the first state.
template <typename T>
struct InitialState {
  ConvStack<T> stack;

  InitialState() = default;
  InitialState(ParamStore<T>& ps, const std::string& name, int c_state) {
    stack = ConvStack<T>(ps, name + "/stack", {1, c_state, 3, c_state, 3, c_state},
                         3 * c_state);
  }

  Var operator()(Ctx<T>& c, Var e0, Var e1, Var e2) const {
    Var h = concat_last(c.tape, {e0, e1, e2});
    return stack(c, h);
  }
};

/// LSTM cell; gate order (i, f, g, o), forget bias +1.
template <typename T>
struct LstmCell {
  Dense<T> gates_x;
  ParamEntry<T>* w_h = nullptr;
  int hidden = 0;

  LstmCell() = default;
  LstmCell(ParamStore<T>& ps, const std::string& name, int in, int hidden_)
      : hidden(hidden_) {
    gates_x = Dense<T>(ps, name + "/wx", in, 4 * hidden_);
    w_h = &ps.weight(name + "/wh", {hidden_, 4 * hidden_});
  }

  struct State {
    Var h;
    Var c;
  };

  State operator()(Ctx<T>& c, Var x, State prev) const {
    Var zx = gates_x(c, x);
    Var zh = linear(c.tape, prev.h, c.p(*w_h),
                    c.tape.constant(Tensor<T>({4 * hidden})));
    Var z = add(c.tape, zx, zh);
    Var i = sigmoid(c.tape, slice_last(c.tape, z, 0, hidden));
    Var f = sigmoid(c.tape, affine(c.tape, slice_last(c.tape, z, hidden, hidden), T(1), T(1)));
    Var g = tanh_op(c.tape, slice_last(c.tape, z, 2 * hidden, hidden));
    Var o = sigmoid(c.tape, slice_last(c.tape, z, 3 * hidden, hidden));
    Var cn = add(c.tape, mul(c.tape, f, prev.c), mul(c.tape, i, g));
    Var hn = mul(c.tape, o, tanh_op(c.tape, cn));
    return {hn, cn};
  }

  State zero_state(Ctx<T>& c) const {
    return {c.tape.constant(Tensor<T>({hidden})), c.tape.constant(Tensor<T>({hidden}))};
  }
};

}  // namespace imagine
