#pragma once

#include <string>
#include <vector>

#include "imagine/nn/blocks.hpp"

namespace imagine {

/// Four-layer strided CNN over the latest frame followed by a 512-unit
/// fully connected layer; also the trunk of the model-free baseline.
template <typename T>
struct ModelFreePath {
  ConvStrided<T> conv1, conv2, conv3, conv4;
  Dense<T> fc;

  ModelFreePath() = default;
  ModelFreePath(ParamStore<T>& ps, const std::string& name, int frame_h, int frame_w) {
    conv1 = ConvStrided<T>(ps, name + "/conv1", 4, 2, 3, 16);
    conv2 = ConvStrided<T>(ps, name + "/conv2", 8, 4, 16, 32);
    conv3 = ConvStrided<T>(ps, name + "/conv3", 4, 2, 32, 64);
    conv4 = ConvStrided<T>(ps, name + "/conv4", 3, 1, 64, 64);
    const int flat = flat_size(frame_h, frame_w, 64);
    fc = Dense<T>(ps, name + "/fc", flat, 512);
  }

  static int conv_out(int size, int k, int s) { return (size - k) / s + 1; }
  static int flat_size(int h, int w, int c) {
    int oh = conv_out(conv_out(conv_out(conv_out(h, 4, 2), 8, 4), 4, 2), 3, 1);
    int ow = conv_out(conv_out(conv_out(conv_out(w, 4, 2), 8, 4), 4, 2), 3, 1);
    return oh * ow * c;
  }

  Var operator()(Ctx<T>& c, Var frame) const {
    Var h = relu(c.tape, conv1(c, frame));
    h = relu(c.tape, conv2(c, h));
    h = relu(c.tape, conv3(c, h));
    h = relu(c.tape, conv4(c, h));
    return relu(c.tape, fc(c, flatten(c.tape, h)));
  }
};

/// Per-step encoder of imagined features for the summarizer: two
/// convolutions, flatten, concat the imagined reward statistics, FC to 128.
template <typename T>
struct ImaginationEncoder {
  ConvStrided<T> conv1, conv2;
  Dense<T> fc;
  bool pixel_input = false;
  ConvStrided<T> px1, px2, px3, px4;  // strengthened encoder for pixel rollouts
  static constexpr int kRewardStats = 3;

  ImaginationEncoder() = default;
  ImaginationEncoder(ParamStore<T>& ps, const std::string& name, bool pixels, int in_h,
                     int in_w, int in_ch)
      : pixel_input(pixels) {
    if (!pixels) {
      conv1 = ConvStrided<T>(ps, name + "/conv1", 4, 1, in_ch, 32);
      conv2 = ConvStrided<T>(ps, name + "/conv2", 4, 1, 32, 16);
      const int oh = in_h - 3 - 3, ow = in_w - 3 - 3;
      IM_CHECK(oh >= 1 && ow >= 1, "state too small for the summarizer CNN");
      fc = Dense<T>(ps, name + "/fc", oh * ow * 16 + kRewardStats, 128);
    } else {
      px1 = ConvStrided<T>(ps, name + "/conv1", 4, 2, in_ch, 16);
      px2 = ConvStrided<T>(ps, name + "/conv2", 8, 4, 16, 32);
      px3 = ConvStrided<T>(ps, name + "/conv3", 4, 2, 32, 32);
      px4 = ConvStrided<T>(ps, name + "/conv4", 3, 1, 32, 32);
      const int flat = ModelFreePath<T>::flat_size(in_h, in_w, 32);
      fc = Dense<T>(ps, name + "/fc", flat + kRewardStats, 128);
    }
  }

  Var operator()(Ctx<T>& c, Var feature, Var reward_stats) const {
    Var h;
    if (!pixel_input) {
      h = relu(c.tape, conv1(c, feature));
      h = relu(c.tape, conv2(c, h));
    } else {
      h = relu(c.tape, px1(c, feature));
      h = relu(c.tape, px2(c, h));
      h = relu(c.tape, px3(c, h));
      h = relu(c.tape, px4(c, h));
    }
    Var flat = concat_last(c.tape, {flatten(c.tape, h), reward_stats});
    return fc(c, flat);
  }
};

/// Trainable rollout policy over abstract states: two convolutions, FC 128,
/// logits over the action set.
template <typename T>
struct StateRolloutPolicy {
  ConvStrided<T> conv1, conv2;
  Dense<T> fc, head;

  StateRolloutPolicy() = default;
  StateRolloutPolicy(ParamStore<T>& ps, const std::string& name, int in_h, int in_w,
                     int in_ch, int actions) {
    conv1 = ConvStrided<T>(ps, name + "/conv1", 4, 1, in_ch, 32);
    conv2 = ConvStrided<T>(ps, name + "/conv2", 4, 1, 32, 32);
    const int oh = in_h - 3 - 3, ow = in_w - 3 - 3;
    IM_CHECK(oh >= 1 && ow >= 1, "state too small for the rollout policy CNN");
    fc = Dense<T>(ps, name + "/fc", oh * ow * 32, 128);
    head = Dense<T>(ps, name + "/head", 128, actions);
  }

  Var operator()(Ctx<T>& c, Var state) const {
    Var h = relu(c.tape, conv1(c, state));
    h = relu(c.tape, conv2(c, h));
    h = relu(c.tape, fc(c, flatten(c.tape, h)));
    return head(c, h);
  }
};

/// Pixel-based rollout policy: the model-free CNN shape with 32-channel
/// final layers.
template <typename T>
struct PixelRolloutPolicy {
  ConvStrided<T> conv1, conv2, conv3, conv4;
  Dense<T> fc, head;

  PixelRolloutPolicy() = default;
  PixelRolloutPolicy(ParamStore<T>& ps, const std::string& name, int frame_h, int frame_w,
                     int actions) {
    conv1 = ConvStrided<T>(ps, name + "/conv1", 4, 2, 3, 16);
    conv2 = ConvStrided<T>(ps, name + "/conv2", 8, 4, 16, 32);
    conv3 = ConvStrided<T>(ps, name + "/conv3", 4, 2, 32, 32);
    conv4 = ConvStrided<T>(ps, name + "/conv4", 3, 1, 32, 32);
    const int flat = ModelFreePath<T>::flat_size(frame_h, frame_w, 32);
    fc = Dense<T>(ps, name + "/fc", flat, 128);
    head = Dense<T>(ps, name + "/head", 128, actions);
  }

  Var operator()(Ctx<T>& c, Var frame) const {
    Var h = relu(c.tape, conv1(c, frame));
    h = relu(c.tape, conv2(c, h));
    h = relu(c.tape, conv3(c, h));
    h = relu(c.tape, conv4(c, h));
    h = relu(c.tape, fc(c, flatten(c.tape, h)));
    return head(c, h);
  }
};

}  // namespace imagine
