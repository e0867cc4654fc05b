#pragma once

#include <functional>
#include <map>
#include <vector>

#include "imagine/core/ops.hpp"
#include "imagine/nn/blocks.hpp"

namespace imagine::test {

using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline double eval_scalar(std::vector<Tensor<double>>& inputs, const BuildFn& build) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(tape.constant(t));
  Var root = build(tape, vars);
  return tape.val(root)[0];
}

/// Max relative error between tape gradients and central finite differences
/// over all coordinates of all inputs. `build` must return a scalar.
inline double max_grad_rel_err(std::vector<Tensor<double>> inputs, const BuildFn& build,
                               double h = 1e-5) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (auto& t : inputs) vars.push_back(tape.input(t));
  Var root = build(tape, vars);
  tape.backward(root);
  std::vector<Tensor<double>> analytic;
  for (Var v : vars) analytic.push_back(tape.grad_of(v));

  double worst = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (long j = 0; j < inputs[i].numel(); ++j) {
      const double save = inputs[i][j];
      const double step = h * std::max(1.0, std::abs(save));
      const double a = analytic[i][j];
      double best = 1e300;
      // retry with shrinking steps: escapes relu/argmax kinks that sit
      // within the probe interval but not at the evaluation point
      for (double hk : {step, step / 8, step / 64}) {
        inputs[i][j] = save + hk;
        const double fp = eval_scalar(inputs, build);
        inputs[i][j] = save - hk;
        const double fm = eval_scalar(inputs, build);
        inputs[i][j] = save;
        const double numeric = (fp - fm) / (2 * hk);
        const double diff = std::abs(a - numeric);
        const double rel =
            diff <= 1e-6 ? 0.0
                         : diff / std::max({std::abs(a), std::abs(numeric), 1e-6});
        best = std::min(best, rel);
        if (best < 1e-5) break;
      }
      worst = std::max(worst, best);
    }
  }
  return worst;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0,
                                    double offset = 0.0) {
  Tensor<double> t(std::move(shape));
  for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale + offset;
  return t;
}

/// Gradient check over every parameter in a store (optionally a random
/// subsample of coordinates per tensor). `build_loss` must return a scalar
/// Var; it is re-invoked on fresh tapes for the numeric probes.
template <typename F>
double max_store_grad_rel_err(ParamStore<double>& ps, F build_loss,
                              int coords_per_tensor = -1, double h = 1e-5,
                              uint64_t seed = 1234) {
  ps.zero_grads();
  {
    Tape<double> tape;
    Ctx<double> c{tape, true};
    Var root = build_loss(c);
    tape.backward(root);
  }
  std::map<std::string, Tensor<double>> analytic;
  for (auto& [n, e] : ps) analytic[n] = e.grad;

  auto eval = [&]() {
    Tape<double> tape;
    Ctx<double> c{tape, false};
    Var root = build_loss(c);
    return tape.val(root)[0];
  };

  Rng pick(seed);
  double worst = 0;
  for (auto& [n, e] : ps) {
    std::vector<long> coords;
    if (coords_per_tensor < 0 || e.value.numel() <= coords_per_tensor) {
      for (long j = 0; j < e.value.numel(); ++j) coords.push_back(j);
    } else {
      for (int k = 0; k < coords_per_tensor; ++k)
        coords.push_back(pick.uniform_int(static_cast<int>(e.value.numel())));
    }
    for (long j : coords) {
      const double save = e.value[j];
      const double step = h * std::max(1.0, std::abs(save));
      const double a = analytic[n][j];
      double best = 1e300;
      for (double hk : {step, step / 8, step / 64}) {
        e.value[j] = save + hk;
        const double fp = eval();
        e.value[j] = save - hk;
        const double fm = eval();
        e.value[j] = save;
        const double numeric = (fp - fm) / (2 * hk);
        const double diff = std::abs(a - numeric);
        const double rel =
            diff <= 1e-6 ? 0.0
                         : diff / std::max({std::abs(a), std::abs(numeric), 1e-6});
        best = std::min(best, rel);
        if (best < 1e-5) break;
      }
      worst = std::max(worst, best);
    }
  }
  return worst;
}

/// Plain reference convolution (stride 1, zero padding), written as a
/// straight per-output accumulation so block outputs can be cross-checked
/// against an independent evaluation path.
inline Tensor<double> conv2d_reference(const Tensor<double>& x, const Tensor<double>& w,
                                       const Tensor<double>& b) {
  const int H = x.dim(0), W = x.dim(1), CI = x.dim(2);
  const int K = w.dim(0), CO = w.dim(3);
  const int P = (K - 1) / 2;
  Tensor<double> out({H, W, CO});
  for (int y = 0; y < H; ++y)
    for (int xx = 0; xx < W; ++xx)
      for (int co = 0; co < CO; ++co) {
        double acc = b[co];
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            const int iy = y + ky - P, ix = xx + kx - P;
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
            for (int ci = 0; ci < CI; ++ci) acc += x(iy, ix, ci) * w(ky, kx, ci, co);
          }
        out(y, xx, co) = acc;
      }
  return out;
}

}  // namespace imagine::test
