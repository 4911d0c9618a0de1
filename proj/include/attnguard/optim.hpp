// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "attnguard/rng.hpp"
#include "attnguard/tape.hpp"

namespace attnguard {

struct AdamState {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

// Standard Adam with bias correction. Moment tensors are lazily created on the
// first step and must keep their shapes afterwards.
void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state);

// Builds a scalar loss from leaves created for `params`, in order.
using LossBuilder = std::function<Val(GradientTape&, const std::vector<Val>&)>;

// Central-difference comparison of `analytic_grads` against finite differences
// of `f`, over a sampled subset of coordinates (up to `samples_per_tensor` per
// parameter tensor). Returns the worst relative error, with the denominator
// floored at 1 so that tiny gradients are compared absolutely.
double grad_check_against(const std::function<double(const std::vector<Tensor>&)>& f,
                          const std::vector<Tensor>& params,
                          const std::vector<Tensor>& analytic_grads,
                          double step, int samples_per_tensor, Pcg32& rng);

// Tape-driven variant: runs backward() on the recorded graph and checks those
// gradients against central differences of the same builder.
double grad_check(const LossBuilder& build, const std::vector<Tensor>& params,
                  double step, int samples_per_tensor, Pcg32& rng);

} // namespace attnguard
