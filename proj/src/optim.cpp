// SPDX-License-Identifier: Apache-2.0
#include "attnguard/optim.hpp"

#include <cmath>

namespace attnguard {

void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state) {
    if (params.size() != grads.size())
        throw DimensionError("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->shape);
            state.v.emplace_back(p->shape);
        }
    }
    if (state.m.size() != params.size())
        throw DimensionError("adam_step: state was built for a different parameter set");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        const Tensor& g = *grads[t];
        if (!p.same_shape(g) || !p.same_shape(state.m[t]))
            throw DimensionError("adam_step: shape mismatch on parameter " + std::to_string(t));
        for (size_t i = 0; i < p.data.size(); ++i) {
            double gi = g.data[i];
            state.m[t].data[i] = state.beta1 * state.m[t].data[i] + (1.0 - state.beta1) * gi;
            state.v[t].data[i] = state.beta2 * state.v[t].data[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = state.m[t].data[i] / bc1;
            double vhat = state.v[t].data[i] / bc2;
            p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

namespace {

double eval_loss(const LossBuilder& build, const std::vector<Tensor>& params) {
    GradientTape tape;
    std::vector<Val> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Val loss = build(tape, leaves);
    double v = tape.value(loss).data[0];
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss during probing");
    return v;
}

} // namespace

double grad_check_against(const std::function<double(const std::vector<Tensor>&)>& f,
                          const std::vector<Tensor>& params,
                          const std::vector<Tensor>& analytic_grads,
                          double step, int samples_per_tensor, Pcg32& rng) {
    if (step <= 0.0) throw ArgumentError("grad_check: step must be positive");
    if (analytic_grads.size() != params.size())
        throw DimensionError("grad_check: gradient count mismatch");

    double worst = 0.0;
    std::vector<Tensor> probe = params;
    for (size_t t = 0; t < params.size(); ++t) {
        long long n = params[t].numel();
        if (n == 0) continue;
        int take = static_cast<int>(std::min<long long>(n, samples_per_tensor));
        for (int s = 0; s < take; ++s) {
            size_t i = (n <= samples_per_tensor)
                           ? static_cast<size_t>(s)
                           : rng.next_below(static_cast<uint32_t>(n));
            double orig = probe[t].data[i];
            probe[t].data[i] = orig + step;
            double fp = f(probe);
            probe[t].data[i] = orig - step;
            double fm = f(probe);
            probe[t].data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericalError("grad_check: non-finite loss during probing");
            double numeric = (fp - fm) / (2.0 * step);
            double analytic = analytic_grads[t].data[i];
            double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic)});
            worst = std::max(worst, std::fabs(numeric - analytic) / denom);
        }
    }
    return worst;
}

double grad_check(const LossBuilder& build, const std::vector<Tensor>& params,
                  double step, int samples_per_tensor, Pcg32& rng) {
    GradientTape tape;
    std::vector<Val> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Val loss = build(tape, leaves);
    if (!std::isfinite(tape.value(loss).data[0]))
        throw NumericalError("grad_check: non-finite loss");
    tape.backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Val l : leaves) analytic.push_back(tape.grad(l));
    auto f = [&build](const std::vector<Tensor>& p) { return eval_loss(build, p); };
    return grad_check_against(f, params, analytic, step, samples_per_tensor, rng);
}

} // namespace attnguard
