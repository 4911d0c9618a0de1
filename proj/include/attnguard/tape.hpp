// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "attnguard/tensor.hpp"

namespace attnguard {

// Reverse-mode tape. Every op records its inputs and a backward closure;
// backward() replays the closures once each in reverse creation order.
// A tape is single-threaded while recording.
class GradientTape {
public:
    struct Val {
        int idx = -1;
        const GradientTape* owner = nullptr;
    };

    GradientTape() = default;
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    Val leaf(Tensor t);

    const Tensor& value(Val v) const { return nodes_[check(v)].value; }
    const Tensor& grad(Val v) const { return nodes_[check(v)].grad; }

    // --- kernels -----------------------------------------------------------
    Val matmul(Val a, Val b);
    Val matmul_nt(Val a, Val b); // a * b^T
    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);
    Val div(Val a, Val b);
    Val scale(Val a, double c);
    Val add_scalar(Val a, double c);
    Val add_row_broadcast(Val x, Val bias); // bias: [1 x c] or [c]
    Val relu(Val a);
    Val sqrt_elem(Val a);
    Val softmax_rows(Val a);
    Val layer_norm_rows(Val x, Val gain, Val bias, double eps = 1e-5);
    Val gather_rows(Val table, std::vector<int> idx);
    Val slice_rows(Val x, int r0, int n);
    Val slice_cols(Val x, int c0, int n);
    Val concat_rows(const std::vector<Val>& xs);
    Val concat_cols(const std::vector<Val>& xs);
    Val sum(Val x); // scalar
    // mean over rows of -log softmax(row)[target]
    Val cross_entropy(Val logits, std::vector<int> targets);

    void backward(Val loss);
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back; // empty for leaves
    };

    int check(Val v) const;
    Val push(Tensor value, std::function<void()> back = {});
    Tensor& grad_mut(int idx) { return nodes_[idx].grad; }

    std::vector<Node> nodes_;
};

using Val = GradientTape::Val;

} // namespace attnguard
