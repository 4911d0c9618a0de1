// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "attnguard/common.hpp"

namespace attnguard {

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover everything the
// toy stack needs; higher ranks are not supported.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != static_cast<size_t>(numel_of(shape)))
            throw DimensionError("tensor data length does not match shape");
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) n *= d;
        return n;
    }

    long long numel() const { return static_cast<long long>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }

    int rows() const { return shape.size() == 2 ? shape[0] : (shape.empty() ? 1 : 1); }
    int cols() const {
        if (shape.size() == 2) return shape[1];
        if (shape.size() == 1) return shape[0];
        return 1;
    }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
};

// C = alpha * op(A) * op(B) + beta * C, row-major. Backed by BLAS dgemm.
void matmul_raw(const double* a, const double* b, double* c,
                int m, int k, int n, bool trans_a, bool trans_b,
                double alpha = 1.0, double beta = 0.0);

// Reference kernels used where clarity beats speed (never in the training hot path).
Tensor matmul_naive(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& t);
std::string shape_str(const Tensor& t);

} // namespace attnguard
