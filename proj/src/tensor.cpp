// SPDX-License-Identifier: Apache-2.0
#include "attnguard/tensor.hpp"

#include <cblas.h>
#include <cmath>
#include <sstream>

extern "C" void openblas_set_num_threads(int);

namespace attnguard {

namespace {
struct BlasSingleThreadInit {
    BlasSingleThreadInit() {
        // Multi-threaded dgemm reorders reductions; a single thread keeps
        // results bit-identical run to run.
        openblas_set_num_threads(1);
    }
};
const BlasSingleThreadInit blas_init;
} // namespace

void matmul_raw(const double* a, const double* b, double* c,
                int m, int k, int n, bool trans_a, bool trans_b,
                double alpha, double beta) {
    cblas_dgemm(CblasRowMajor,
                trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans,
                m, n, k, alpha,
                a, trans_a ? m : k,
                b, trans_b ? k : n,
                beta, c, n);
}

Tensor matmul_naive(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        throw DimensionError("matmul_naive: shapes " + shape_str(a) + " x " + shape_str(b));
    int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor c({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double av = a.at(i, p);
            for (int j = 0; j < n; ++j) c.at(i, j) += av * b.at(p, j);
        }
    return c;
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < t.shape.size(); ++i) os << (i ? "x" : "") << t.shape[i];
    os << "]";
    return os.str();
}

} // namespace attnguard
