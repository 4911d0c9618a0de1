// SPDX-License-Identifier: Apache-2.0
#include "attnguard/tape.hpp"

#include <algorithm>
#include <cmath>

namespace attnguard {

int GradientTape::check(Val v) const {
    if (v.owner != this)
        throw ProvenanceError("value does not belong to this tape");
    if (v.idx < 0 || v.idx >= static_cast<int>(nodes_.size()))
        throw ProvenanceError("value index out of range");
    return v.idx;
}

Val GradientTape::push(Tensor value, std::function<void()> back) {
    Node n;
    n.grad = Tensor(value.shape);
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1, this};
}

Val GradientTape::leaf(Tensor t) { return push(std::move(t)); }

static void require_2d(const Tensor& t, const char* who) {
    if (t.shape.size() != 2) throw DimensionError(std::string(who) + ": expected rank-2 tensor");
}

Val GradientTape::matmul(Val a, Val b) {
    int ia = check(a), ib = check(b);
    const Tensor& A = nodes_[ia].value;
    const Tensor& B = nodes_[ib].value;
    require_2d(A, "matmul");
    require_2d(B, "matmul");
    if (A.shape[1] != B.shape[0])
        throw DimensionError("matmul: inner dimensions disagree: " + shape_str(A) + " x " + shape_str(B));
    int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor C({m, n});
    matmul_raw(A.data.data(), B.data.data(), C.data.data(), m, k, n, false, false);
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, ib, io, m, k, n]() {
        const Tensor& dC = nodes_[io].grad;
        const Tensor& A2 = nodes_[ia].value;
        const Tensor& B2 = nodes_[ib].value;
        // dA += dC * B^T ; dB += A^T * dC
        matmul_raw(dC.data.data(), B2.data.data(), nodes_[ia].grad.data.data(), m, n, k, false, true, 1.0, 1.0);
        matmul_raw(A2.data.data(), dC.data.data(), nodes_[ib].grad.data.data(), k, m, n, true, false, 1.0, 1.0);
    };
    return out;
}

Val GradientTape::matmul_nt(Val a, Val b) {
    int ia = check(a), ib = check(b);
    const Tensor& A = nodes_[ia].value;
    const Tensor& B = nodes_[ib].value;
    require_2d(A, "matmul_nt");
    require_2d(B, "matmul_nt");
    if (A.shape[1] != B.shape[1])
        throw DimensionError("matmul_nt: inner dimensions disagree: " + shape_str(A) + " x " + shape_str(B) + "^T");
    int m = A.shape[0], k = A.shape[1], n = B.shape[0];
    Tensor C({m, n});
    matmul_raw(A.data.data(), B.data.data(), C.data.data(), m, k, n, false, true);
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, ib, io, m, k, n]() {
        const Tensor& dC = nodes_[io].grad;
        const Tensor& A2 = nodes_[ia].value;
        const Tensor& B2 = nodes_[ib].value;
        // C = A B^T: dA += dC * B ; dB += dC^T * A
        matmul_raw(dC.data.data(), B2.data.data(), nodes_[ia].grad.data.data(), m, n, k, false, false, 1.0, 1.0);
        matmul_raw(dC.data.data(), A2.data.data(), nodes_[ib].grad.data.data(), n, m, k, true, false, 1.0, 1.0);
    };
    return out;
}

Val GradientTape::add(Val a, Val b) {
    int ia = check(a), ib = check(b);
    const Tensor& A = nodes_[ia].value;
    const Tensor& B = nodes_[ib].value;
    if (!A.same_shape(B)) throw DimensionError("add: shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, ib, io]() {
        const Tensor& d = nodes_[io].grad;
        for (size_t i = 0; i < d.data.size(); ++i) {
            nodes_[ia].grad.data[i] += d.data[i];
            nodes_[ib].grad.data[i] += d.data[i];
        }
    };
    return out;
}

Val GradientTape::sub(Val a, Val b) {
    int ia = check(a), ib = check(b);
    const Tensor& A = nodes_[ia].value;
    const Tensor& B = nodes_[ib].value;
    if (!A.same_shape(B)) throw DimensionError("sub: shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] -= B.data[i];
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, ib, io]() {
        const Tensor& d = nodes_[io].grad;
        for (size_t i = 0; i < d.data.size(); ++i) {
            nodes_[ia].grad.data[i] += d.data[i];
            nodes_[ib].grad.data[i] -= d.data[i];
        }
    };
    return out;
}

Val GradientTape::mul(Val a, Val b) {
    int ia = check(a), ib = check(b);
    const Tensor& A = nodes_[ia].value;
    const Tensor& B = nodes_[ib].value;
    if (!A.same_shape(B)) throw DimensionError("mul: shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, ib, io]() {
        const Tensor& d = nodes_[io].grad;
        const Tensor& A2 = nodes_[ia].value;
        const Tensor& B2 = nodes_[ib].value;
        for (size_t i = 0; i < d.data.size(); ++i) {
            nodes_[ia].grad.data[i] += d.data[i] * B2.data[i];
            nodes_[ib].grad.data[i] += d.data[i] * A2.data[i];
        }
    };
    return out;
}

Val GradientTape::div(Val a, Val b) {
    int ia = check(a), ib = check(b);
    const Tensor& A = nodes_[ia].value;
    const Tensor& B = nodes_[ib].value;
    if (!A.same_shape(B)) throw DimensionError("div: shape mismatch");
    Tensor C = A;
    for (size_t i = 0; i < C.data.size(); ++i) C.data[i] /= B.data[i];
    if (!all_finite(C)) throw NumericalError("div: non-finite result");
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, ib, io]() {
        const Tensor& d = nodes_[io].grad;
        const Tensor& A2 = nodes_[ia].value;
        const Tensor& B2 = nodes_[ib].value;
        for (size_t i = 0; i < d.data.size(); ++i) {
            nodes_[ia].grad.data[i] += d.data[i] / B2.data[i];
            nodes_[ib].grad.data[i] -= d.data[i] * A2.data[i] / (B2.data[i] * B2.data[i]);
        }
    };
    return out;
}

Val GradientTape::scale(Val a, double c) {
    int ia = check(a);
    Tensor C = nodes_[ia].value;
    for (double& v : C.data) v *= c;
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, io, c]() {
        const Tensor& d = nodes_[io].grad;
        for (size_t i = 0; i < d.data.size(); ++i) nodes_[ia].grad.data[i] += c * d.data[i];
    };
    return out;
}

Val GradientTape::add_scalar(Val a, double c) {
    int ia = check(a);
    Tensor C = nodes_[ia].value;
    for (double& v : C.data) v += c;
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, io]() {
        const Tensor& d = nodes_[io].grad;
        for (size_t i = 0; i < d.data.size(); ++i) nodes_[ia].grad.data[i] += d.data[i];
    };
    return out;
}

Val GradientTape::add_row_broadcast(Val x, Val bias) {
    int ix = check(x), ib = check(bias);
    const Tensor& X = nodes_[ix].value;
    const Tensor& B = nodes_[ib].value;
    require_2d(X, "add_row_broadcast");
    if (static_cast<int>(B.data.size()) != X.shape[1])
        throw DimensionError("add_row_broadcast: bias length must equal column count");
    int r = X.shape[0], c = X.shape[1];
    Tensor C = X;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) C.at(i, j) += B.data[j];
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ix, ib, io, r, c]() {
        const Tensor& d = nodes_[io].grad;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
                nodes_[ix].grad.data[static_cast<size_t>(i) * c + j] += d.at(i, j);
                nodes_[ib].grad.data[j] += d.at(i, j);
            }
    };
    return out;
}

Val GradientTape::relu(Val a) {
    int ia = check(a);
    Tensor C = nodes_[ia].value;
    for (double& v : C.data) v = v > 0.0 ? v : 0.0;
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, io]() {
        const Tensor& d = nodes_[io].grad;
        const Tensor& A2 = nodes_[ia].value;
        for (size_t i = 0; i < d.data.size(); ++i)
            if (A2.data[i] > 0.0) nodes_[ia].grad.data[i] += d.data[i];
    };
    return out;
}

Val GradientTape::sqrt_elem(Val a) {
    int ia = check(a);
    Tensor C = nodes_[ia].value;
    for (double& v : C.data) {
        if (v < 0.0) throw NumericalError("sqrt_elem: negative input");
        v = std::sqrt(v);
    }
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, io]() {
        const Tensor& d = nodes_[io].grad;
        const Tensor& Y = nodes_[io].value;
        for (size_t i = 0; i < d.data.size(); ++i)
            nodes_[ia].grad.data[i] += d.data[i] * 0.5 / std::max(Y.data[i], 1e-300);
    };
    return out;
}

Val GradientTape::softmax_rows(Val a) {
    int ia = check(a);
    const Tensor& A = nodes_[ia].value;
    require_2d(A, "softmax_rows");
    int r = A.shape[0], c = A.shape[1];
    Tensor C({r, c});
    for (int i = 0; i < r; ++i) {
        double mx = A.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, A.at(i, j));
        if (mx <= kDegenerateRowThreshold)
            throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " entirely at the negative sentinel");
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            double e = std::exp(A.at(i, j) - mx);
            C.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) C.at(i, j) /= z;
    }
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ia, io, r, c]() {
        const Tensor& d = nodes_[io].grad;
        const Tensor& Y = nodes_[io].value;
        for (int i = 0; i < r; ++i) {
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += d.at(i, j) * Y.at(i, j);
            for (int j = 0; j < c; ++j)
                nodes_[ia].grad.data[static_cast<size_t>(i) * c + j] += Y.at(i, j) * (d.at(i, j) - dot);
        }
    };
    return out;
}

Val GradientTape::layer_norm_rows(Val x, Val gain, Val bias, double eps) {
    int ix = check(x), ig = check(gain), ib = check(bias);
    const Tensor& X = nodes_[ix].value;
    require_2d(X, "layer_norm_rows");
    int r = X.shape[0], c = X.shape[1];
    if (static_cast<int>(nodes_[ig].value.data.size()) != c ||
        static_cast<int>(nodes_[ib].value.data.size()) != c)
        throw DimensionError("layer_norm_rows: gain/bias length must equal column count");
    Tensor C({r, c});
    std::vector<double> inv_std(r), mean(r);
    for (int i = 0; i < r; ++i) {
        double m = 0.0;
        for (int j = 0; j < c; ++j) m += X.at(i, j);
        m /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            double dv = X.at(i, j) - m;
            var += dv * dv;
        }
        var /= c;
        mean[i] = m;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
    }
    const Tensor& G = nodes_[ig].value;
    const Tensor& B = nodes_[ib].value;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            C.at(i, j) = (X.at(i, j) - mean[i]) * inv_std[i] * G.data[j] + B.data[j];
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ix, ig, ib, io, r, c, mean, inv_std]() {
        const Tensor& d = nodes_[io].grad;
        const Tensor& X2 = nodes_[ix].value;
        const Tensor& G2 = nodes_[ig].value;
        for (int i = 0; i < r; ++i) {
            // xhat_j = (x_j - m) * s ; y_j = xhat_j * g_j + b_j
            double s = inv_std[i];
            double sum_dg = 0.0, sum_dgx = 0.0;
            for (int j = 0; j < c; ++j) {
                double xhat = (X2.at(i, j) - mean[i]) * s;
                double dy = d.at(i, j);
                nodes_[ig].grad.data[j] += dy * xhat;
                nodes_[ib].grad.data[j] += dy;
                double dxhat = dy * G2.data[j];
                sum_dg += dxhat;
                sum_dgx += dxhat * xhat;
            }
            for (int j = 0; j < c; ++j) {
                double xhat = (X2.at(i, j) - mean[i]) * s;
                double dxhat = d.at(i, j) * G2.data[j];
                nodes_[ix].grad.data[static_cast<size_t>(i) * c + j] +=
                    s * (dxhat - sum_dg / c - xhat * sum_dgx / c);
            }
        }
    };
    return out;
}

Val GradientTape::gather_rows(Val table, std::vector<int> idx) {
    int it = check(table);
    const Tensor& T = nodes_[it].value;
    require_2d(T, "gather_rows");
    int c = T.shape[1];
    for (int i : idx)
        if (i < 0 || i >= T.shape[0]) throw IndexError("gather_rows: row index out of range");
    Tensor C({static_cast<int>(idx.size()), c});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(&T.data[static_cast<size_t>(idx[r]) * c], c, &C.data[r * c]);
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, it, io, idx = std::move(idx), c]() {
        const Tensor& d = nodes_[io].grad;
        for (size_t r = 0; r < idx.size(); ++r)
            for (int j = 0; j < c; ++j)
                nodes_[it].grad.data[static_cast<size_t>(idx[r]) * c + j] += d.data[r * c + j];
    };
    return out;
}

Val GradientTape::slice_rows(Val x, int r0, int n) {
    int ix = check(x);
    const Tensor& X = nodes_[ix].value;
    require_2d(X, "slice_rows");
    if (r0 < 0 || n < 0 || r0 + n > X.shape[0]) throw IndexError("slice_rows: range out of bounds");
    int c = X.shape[1];
    Tensor C({n, c});
    std::copy_n(&X.data[static_cast<size_t>(r0) * c], static_cast<size_t>(n) * c, C.data.data());
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ix, io, r0, n, c]() {
        const Tensor& d = nodes_[io].grad;
        for (size_t i = 0; i < static_cast<size_t>(n) * c; ++i)
            nodes_[ix].grad.data[static_cast<size_t>(r0) * c + i] += d.data[i];
    };
    return out;
}

Val GradientTape::slice_cols(Val x, int c0, int n) {
    int ix = check(x);
    const Tensor& X = nodes_[ix].value;
    require_2d(X, "slice_cols");
    if (c0 < 0 || n < 0 || c0 + n > X.shape[1]) throw IndexError("slice_cols: range out of bounds");
    int r = X.shape[0], c = X.shape[1];
    Tensor C({r, n});
    for (int i = 0; i < r; ++i)
        std::copy_n(&X.data[static_cast<size_t>(i) * c + c0], n, &C.data[static_cast<size_t>(i) * n]);
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ix, io, c0, n, r, c]() {
        const Tensor& d = nodes_[io].grad;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < n; ++j)
                nodes_[ix].grad.data[static_cast<size_t>(i) * c + c0 + j] += d.data[static_cast<size_t>(i) * n + j];
    };
    return out;
}

Val GradientTape::concat_rows(const std::vector<Val>& xs) {
    if (xs.empty()) throw ArgumentError("concat_rows: empty input");
    std::vector<int> ids;
    int c = -1, total = 0;
    for (Val v : xs) {
        int i = check(v);
        const Tensor& T = nodes_[i].value;
        require_2d(T, "concat_rows");
        if (c < 0) c = T.shape[1];
        else if (c != T.shape[1]) throw DimensionError("concat_rows: column counts differ");
        total += T.shape[0];
        ids.push_back(i);
    }
    Tensor C({total, c});
    size_t off = 0;
    for (int i : ids) {
        const Tensor& T = nodes_[i].value;
        std::copy(T.data.begin(), T.data.end(), C.data.begin() + off);
        off += T.data.size();
    }
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ids = std::move(ids), io]() {
        const Tensor& d = nodes_[io].grad;
        size_t off2 = 0;
        for (int i : ids) {
            Tensor& g = nodes_[i].grad;
            for (size_t j = 0; j < g.data.size(); ++j) g.data[j] += d.data[off2 + j];
            off2 += g.data.size();
        }
    };
    return out;
}

Val GradientTape::concat_cols(const std::vector<Val>& xs) {
    if (xs.empty()) throw ArgumentError("concat_cols: empty input");
    std::vector<int> ids;
    std::vector<int> widths;
    int r = -1, total = 0;
    for (Val v : xs) {
        int i = check(v);
        const Tensor& T = nodes_[i].value;
        require_2d(T, "concat_cols");
        if (r < 0) r = T.shape[0];
        else if (r != T.shape[0]) throw DimensionError("concat_cols: row counts differ");
        total += T.shape[1];
        ids.push_back(i);
        widths.push_back(T.shape[1]);
    }
    Tensor C({r, total});
    int coff = 0;
    for (size_t t = 0; t < ids.size(); ++t) {
        const Tensor& T = nodes_[ids[t]].value;
        for (int i = 0; i < r; ++i)
            std::copy_n(&T.data[static_cast<size_t>(i) * widths[t]], widths[t],
                        &C.data[static_cast<size_t>(i) * total + coff]);
        coff += widths[t];
    }
    Val out = push(std::move(C), {});
    int io = out.idx;
    nodes_[io].back = [this, ids = std::move(ids), widths = std::move(widths), io, r, total]() {
        const Tensor& d = nodes_[io].grad;
        int coff2 = 0;
        for (size_t t = 0; t < ids.size(); ++t) {
            Tensor& g = nodes_[ids[t]].grad;
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < widths[t]; ++j)
                    g.data[static_cast<size_t>(i) * widths[t] + j] += d.data[static_cast<size_t>(i) * total + coff2 + j];
            coff2 += widths[t];
        }
    };
    return out;
}

Val GradientTape::sum(Val x) {
    int ix = check(x);
    double s = 0.0;
    for (double v : nodes_[ix].value.data) s += v;
    Val out = push(Tensor::scalar(s), {});
    int io = out.idx;
    nodes_[io].back = [this, ix, io]() {
        double d = nodes_[io].grad.data[0];
        for (double& g : nodes_[ix].grad.data) g += d;
    };
    return out;
}

Val GradientTape::cross_entropy(Val logits, std::vector<int> targets) {
    int il = check(logits);
    const Tensor& L = nodes_[il].value;
    require_2d(L, "cross_entropy");
    int r = L.shape[0], c = L.shape[1];
    if (static_cast<int>(targets.size()) != r)
        throw DimensionError("cross_entropy: one target per logits row required");
    for (int t : targets)
        if (t < 0 || t >= c) throw IndexError("cross_entropy: target index out of range");
    // mean over rows of -log softmax(row)[target]
    Tensor probs({r, c});
    double loss = 0.0;
    for (int i = 0; i < r; ++i) {
        double mx = L.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, L.at(i, j));
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            double e = std::exp(L.at(i, j) - mx);
            probs.at(i, j) = e;
            z += e;
        }
        for (int j = 0; j < c; ++j) probs.at(i, j) /= z;
        loss -= std::log(std::max(probs.at(i, targets[i]), 1e-300));
    }
    loss /= r;
    if (!std::isfinite(loss)) throw NumericalError("cross_entropy: non-finite loss");
    Val out = push(Tensor::scalar(loss), {});
    int io = out.idx;
    nodes_[io].back = [this, il, io, targets = std::move(targets), probs = std::move(probs), r, c]() {
        double d = nodes_[io].grad.data[0] / r;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                nodes_[il].grad.data[static_cast<size_t>(i) * c + j] +=
                    d * (probs.at(i, j) - (j == targets[i] ? 1.0 : 0.0));
    };
    return out;
}

void GradientTape::backward(Val loss) {
    int il = check(loss);
    if (!nodes_[il].value.is_scalar())
        throw ArgumentError("backward: loss must be scalar");
    for (Node& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    nodes_[il].grad.data[0] = 1.0;
    for (int i = il; i >= 0; --i)
        if (nodes_[i].back) nodes_[i].back();
}

} // namespace attnguard
