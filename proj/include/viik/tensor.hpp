#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "viik/errors.hpp"

namespace viik::ad {

/// Dense row-major tensor of 64-bit floats. Plain value type: copies copy the
/// buffer, there is no view aliasing.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(count(shape), 0.0);
    }

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size())
            throw NumericError("tensor: shape/data size mismatch");
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor ones(std::vector<std::size_t> s) { return full(std::move(s), 1.0); }

    std::size_t size() const { return data.size(); }
    std::size_t ndim() const { return shape.size(); }

    // 2-D accessors; a 1-D tensor behaves like a single row.
    std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
    std::size_t cols() const {
        return shape.size() >= 2 ? shape[1] : (shape.empty() ? 0 : shape[0]);
    }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    bool is_scalar() const { return data.size() == 1; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

[[noreturn]] inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw NumericError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                       b.shape_str());
}

[[noreturn]] inline void shape_error(const char* op, const Tensor& a) {
    throw NumericError(std::string(op) + ": bad shape " + a.shape_str());
}

// ---------------------------------------------------------------------------
// Raw kernels. These back both the autodiff ops and the tape-free inference
// paths, so the two always agree bit for bit.
// ---------------------------------------------------------------------------

/// C[m,n] += A[m,k] * B[k,n], row-major. Register-tiled 4x32 kernel; the
/// accumulation order is fixed, so results are identical run to run.
inline void gemm_acc(const double* __restrict a, const double* __restrict b,
                     double* __restrict c, std::size_t m, std::size_t k,
                     std::size_t n) {
    constexpr std::size_t JT = 32, JS = 8, IT = 4;
    auto tail_cell = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
        c[i * n + j] += s;
    };
    std::size_t i0 = 0;
    for (; i0 + IT <= m; i0 += IT) {
        const double* a0 = a + i0 * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        std::size_t j0 = 0;
        for (; j0 + JT <= n; j0 += JT) {
            double acc0[JT] = {0}, acc1[JT] = {0}, acc2[JT] = {0}, acc3[JT] = {0};
            for (std::size_t p = 0; p < k; ++p) {
                const double* br = b + p * n + j0;
                double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
                for (std::size_t t = 0; t < JT; ++t) {
                    double bv = br[t];
                    acc0[t] += v0 * bv;
                    acc1[t] += v1 * bv;
                    acc2[t] += v2 * bv;
                    acc3[t] += v3 * bv;
                }
            }
            for (std::size_t t = 0; t < JT; ++t) {
                c[(i0 + 0) * n + j0 + t] += acc0[t];
                c[(i0 + 1) * n + j0 + t] += acc1[t];
                c[(i0 + 2) * n + j0 + t] += acc2[t];
                c[(i0 + 3) * n + j0 + t] += acc3[t];
            }
        }
        for (; j0 + JS <= n; j0 += JS) {  // narrow outputs (small layer widths)
            typedef double v8 __attribute__((vector_size(64)));
            v8 acc0 = {}, acc1 = {}, acc2 = {}, acc3 = {};
            for (std::size_t p = 0; p < k; ++p) {
                v8 bv;
                std::memcpy(&bv, b + p * n + j0, sizeof bv);
                acc0 += a0[p] * bv;
                acc1 += a1[p] * bv;
                acc2 += a2[p] * bv;
                acc3 += a3[p] * bv;
            }
            for (std::size_t t = 0; t < JS; ++t) {
                c[(i0 + 0) * n + j0 + t] += acc0[t];
                c[(i0 + 1) * n + j0 + t] += acc1[t];
                c[(i0 + 2) * n + j0 + t] += acc2[t];
                c[(i0 + 3) * n + j0 + t] += acc3[t];
            }
        }
        for (; j0 < n; ++j0)
            for (std::size_t i = i0; i < i0 + IT; ++i) tail_cell(i, j0);
    }
    for (; i0 < m; ++i0)
        for (std::size_t j = 0; j < n; ++j) tail_cell(i0, j);
}

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        shape_error("matmul", a, b);
    Tensor c({a.shape[0], b.shape[1]});
    gemm_acc(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1],
             b.shape[1]);
    return c;
}

inline Tensor transpose_values(const Tensor& a) {
    if (a.ndim() != 2) shape_error("transpose", a);
    Tensor t({a.shape[1], a.shape[0]});
    for (std::size_t i = 0; i < a.shape[0]; ++i)
        for (std::size_t j = 0; j < a.shape[1]; ++j)
            t.data[j * a.shape[0] + i] = a.data[i * a.shape[1] + j];
    return t;
}

/// y = x * wt + bias with the weight already transposed to [in,out]. This is
/// the layout the hot paths cache.
inline Tensor affine_pre_values(const Tensor& x, const Tensor& wt, const Tensor& bias) {
    if (x.ndim() != 2 || wt.ndim() != 2 || x.shape[1] != wt.shape[0])
        shape_error("affine", x, wt);
    std::size_t m = x.shape[0], out = wt.shape[1];
    Tensor y({m, out});
    gemm_acc(x.data.data(), wt.data.data(), y.data.data(), m, x.shape[1], out);
    if (!bias.data.empty()) {
        if (bias.size() != out) shape_error("affine bias", wt, bias);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < out; ++j) y.data[i * out + j] += bias[j];
    }
    return y;
}

/// y = x * W^T + bias, with W stored [out,in] and bias length out (may be empty).
inline Tensor affine_values(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (x.ndim() != 2 || w.ndim() != 2 || x.shape[1] != w.shape[1])
        shape_error("affine", x, w);
    return affine_pre_values(x, transpose_values(w), bias);
}

enum class Broadcast { none, row, scalar };

/// Elementwise pairing used by add/mul: equal shapes, row [1,C] against [R,C],
/// or scalar against anything.
inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (same_shape(a, b)) return Broadcast::none;
    if (b.is_scalar()) return Broadcast::scalar;
    if (a.ndim() == 2 && b.ndim() == 2 && b.shape[0] == 1 && b.shape[1] == a.shape[1])
        return Broadcast::row;
    shape_error(op, a, b);
}

inline Tensor add_values(const Tensor& a, const Tensor& b) {
    Broadcast k = broadcast_kind(a, b, "add");
    Tensor out = a;
    switch (k) {
        case Broadcast::none:
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
            break;
        case Broadcast::scalar:
            for (double& v : out.data) v += b.data[0];
            break;
        case Broadcast::row: {
            std::size_t c = a.shape[1];
            for (std::size_t i = 0; i < a.shape[0]; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += b.data[j];
            break;
        }
    }
    return out;
}

inline Tensor mul_values(const Tensor& a, const Tensor& b) {
    Broadcast k = broadcast_kind(a, b, "mul");
    Tensor out = a;
    switch (k) {
        case Broadcast::none:
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
            break;
        case Broadcast::scalar:
            for (double& v : out.data) v *= b.data[0];
            break;
        case Broadcast::row: {
            std::size_t c = a.shape[1];
            for (std::size_t i = 0; i < a.shape[0]; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= b.data[j];
            break;
        }
    }
    return out;
}

/// out[o,h',w'] = sum_{c,u,v} x[c, h'*s+u-p, w'*s+v-p] * k[o,c,u,v]  (+ bias[o])
inline Tensor conv2d_values(const Tensor& x, const Tensor& kern, const Tensor& bias,
                            std::size_t stride, std::size_t pad) {
    if (x.ndim() != 3 || kern.ndim() != 4 || kern.shape[1] != x.shape[0])
        shape_error("conv2d", x, kern);
    if (stride != 1 && stride != 2) throw NumericError("conv2d: stride must be 1 or 2");
    std::size_t cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    std::size_t cout = kern.shape[0], kh = kern.shape[2], kw = kern.shape[3];
    if (h + 2 * pad < kh || w + 2 * pad < kw) shape_error("conv2d", x, kern);
    std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    Tensor y({cout, ho, wo});
    for (std::size_t o = 0; o < cout; ++o) {
        double b = bias.data.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
                double acc = b;
                for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t u = 0; u < kh; ++u) {
                        std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(i * stride + u) -
                                            static_cast<std::ptrdiff_t>(pad);
                        if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t v = 0; v < kw; ++v) {
                            std::ptrdiff_t wi =
                                static_cast<std::ptrdiff_t>(j * stride + v) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += x.data[(c * h + hi) * w + wi] *
                                   kern.data[((o * cin + c) * kh + u) * kw + v];
                        }
                    }
                }
                y.data[(o * ho + i) * wo + j] = acc;
            }
        }
    }
    return y;
}

template <typename F>
Tensor map_values(Tensor t, F f) {
    for (double& v : t.data) v = f(v);
    return t;
}

inline Tensor concat_cols_values(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[0] != b.shape[0])
        shape_error("concat_cols", a, b);
    std::size_t r = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    Tensor out({r, ca + cb});
    for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(a.data.begin() + i * ca, ca, out.data.begin() + i * (ca + cb));
        std::copy_n(b.data.begin() + i * cb, cb, out.data.begin() + i * (ca + cb) + ca);
    }
    return out;
}

inline Tensor slice_cols_values(const Tensor& x, std::size_t start, std::size_t len) {
    if (x.ndim() != 2 || start + len > x.shape[1]) shape_error("slice_cols", x);
    std::size_t r = x.shape[0], c = x.shape[1];
    Tensor out({r, len});
    for (std::size_t i = 0; i < r; ++i)
        std::copy_n(x.data.begin() + i * c + start, len, out.data.begin() + i * len);
    return out;
}

// Elementwise scalar functions with stable formulas.
inline double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}
inline double softplus_scalar(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
inline double softsign_scalar(double x) { return x / (1.0 + std::abs(x)); }

}  // namespace viik::ad
