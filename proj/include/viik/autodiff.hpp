#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "viik/tensor.hpp"

namespace viik::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;
};

/// Gradients keyed by tape node id, as produced by Tape::backward.
struct GradMap {
    std::unordered_map<std::uint32_t, Tensor> grads;

    bool contains(Var v) const { return grads.count(v.id) > 0; }
    const Tensor& at(Var v) const { return grads.at(v.id); }
    std::size_t size() const { return grads.size(); }
};

/// Records primitive applications in topological order and replays them in
/// reverse for reverse-mode differentiation. A tape is confined to one thread.
class Tape {
public:
    Var input(Tensor value) { return push(std::move(value)); }

    Var constant(Tensor value) {
        value.requires_grad = false;
        return push(std::move(value));
    }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    std::size_t size() const { return nodes_.size(); }

    void set_check_finite(bool on) { check_finite_ = on; }

    /// Backward pass from a scalar loss. Visits nodes once, in reverse order.
    /// The result holds one entry per requires-grad leaf (zeros when the leaf
    /// does not influence the loss); non-leaf gradients are not retained.
    GradMap backward(Var loss) {
        if (loss.tape != this) throw NumericError("backward: var from another tape");
        const Tensor& lv = nodes_[loss.id].value;
        if (!lv.is_scalar())
            throw NumericError("backward: loss must be scalar, got " + lv.shape_str());
        grads_.assign(nodes_.size(), Tensor{});
        grads_[loss.id] = Tensor::ones(lv.shape);
        for (std::uint32_t k = loss.id + 1; k-- > 0;) {
            if (grads_[k].data.empty()) continue;
            if (nodes_[k].backward) nodes_[k].backward(*this);
        }
        GradMap out;
        for (std::uint32_t k = 0; k < nodes_.size(); ++k) {
            const Node& n = nodes_[k];
            if (!n.is_leaf || !n.value.requires_grad) continue;
            out.grads[k] = grads_[k].data.empty() ? Tensor::zeros(n.value.shape)
                                                  : std::move(grads_[k]);
        }
        grads_.clear();
        return out;
    }

    // -- used by op implementations ------------------------------------------

    using BackwardFn = std::function<void(Tape&)>;

    Var emit(const char* op, Tensor value, bool requires_grad) {
        if (check_finite_ && !value.all_finite())
            throw NumericError(std::string(op) + ": non-finite value produced");
        value.requires_grad = requires_grad;
        Node n;
        n.value = std::move(value);
        n.is_leaf = false;
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void set_backward(Var v, BackwardFn fn) { nodes_[v.id].backward = std::move(fn); }

    /// Gradient buffer of a node, allocated as zeros on first touch.
    Tensor& grad(std::uint32_t id) {
        if (grads_[id].data.empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
        return grads_[id];
    }
    const Tensor& out_grad(std::uint32_t id) const { return grads_[id]; }
    bool wants_grad(std::uint32_t id) const { return nodes_[id].value.requires_grad; }

private:
    struct Node {
        Tensor value;
        bool is_leaf = true;
        BackwardFn backward;  // empty for leaves and no-grad nodes
    };

    Var push(Tensor value) {
        if (check_finite_ && !value.all_finite())
            throw NumericError("input: non-finite value");
        Node n;
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<Tensor> grads_;
    std::vector<Node> nodes_;
    bool check_finite_ = false;
};

namespace detail {

inline Tape& tape_of(Var a) {
    if (!a.tape) throw NumericError("op on null var");
    return *a.tape;
}

inline Tape& tape_of(Var a, Var b) {
    if (a.tape != b.tape) throw NumericError("op on vars from different tapes");
    return tape_of(a);
}

/// Accumulates sign * g into the gradient of node `id`, reducing over the
/// broadcast pattern that expanded that input on the forward pass.
inline void accum_reduced(Tape& t, std::uint32_t id, const Tensor& g, Broadcast k,
                          double sign = 1.0) {
    if (!t.wants_grad(id)) return;
    Tensor& dst = t.grad(id);
    switch (k) {
        case Broadcast::none:
            for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += sign * g.data[i];
            break;
        case Broadcast::scalar: {
            double s = 0;
            for (double v : g.data) s += v;
            dst.data[0] += sign * s;
            break;
        }
        case Broadcast::row: {
            std::size_t c = g.shape[1];
            for (std::size_t i = 0; i < g.shape[0]; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    dst.data[j] += sign * g.data[i * c + j];
            break;
        }
    }
}

template <typename F, typename DF>
Var elementwise(const char* op, Var x, F f, DF df) {
    Tape& t = tape_of(x);
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = f(v);
    Var y = t.emit(op, std::move(out), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y, df](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor& xv = t.value(x);
            const Tensor& yv = t.value(y);
            Tensor& dst = t.grad(x.id);
            for (std::size_t i = 0; i < g.size(); ++i)
                dst.data[i] += g.data[i] * df(xv.data[i], yv.data[i]);
        });
    }
    return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops. Forward values come from the kernels in tensor.hpp, so the
// tape path and the tape-free inference path always agree.
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor &av = t.value(a), &bv = t.value(b);
    Broadcast k = broadcast_kind(av, bv, "add");
    bool rg = av.requires_grad || bv.requires_grad;
    Var y = t.emit("add", add_values(av, bv), rg);
    if (rg) {
        t.set_backward(y, [a, b, k, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            detail::accum_reduced(t, a.id, g, Broadcast::none);
            detail::accum_reduced(t, b.id, g, k);
        });
    }
    return y;
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor &av = t.value(a), &bv = t.value(b);
    Broadcast k = broadcast_kind(av, bv, "sub");
    Tensor out = av;
    switch (k) {
        case Broadcast::none:
            for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
            break;
        case Broadcast::scalar:
            for (double& v : out.data) v -= bv.data[0];
            break;
        case Broadcast::row: {
            std::size_t c = av.shape[1];
            for (std::size_t i = 0; i < av.shape[0]; ++i)
                for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] -= bv.data[j];
            break;
        }
    }
    bool rg = av.requires_grad || bv.requires_grad;
    Var y = t.emit("sub", std::move(out), rg);
    if (rg) {
        t.set_backward(y, [a, b, k, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            detail::accum_reduced(t, a.id, g, Broadcast::none);
            detail::accum_reduced(t, b.id, g, k, -1.0);
        });
    }
    return y;
}

inline Var mul(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor &av = t.value(a), &bv = t.value(b);
    Broadcast k = broadcast_kind(av, bv, "mul");
    bool rg = av.requires_grad || bv.requires_grad;
    Var y = t.emit("mul", mul_values(av, bv), rg);
    if (rg) {
        t.set_backward(y, [a, b, k, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor &av = t.value(a), &bv = t.value(b);
            if (t.wants_grad(a.id)) {
                Tensor& da = t.grad(a.id);
                switch (k) {
                    case Broadcast::none:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            da.data[i] += g.data[i] * bv.data[i];
                        break;
                    case Broadcast::scalar:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            da.data[i] += g.data[i] * bv.data[0];
                        break;
                    case Broadcast::row: {
                        std::size_t c = av.shape[1];
                        for (std::size_t i = 0; i < av.shape[0]; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                                da.data[i * c + j] += g.data[i * c + j] * bv.data[j];
                        break;
                    }
                }
            }
            if (t.wants_grad(b.id)) {
                Tensor& db = t.grad(b.id);
                switch (k) {
                    case Broadcast::none:
                        for (std::size_t i = 0; i < g.size(); ++i)
                            db.data[i] += g.data[i] * av.data[i];
                        break;
                    case Broadcast::scalar: {
                        double s = 0;
                        for (std::size_t i = 0; i < g.size(); ++i)
                            s += g.data[i] * av.data[i];
                        db.data[0] += s;
                        break;
                    }
                    case Broadcast::row: {
                        std::size_t c = av.shape[1];
                        for (std::size_t i = 0; i < av.shape[0]; ++i)
                            for (std::size_t j = 0; j < c; ++j)
                                db.data[j] += g.data[i * c + j] * av.data[i * c + j];
                        break;
                    }
                }
            }
        });
    }
    return y;
}

inline Var scale(Var x, double c) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v *= c;
    Var y = t.emit("scale", std::move(out), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y, c](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            Tensor& dst = t.grad(x.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += c * g.data[i];
        });
    }
    return y;
}

inline Var add_const(Var x, double c) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v += c;
    Var y = t.emit("add_const", std::move(out), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            Tensor& dst = t.grad(x.id);
            for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
        });
    }
    return y;
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var matmul(Var a, Var b) {
    Tape& t = detail::tape_of(a, b);
    const Tensor &av = t.value(a), &bv = t.value(b);
    bool rg = av.requires_grad || bv.requires_grad;
    Var y = t.emit("matmul", matmul_values(av, bv), rg);
    if (rg) {
        t.set_backward(y, [a, b, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor &av = t.value(a), &bv = t.value(b);
            std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
            if (t.wants_grad(a.id)) {
                Tensor bt = transpose_values(bv);
                gemm_acc(g.data.data(), bt.data.data(), t.grad(a.id).data.data(), m, n,
                         k);
            }
            if (t.wants_grad(b.id)) {
                Tensor at = transpose_values(av);
                gemm_acc(at.data.data(), g.data.data(), t.grad(b.id).data.data(), k, m,
                         n);
            }
        });
    }
    return y;
}

/// y = x * W^T + bias, W stored [out,in]; bias may be an empty Var for none.
inline Var affine(Var x, Var w, Var bias) {
    Tape& t = detail::tape_of(x, w);
    const Tensor &xv = t.value(x), &wv = t.value(w), &bv = t.value(bias);
    bool rg = xv.requires_grad || wv.requires_grad || bv.requires_grad;
    Var y = t.emit("affine", affine_values(xv, wv, bv), rg);
    if (rg) {
        t.set_backward(y, [x, w, bias, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor &xv = t.value(x), &wv = t.value(w);
            std::size_t m = xv.shape[0], in = xv.shape[1], out = wv.shape[0];
            if (t.wants_grad(x.id))
                gemm_acc(g.data.data(), wv.data.data(), t.grad(x.id).data.data(), m,
                         out, in);
            if (t.wants_grad(w.id)) {
                Tensor gt = transpose_values(g);
                gemm_acc(gt.data.data(), xv.data.data(), t.grad(w.id).data.data(), out,
                         m, in);
            }
            if (t.wants_grad(bias.id)) {
                Tensor& db = t.grad(bias.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < out; ++j)
                        db.data[j] += g.data[i * out + j];
            }
        });
    }
    return y;
}

inline Var conv2d(Var x, Var kern, Var bias, std::size_t stride, std::size_t pad) {
    Tape& t = detail::tape_of(x, kern);
    const Tensor &xv = t.value(x), &kv = t.value(kern), &bv = t.value(bias);
    bool rg = xv.requires_grad || kv.requires_grad || bv.requires_grad;
    Var y = t.emit("conv2d", conv2d_values(xv, kv, bv, stride, pad), rg);
    if (rg) {
        t.set_backward(y, [x, kern, bias, y, stride, pad](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor &xv = t.value(x), &kv = t.value(kern);
            std::size_t cin = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
            std::size_t cout = kv.shape[0], kh = kv.shape[2], kw = kv.shape[3];
            std::size_t ho = g.shape[1], wo = g.shape[2];
            bool want_x = t.wants_grad(x.id), want_k = t.wants_grad(kern.id);
            Tensor* dx = want_x ? &t.grad(x.id) : nullptr;
            Tensor* dk = want_k ? &t.grad(kern.id) : nullptr;
            for (std::size_t o = 0; o < cout; ++o) {
                for (std::size_t i = 0; i < ho; ++i) {
                    for (std::size_t j = 0; j < wo; ++j) {
                        double gv = g.data[(o * ho + i) * wo + j];
                        if (gv == 0.0) continue;
                        for (std::size_t c = 0; c < cin; ++c) {
                            for (std::size_t u = 0; u < kh; ++u) {
                                std::ptrdiff_t hi =
                                    static_cast<std::ptrdiff_t>(i * stride + u) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (hi < 0 || hi >= static_cast<std::ptrdiff_t>(h))
                                    continue;
                                for (std::size_t v = 0; v < kw; ++v) {
                                    std::ptrdiff_t wi =
                                        static_cast<std::ptrdiff_t>(j * stride + v) -
                                        static_cast<std::ptrdiff_t>(pad);
                                    if (wi < 0 || wi >= static_cast<std::ptrdiff_t>(w))
                                        continue;
                                    std::size_t xi = (c * h + hi) * w + wi;
                                    std::size_t ki = ((o * cin + c) * kh + u) * kw + v;
                                    if (dx) dx->data[xi] += gv * kv.data[ki];
                                    if (dk) dk->data[ki] += gv * xv.data[xi];
                                }
                            }
                        }
                    }
                }
            }
            if (t.wants_grad(bias.id)) {
                Tensor& db = t.grad(bias.id);
                for (std::size_t o = 0; o < cout; ++o) {
                    double s = 0;
                    for (std::size_t p = 0; p < ho * wo; ++p)
                        s += g.data[o * ho * wo + p];
                    db.data[o] += s;
                }
            }
        });
    }
    return y;
}

inline Var sum(Var x) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    double s = 0;
    for (double v : xv.data) s += v;
    Var y = t.emit("sum", Tensor::scalar(s), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y](Tape& t) {
            double g = t.out_grad(y.id).data[0];
            Tensor& dst = t.grad(x.id);
            for (double& v : dst.data) v += g;
        });
    }
    return y;
}

inline Var mean(Var x) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    if (xv.size() == 0) throw NumericError("mean: empty tensor");
    double s = 0;
    for (double v : xv.data) s += v;
    double inv = 1.0 / static_cast<double>(xv.size());
    Var y = t.emit("mean", Tensor::scalar(s * inv), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y, inv](Tape& t) {
            double g = t.out_grad(y.id).data[0] * inv;
            Tensor& dst = t.grad(x.id);
            for (double& v : dst.data) v += g;
        });
    }
    return y;
}

inline Var exp(Var x) {
    return detail::elementwise("exp", x, [](double v) { return std::exp(v); },
                               [](double, double yv) { return yv; });
}

inline Var log(Var x) {
    return detail::elementwise("log", x, [](double v) { return std::log(v); },
                               [](double xv, double) { return 1.0 / xv; });
}

inline Var tanh(Var x) {
    return detail::elementwise("tanh", x, [](double v) { return std::tanh(v); },
                               [](double, double yv) { return 1.0 - yv * yv; });
}

inline Var sigmoid(Var x) {
    return detail::elementwise("sigmoid", x, sigmoid_scalar,
                               [](double, double yv) { return yv * (1.0 - yv); });
}

inline Var softplus(Var x) {
    return detail::elementwise("softplus", x, softplus_scalar,
                               [](double xv, double) { return sigmoid_scalar(xv); });
}

inline Var softsign(Var x) {
    return detail::elementwise("softsign", x, softsign_scalar, [](double xv, double) {
        double s = 1.0 / (1.0 + std::abs(xv));
        return s * s;
    });
}

/// Hard clamp; gradient is passed through strictly inside [lo, hi].
inline Var clamp(Var x, double lo, double hi) {
    return detail::elementwise(
        "clamp", x,
        [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double xv, double) { return (xv >= lo && xv <= hi) ? 1.0 : 0.0; });
}

/// Concatenation of two 1-D or 2-D tensors along `axis`.
inline Var concat(Var a, Var b, std::size_t axis) {
    Tape& t = detail::tape_of(a, b);
    const Tensor &av = t.value(a), &bv = t.value(b);
    Tensor out;
    if (av.ndim() == 1 && bv.ndim() == 1 && axis == 0) {
        out = Tensor({av.size() + bv.size()});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
    } else if (av.ndim() == 2 && bv.ndim() == 2 && axis == 0 &&
               av.shape[1] == bv.shape[1]) {
        out = Tensor({av.shape[0] + bv.shape[0], av.shape[1]});
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.size());
    } else if (av.ndim() == 2 && bv.ndim() == 2 && axis == 1 &&
               av.shape[0] == bv.shape[0]) {
        std::size_t r = av.shape[0], ca = av.shape[1], cb = bv.shape[1];
        out = Tensor({r, ca + cb});
        for (std::size_t i = 0; i < r; ++i) {
            std::copy_n(av.data.begin() + i * ca, ca, out.data.begin() + i * (ca + cb));
            std::copy_n(bv.data.begin() + i * cb, cb,
                        out.data.begin() + i * (ca + cb) + ca);
        }
    } else {
        shape_error("concat", av, bv);
    }
    bool rg = av.requires_grad || bv.requires_grad;
    Var y = t.emit("concat", std::move(out), rg);
    if (rg) {
        t.set_backward(y, [a, b, axis, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor &av = t.value(a), &bv = t.value(b);
            if (axis == 0 || av.ndim() == 1) {
                if (t.wants_grad(a.id)) {
                    Tensor& da = t.grad(a.id);
                    for (std::size_t i = 0; i < av.size(); ++i)
                        da.data[i] += g.data[i];
                }
                if (t.wants_grad(b.id)) {
                    Tensor& db = t.grad(b.id);
                    for (std::size_t i = 0; i < bv.size(); ++i)
                        db.data[i] += g.data[av.size() + i];
                }
            } else {
                std::size_t r = av.shape[0], ca = av.shape[1], cb = bv.shape[1];
                if (t.wants_grad(a.id)) {
                    Tensor& da = t.grad(a.id);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < ca; ++j)
                            da.data[i * ca + j] += g.data[i * (ca + cb) + j];
                }
                if (t.wants_grad(b.id)) {
                    Tensor& db = t.grad(b.id);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < cb; ++j)
                            db.data[i * cb + j] += g.data[i * (ca + cb) + ca + j];
                }
            }
        });
    }
    return y;
}

/// Contiguous slice of length `len` starting at `start` along `axis` (1-D/2-D).
inline Var slice(Var x, std::size_t axis, std::size_t start, std::size_t len) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    Tensor out;
    if (xv.ndim() == 1 && axis == 0) {
        if (start + len > xv.size()) shape_error("slice", xv);
        out = Tensor({len});
        std::copy_n(xv.data.begin() + start, len, out.data.begin());
    } else if (xv.ndim() == 2 && axis == 0) {
        if (start + len > xv.shape[0]) shape_error("slice", xv);
        out = Tensor({len, xv.shape[1]});
        std::copy_n(xv.data.begin() + start * xv.shape[1], len * xv.shape[1],
                    out.data.begin());
    } else if (xv.ndim() == 2 && axis == 1) {
        if (start + len > xv.shape[1]) shape_error("slice", xv);
        std::size_t r = xv.shape[0], c = xv.shape[1];
        out = Tensor({r, len});
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(xv.data.begin() + i * c + start, len,
                        out.data.begin() + i * len);
    } else {
        shape_error("slice", xv);
    }
    Var y = t.emit("slice", std::move(out), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, axis, start, len, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            const Tensor& xv = t.value(x);
            Tensor& dx = t.grad(x.id);
            if (xv.ndim() == 1 || axis == 0) {
                std::size_t off = (xv.ndim() == 1) ? start : start * xv.shape[1];
                for (std::size_t i = 0; i < g.size(); ++i)
                    dx.data[off + i] += g.data[i];
            } else {
                std::size_t r = xv.shape[0], c = xv.shape[1];
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < len; ++j)
                        dx.data[i * c + start + j] += g.data[i * len + j];
            }
        });
    }
    return y;
}

inline Var reshape(Var x, std::vector<std::size_t> shape) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    if (Tensor::count(shape) != xv.size())
        throw NumericError("reshape: element count mismatch " + xv.shape_str());
    Tensor out(std::move(shape), xv.data);
    Var y = t.emit("reshape", std::move(out), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            Tensor& dx = t.grad(x.id);
            for (std::size_t i = 0; i < g.size(); ++i) dx.data[i] += g.data[i];
        });
    }
    return y;
}

inline Var transpose(Var x) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    Var y = t.emit("transpose", transpose_values(xv), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            Tensor& dx = t.grad(x.id);
            std::size_t r = g.shape[0], c = g.shape[1];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    dx.data[j * r + i] += g.data[i * c + j];
        });
    }
    return y;
}

/// Scatters a flat vector into a zero tensor of `shape` at flat `positions`.
inline Var scatter(Var x, std::vector<std::size_t> positions,
                   std::vector<std::size_t> shape) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    if (xv.size() != positions.size())
        throw NumericError("scatter: value/position count mismatch");
    Tensor out(shape);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] >= out.size()) throw NumericError("scatter: position out of range");
        out.data[positions[i]] = xv.data[i];
    }
    Var y = t.emit("scatter", std::move(out), xv.requires_grad);
    if (xv.requires_grad) {
        t.set_backward(y, [x, y, positions = std::move(positions)](Tape& t) {
            const Tensor& g = t.out_grad(y.id);
            Tensor& dx = t.grad(x.id);
            for (std::size_t i = 0; i < positions.size(); ++i)
                dx.data[i] += g.data[positions[i]];
        });
    }
    return y;
}

/// Per-row sum of a [R,C] matrix as a [R,1] column.
inline Var rowsum(Var x) {
    Tape& t = detail::tape_of(x);
    const Tensor& xv = t.value(x);
    if (xv.ndim() != 2) shape_error("rowsum", xv);
    Var ones = t.constant(Tensor::ones({xv.shape[1], 1}));
    return matmul(x, ones);
}

/// Broadcasts a [1,C] row to [rows,C] (gradient sums back over rows).
inline Var broadcast_rows(Var row, std::size_t rows) {
    Tape& t = detail::tape_of(row);
    const Tensor& rv = t.value(row);
    if (rv.ndim() != 2 || rv.shape[0] != 1) shape_error("broadcast_rows", rv);
    Var ones = t.constant(Tensor::ones({rows, 1}));
    return matmul(ones, row);
}

// ---------------------------------------------------------------------------
// Finite differences (central), the standard gradient oracle.
// ---------------------------------------------------------------------------

/// f: (const Tensor&) -> double, evaluated at x +- h e_i per coordinate.
template <typename F>
Tensor finite_diff_grad(F&& f, const Tensor& x, double h) {
    if (h <= 0) throw NumericError("finite_diff_grad: h must be positive");
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = probe.data[i];
        probe.data[i] = orig + h;
        double fp = f(probe);
        probe.data[i] = orig - h;
        double fm = f(probe);
        probe.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace viik::ad
