#pragma once

#include <string>
#include <vector>

#include "viik/params.hpp"
#include "viik/rng.hpp"

namespace viik::flow {

using ad::Tensor;
using ad::Var;
using ad::gemm_acc;
using ad::matmul_values;
using ad::softsign_scalar;
using ad::transpose_values;

/// Block structure of a conditional coupling flow. Each block is
/// (actnorm, invertible linear, affine coupling); the latter two sublayers can
/// be disabled, which yields the pure coupling stack used for the latent flow.
struct FlowArch {
    std::size_t dim = 0;       // transformed vector length
    std::size_t cond_dim = 0;  // conditioning vector length
    std::size_t blocks = 12;
    std::size_t hidden = 128;
    double scale_clamp = 5.0;  // |log s| bound for coupling scales
    bool use_actnorm = true;
    bool use_linear = true;

    std::size_t front() const { return (dim + 1) / 2; }
    std::size_t back() const { return dim - front(); }
    // Alternate which half a block transforms.
    std::size_t transformed(std::size_t b) const { return b % 2 == 0 ? back() : front(); }
    std::size_t untouched(std::size_t b) const { return dim - transformed(b); }
};

namespace names {
inline std::string block(const std::string& prefix, std::size_t b) {
    char buf[16];
    std::snprintf(buf, sizeof buf, ".b%02zu.", b);
    return prefix + buf;
}
}  // namespace names

/// Registers all tensors of one flow. Coupling output layers start at zero so
/// the whole stack begins as the identity map (modulo the fixed permutations);
/// pass identity_linear = true to pin the permutations to identity as well.
inline void init_params(ad::ParamStore& params, ad::ParamStore& buffers,
                        const FlowArch& arch, const std::string& prefix, rng::Rng& rng,
                        bool identity_linear = false) {
    if (arch.dim < 2) throw NumericError("flow: dim must be >= 2");
    if (arch.blocks < 1) throw NumericError("flow: needs at least 1 block");
    std::size_t d = arch.dim;
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        std::string base = names::block(prefix, b);
        if (arch.use_actnorm) {
            params.add(base + "actnorm.log_scale", Tensor::zeros({1, d}));
            params.add(base + "actnorm.shift", Tensor::zeros({1, d}));
        }
        if (arch.use_linear) {
            std::size_t off = d * (d - 1) / 2;
            params.add(base + "linear.lower", Tensor::zeros({off}));
            params.add(base + "linear.upper", Tensor::zeros({off}));
            params.add(base + "linear.log_diag", Tensor::zeros({d}));
            Tensor perm({d});
            for (std::size_t i = 0; i < d; ++i) perm.data[i] = static_cast<double>(i);
            if (!identity_linear) {  // Fisher-Yates
                for (std::size_t i = d - 1; i > 0; --i) {
                    std::size_t j = rng.uniform_int(0, i);
                    std::swap(perm.data[i], perm.data[j]);
                }
            }
            buffers.add(base + "linear.perm", std::move(perm), false);
            buffers.add(base + "linear.sign", Tensor::ones({d}), false);
        }
        std::size_t dt = arch.transformed(b);
        std::size_t in = arch.untouched(b) + arch.cond_dim;
        auto xavier = [&rng](std::size_t fan_out, std::size_t fan_in) {
            Tensor w({fan_out, fan_in});
            double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (double& v : w.data) v = rng.uniform(-lim, lim);
            return w;
        };
        params.add(base + "net.w1", xavier(arch.hidden, in));
        params.add(base + "net.b1", Tensor::zeros({arch.hidden}));
        params.add(base + "net.w2", xavier(arch.hidden, arch.hidden));
        params.add(base + "net.b2", Tensor::zeros({arch.hidden}));
        params.add(base + "net.w3", Tensor::zeros({2 * dt, arch.hidden}));
        params.add(base + "net.b3", Tensor::zeros({2 * dt}));
    }
}

// ---------------------------------------------------------------------------
// Value-side model: a snapshot of one flow's tensors with the linear sublayer
// factors materialized, for tape-free evaluation (sampling, density queries).
// ---------------------------------------------------------------------------

struct CouplingNet {
    Tensor w1t, b1, w2t, b2, w3t, b3;  // weights cached transposed to [in,out]
};

struct BlockValues {
    Tensor log_scale, shift;           // actnorm (empty when disabled)
    std::vector<double> an_scale, an_inv_scale;  // exp(+-log_scale)
    Tensor weight_t;                   // dense (P*L*U)^T (empty when disabled)
    Tensor lower, upper;               // dense unit-lower L and upper U
    std::vector<std::size_t> perm, perm_inv;
    double linear_logdet = 0.0;        // sum log|diag U|
    double actnorm_logdet = 0.0;       // sum log_scale
    CouplingNet net;
};

struct Model {
    FlowArch arch;
    std::vector<BlockValues> blocks;
};

inline Model make_model(const ad::ParamStore& params, const ad::ParamStore& buffers,
                        const std::string& prefix, const FlowArch& arch) {
    Model m;
    m.arch = arch;
    std::size_t d = arch.dim;
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        std::string base = names::block(prefix, b);
        BlockValues bv;
        if (arch.use_actnorm) {
            bv.log_scale = params.at(base + "actnorm.log_scale");
            bv.shift = params.at(base + "actnorm.shift");
            bv.actnorm_logdet = 0.0;
            for (double v : bv.log_scale.data) {
                bv.actnorm_logdet += v;
                bv.an_scale.push_back(std::exp(v));
                bv.an_inv_scale.push_back(std::exp(-v));
            }
        }
        if (arch.use_linear) {
            const Tensor& lo = params.at(base + "linear.lower");
            const Tensor& up = params.at(base + "linear.upper");
            const Tensor& ld = params.at(base + "linear.log_diag");
            const Tensor& pm = buffers.at(base + "linear.perm");
            const Tensor& sg = buffers.at(base + "linear.sign");
            bv.lower = Tensor({d, d});
            bv.upper = Tensor({d, d});
            std::size_t k = 0;
            for (std::size_t i = 0; i < d; ++i) {
                bv.lower.at(i, i) = 1.0;
                bv.upper.at(i, i) = sg[i] * std::exp(ld[i]);
                bv.linear_logdet += ld[i];
            }
            for (std::size_t i = 1; i < d; ++i)
                for (std::size_t j = 0; j < i; ++j, ++k) {
                    bv.lower.at(i, j) = lo[k];
                    bv.upper.at(j, i) = up[k];
                }
            bv.perm.resize(d);
            bv.perm_inv.resize(d);
            for (std::size_t i = 0; i < d; ++i) {
                bv.perm[i] = static_cast<std::size_t>(pm[i]);
                bv.perm_inv[bv.perm[i]] = i;
            }
            Tensor lu = matmul_values(bv.lower, bv.upper);
            Tensor weight({d, d});
            for (std::size_t i = 0; i < d; ++i)
                std::copy_n(lu.data.begin() + bv.perm[i] * d, d,
                            weight.data.begin() + i * d);
            bv.weight_t = transpose_values(weight);
        }
        bv.net.w1t = transpose_values(params.at(base + "net.w1"));
        bv.net.b1 = params.at(base + "net.b1");
        bv.net.w2t = transpose_values(params.at(base + "net.w2"));
        bv.net.b2 = params.at(base + "net.b2");
        bv.net.w3t = transpose_values(params.at(base + "net.w3"));
        bv.net.b3 = params.at(base + "net.b3");
        m.blocks.push_back(std::move(bv));
    }
    return m;
}

namespace detail {

/// Expands a [1,C] conditioning row to match the batch when needed.
inline Tensor cond_rows(const Tensor& cond, std::size_t rows) {
    if (cond.ndim() != 2) shape_error("flow cond", cond);
    if (cond.shape[0] == rows) return cond;
    if (cond.shape[0] != 1) shape_error("flow cond", cond);
    Tensor out({rows, cond.shape[1]});
    for (std::size_t i = 0; i < rows; ++i)
        std::copy_n(cond.data.begin(), cond.shape[1],
                    out.data.begin() + i * cond.shape[1]);
    return out;
}

/// Conditioner MLP: u, cond -> (shift t, raw scale r), each [B, dt].
inline void coupling_net_values(const CouplingNet& net, const Tensor& u,
                                const Tensor& cond, double clamp, Tensor& t_out,
                                Tensor& log_s_out) {
    Tensor h = ad::concat_cols_values(u, cond);
    Tensor h1 = ad::map_values(ad::affine_pre_values(h, net.w1t, net.b1),
                               softsign_scalar);
    Tensor h2 = ad::map_values(ad::affine_pre_values(h1, net.w2t, net.b2),
                               softsign_scalar);
    Tensor o = ad::affine_pre_values(h2, net.w3t, net.b3);
    std::size_t dt = o.shape[1] / 2;
    t_out = ad::slice_cols_values(o, 0, dt);
    double inv = 1.0 / clamp;
    log_s_out = ad::map_values(
        ad::slice_cols_values(o, dt, dt),
        [inv, clamp](double v) { return std::tanh(v * inv) * clamp; });
}

inline void check_block_finite(const Tensor& x, const char* dir, std::size_t b) {
    if (!x.all_finite())
        throw NumericError(std::string("flow ") + dir + ": non-finite value at block " +
                           std::to_string(b));
}

// x <- x * W^T, i.e. the normalizing-direction linear map.
inline Tensor apply_linear(const BlockValues& bv, const Tensor& x) {
    Tensor out({x.shape[0], x.shape[1]});
    gemm_acc(x.data.data(), bv.weight_t.data.data(), out.data.data(), x.shape[0],
             x.shape[1], x.shape[1]);
    return out;
}

// Solves y * W^T = x row-wise via the LU factors (generative direction).
inline Tensor solve_linear(const BlockValues& bv, const Tensor& x) {
    std::size_t d = x.shape[1];
    Tensor out({x.shape[0], d});
    std::vector<double> v(d), w(d);
    for (std::size_t r = 0; r < x.shape[0]; ++r) {
        const double* row = x.data.data() + r * d;
        // y U^T L^T P^T = x  =>  y U^T L^T = x P, with (xP)_j = x_{perm_inv[j]}
        for (std::size_t j = 0; j < d; ++j) v[j] = row[bv.perm_inv[j]];
        // w L^T = v: forward substitution (L unit lower)
        for (std::size_t j = 0; j < d; ++j) {
            double s = v[j];
            for (std::size_t i = 0; i < j; ++i) s -= w[i] * bv.lower.at(j, i);
            w[j] = s;
        }
        // y U^T = w: backward substitution
        for (std::size_t j = d; j-- > 0;) {
            double s = w[j];
            for (std::size_t i = j + 1; i < d; ++i) s -= out.at(r, i) * bv.upper.at(j, i);
            out.at(r, j) = s / bv.upper.at(j, j);
        }
    }
    return out;
}

}  // namespace detail

struct PassResult {
    Tensor x;                    // [B, D]
    std::vector<double> logdet;  // per row
};

/// Generative direction: base sample -> data, with log|det d(out)/d(in)|.
inline PassResult forward_values(const Model& m, const Tensor& z, const Tensor& cond) {
    const FlowArch& arch = m.arch;
    if (z.ndim() != 2 || z.shape[1] != arch.dim) shape_error("flow forward", z);
    std::size_t rows = z.shape[0];
    Tensor cm = detail::cond_rows(cond, rows);
    if (cm.shape[1] != arch.cond_dim) shape_error("flow forward cond", cm);
    PassResult res{z, std::vector<double>(rows, 0.0)};
    std::size_t df = arch.front();
    for (std::size_t b = 0; b < arch.blocks; ++b) {
        const BlockValues& bv = m.blocks[b];
        if (arch.use_actnorm) {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < arch.dim; ++j)
                    res.x.at(i, j) = res.x.at(i, j) * bv.an_scale[j] + bv.shift[j];
            for (double& v : res.logdet) v += bv.actnorm_logdet;
        }
        if (arch.use_linear) {
            res.x = detail::solve_linear(bv, res.x);
            for (double& v : res.logdet) v -= bv.linear_logdet;
        }
        bool xf_back = b % 2 == 0;
        std::size_t dt = arch.transformed(b);
        Tensor u = xf_back ? slice_cols_values(res.x, 0, df)
                           : slice_cols_values(res.x, df, arch.back());
        Tensor t, log_s;
        detail::coupling_net_values(bv.net, u, cm, arch.scale_clamp, t, log_s);
        std::size_t off = xf_back ? df : 0;
        for (std::size_t i = 0; i < rows; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < dt; ++j) {
                double ls = log_s.at(i, j);
                res.x.at(i, off + j) = res.x.at(i, off + j) * std::exp(ls) + t.at(i, j);
                acc += ls;
            }
            res.logdet[i] += acc;
        }
        detail::check_block_finite(res.x, "forward", b);
    }
    return res;
}

/// Normalizing direction: data -> base sample, exact inverse of forward_values.
inline PassResult inverse_values(const Model& m, const Tensor& x, const Tensor& cond) {
    const FlowArch& arch = m.arch;
    if (x.ndim() != 2 || x.shape[1] != arch.dim) shape_error("flow inverse", x);
    std::size_t rows = x.shape[0];
    Tensor cm = detail::cond_rows(cond, rows);
    if (cm.shape[1] != arch.cond_dim) shape_error("flow inverse cond", cm);
    PassResult res{x, std::vector<double>(rows, 0.0)};
    std::size_t df = arch.front();
    for (std::size_t b = arch.blocks; b-- > 0;) {
        const BlockValues& bv = m.blocks[b];
        bool xf_back = b % 2 == 0;
        std::size_t dt = arch.transformed(b);
        Tensor u = xf_back ? slice_cols_values(res.x, 0, df)
                           : slice_cols_values(res.x, df, arch.back());
        Tensor t, log_s;
        detail::coupling_net_values(bv.net, u, cm, arch.scale_clamp, t, log_s);
        std::size_t off = xf_back ? df : 0;
        for (std::size_t i = 0; i < rows; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < dt; ++j) {
                double ls = log_s.at(i, j);
                res.x.at(i, off + j) = (res.x.at(i, off + j) - t.at(i, j)) * std::exp(-ls);
                acc += ls;
            }
            res.logdet[i] -= acc;
        }
        if (arch.use_linear) {
            res.x = detail::apply_linear(bv, res.x);
            for (double& v : res.logdet) v += bv.linear_logdet;
        }
        if (arch.use_actnorm) {
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < arch.dim; ++j)
                    res.x.at(i, j) = (res.x.at(i, j) - bv.shift[j]) * bv.an_inv_scale[j];
            for (double& v : res.logdet) v -= bv.actnorm_logdet;
        }
        detail::check_block_finite(res.x, "inverse", b);
    }
    return res;
}

/// log p(x | cond) under a standard-normal base, per row.
inline std::vector<double> log_prob_values(const Model& m, const Tensor& x,
                                           const Tensor& cond) {
    PassResult inv = inverse_values(m, x, cond);
    std::size_t d = m.arch.dim;
    double c = -0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
    std::vector<double> lp(x.shape[0]);
    for (std::size_t i = 0; i < x.shape[0]; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += inv.x.at(i, j) * inv.x.at(i, j);
        lp[i] = c - 0.5 * sq + inv.logdet[i];
    }
    return lp;
}

/// K base draws pushed through the generative direction under one condition.
inline Tensor sample_values(const Model& m, const Tensor& cond, std::size_t k,
                            rng::Rng& rng) {
    Tensor z({k, m.arch.dim});
    for (double& v : z.data) v = rng.gaussian();
    if (k == 0) return z;
    return forward_values(m, z, cond).x;
}

// ---------------------------------------------------------------------------
// Tape graph for the normalizing direction. Training and gradient checks only
// ever differentiate this path; the generative direction is value-only.
// ---------------------------------------------------------------------------

struct GraphCtx {
    const ad::BoundParams* params = nullptr;
    const ad::ParamStore* buffers = nullptr;
    FlowArch arch;
    std::string prefix;
};

namespace detail {

inline std::pair<Var, Var> coupling_net_graph(ad::Tape& tape, const GraphCtx& ctx,
                                              const std::string& base, Var u, Var cond) {
    using namespace ad;
    Var h = concat(u, cond, 1);
    Var h1 = ad::softsign(affine(h, ctx.params->at(base + "net.w1"),
                                 ctx.params->at(base + "net.b1")));
    Var h2 = ad::softsign(affine(h1, ctx.params->at(base + "net.w2"),
                                 ctx.params->at(base + "net.b2")));
    Var o = affine(h2, ctx.params->at(base + "net.w3"), ctx.params->at(base + "net.b3"));
    std::size_t dt = tape.value(o).shape[1] / 2;
    Var t = ad::slice(o, 1, 0, dt);
    double clamp = ctx.arch.scale_clamp;
    Var log_s = ad::scale(ad::tanh(ad::scale(ad::slice(o, 1, dt, dt), 1.0 / clamp)),
                          clamp);
    return {t, log_s};
}

/// Dense P*L*U weight assembled on the tape from the packed factors.
inline Var linear_weight_graph(ad::Tape& tape, const GraphCtx& ctx,
                               const std::string& base) {
    using namespace ad;
    std::size_t d = ctx.arch.dim;
    std::vector<std::size_t> low_pos, up_pos, diag_pos(d);
    for (std::size_t i = 1; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            low_pos.push_back(i * d + j);
            up_pos.push_back(j * d + i);
        }
    for (std::size_t i = 0; i < d; ++i) diag_pos[i] = i * d + i;

    Var eye = tape.constant([d] {
        Tensor t({d, d});
        for (std::size_t i = 0; i < d; ++i) t.at(i, i) = 1.0;
        return t;
    }());
    Var lmat = add(scatter(ctx.params->at(base + "linear.lower"), low_pos, {d, d}), eye);
    Var sign = tape.constant(ctx.buffers->at(base + "linear.sign"));
    Var diag = mul(ad::exp(ctx.params->at(base + "linear.log_diag")), sign);
    Var umat = add(scatter(ctx.params->at(base + "linear.upper"), up_pos, {d, d}),
                   scatter(diag, diag_pos, {d, d}));
    Var lu = matmul(lmat, umat);
    const Tensor& pm = ctx.buffers->at(base + "linear.perm");
    Tensor p({d, d});
    for (std::size_t i = 0; i < d; ++i)
        p.at(i, static_cast<std::size_t>(pm[i])) = 1.0;
    return matmul(tape.constant(std::move(p)), lu);
}

}  // namespace detail

/// Normalizing pass on the tape: returns (z, per-sample logdet [B,1]) for the
/// map x -> z, matching inverse_values.
inline std::pair<Var, Var> inverse_graph(ad::Tape& tape, const GraphCtx& ctx, Var x,
                                         Var cond) {
    using namespace ad;
    const FlowArch& arch = ctx.arch;
    std::size_t rows = tape.value(x).shape[0];
    if (tape.value(x).shape[1] != arch.dim)
        throw NumericError("flow graph: data dim mismatch, expected " +
                           std::to_string(arch.dim));
    if (tape.value(cond).shape[1] != arch.cond_dim)
        throw NumericError("flow graph: cond dim mismatch, expected " +
                           std::to_string(arch.cond_dim));
    Var ld = tape.constant(Tensor::zeros({rows, 1}));
    std::size_t df = arch.front();
    for (std::size_t b = arch.blocks; b-- > 0;) {
        std::string base = names::block(ctx.prefix, b);
        bool xf_back = b % 2 == 0;
        std::size_t dt = arch.transformed(b);
        Var u = xf_back ? ad::slice(x, 1, 0, df) : ad::slice(x, 1, df, arch.back());
        Var v = xf_back ? ad::slice(x, 1, df, dt) : ad::slice(x, 1, 0, dt);
        auto [t, log_s] = detail::coupling_net_graph(tape, ctx, base, u, cond);
        Var vin = mul(sub(v, t), ad::exp(neg(log_s)));
        x = xf_back ? concat(u, vin, 1) : concat(vin, u, 1);
        ld = sub(ld, rowsum(log_s));
        if (arch.use_linear) {
            Var w = detail::linear_weight_graph(tape, ctx, base);
            x = matmul(x, transpose(w));
            ld = add(ld, sum(ctx.params->at(base + "linear.log_diag")));
        }
        if (arch.use_actnorm) {
            Var shift = ctx.params->at(base + "actnorm.shift");
            Var log_scale = ctx.params->at(base + "actnorm.log_scale");
            x = mul(sub(x, shift), ad::exp(neg(log_scale)));
            ld = sub(ld, sum(log_scale));
        }
        if (!tape.value(x).all_finite())
            throw NumericError("flow inverse: non-finite value at block " +
                               std::to_string(b));
    }
    return {x, ld};
}

/// Per-sample log p(x | cond) [B,1] on the tape (normalizing direction).
inline Var log_prob_graph(ad::Tape& tape, const GraphCtx& ctx, Var x, Var cond) {
    using namespace ad;
    auto [z, ld] = inverse_graph(tape, ctx, x, cond);
    Var sq = rowsum(mul(z, z));
    double c = -0.5 * static_cast<double>(ctx.arch.dim) * std::log(2.0 * M_PI);
    return add_const(add(ad::scale(sq, -0.5), ld), c);
}

}  // namespace viik::flow
