#pragma once

#include "viik/flow.hpp"
#include "viik/robot.hpp"
#include "viik/world.hpp"

namespace viik::enc {

using ad::Tensor;
using ad::Var;

/// Pose conditioning vector (x/R, y/R, sin theta, cos theta). Normalizing by
/// the reach keeps positions in [-1,1]; the sin/cos pair avoids the angle wrap.
inline Tensor pose_embedding(const robot::Pose& p, double reach) {
    return Tensor({1, 4},
                  {p.x / reach, p.y / reach, std::sin(p.theta), std::cos(p.theta)});
}

/// Conv stack over the occupancy raster fused with the pose, producing the
/// parameters of a diagonal Gaussian over the scene latent.
struct EncoderArch {
    std::size_t raster = 32;
    std::size_t c1 = 8, c2 = 16, c3 = 32;  // stride-2 conv channels
    std::size_t proj = 64;
    std::size_t fuse_hidden = 64;
    std::size_t latent = 8;
    std::size_t pose_dim = 4;
    double logsig_lo = -7.0, logsig_hi = 2.0;

    static std::size_t conv_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

    std::size_t flat() const {
        std::size_t s = conv_out(conv_out(conv_out(raster)));
        return c3 * s * s;
    }
};

inline void init_params(ad::ParamStore& params, const EncoderArch& a,
                        const std::string& prefix, rng::Rng& rng) {
    auto xavier = [&rng](std::vector<std::size_t> shape, std::size_t fan_in,
                         std::size_t fan_out) {
        Tensor w(std::move(shape));
        double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : w.data) v = rng.uniform(-lim, lim);
        return w;
    };
    params.add(prefix + ".conv1.w", xavier({a.c1, 1, 3, 3}, 9, a.c1 * 9));
    params.add(prefix + ".conv1.b", Tensor::zeros({a.c1}));
    params.add(prefix + ".conv2.w", xavier({a.c2, a.c1, 3, 3}, a.c1 * 9, a.c2 * 9));
    params.add(prefix + ".conv2.b", Tensor::zeros({a.c2}));
    params.add(prefix + ".conv3.w", xavier({a.c3, a.c2, 3, 3}, a.c2 * 9, a.c3 * 9));
    params.add(prefix + ".conv3.b", Tensor::zeros({a.c3}));
    params.add(prefix + ".proj.w", xavier({a.proj, a.flat()}, a.flat(), a.proj));
    params.add(prefix + ".proj.b", Tensor::zeros({a.proj}));
    params.add(prefix + ".fuse.w1",
               xavier({a.fuse_hidden, a.pose_dim + a.proj}, a.pose_dim + a.proj,
                      a.fuse_hidden));
    params.add(prefix + ".fuse.b1", Tensor::zeros({a.fuse_hidden}));
    // The head must separate scenes from step one and with noise well below
    // that separation, or the flow settles on ignoring the latent (its weights
    // on constant inputs decay away and the pathway never recovers): boost the
    // mu rows, start log sigma around -2.
    Tensor w2 = xavier({2 * a.latent, a.fuse_hidden}, a.fuse_hidden, 2 * a.latent);
    for (std::size_t r = 0; r < a.latent; ++r)
        for (std::size_t c = 0; c < a.fuse_hidden; ++c)
            w2.data[r * a.fuse_hidden + c] *= 3.0;
    params.add(prefix + ".fuse.w2", std::move(w2));
    Tensor b2 = Tensor::zeros({2 * a.latent});
    for (std::size_t r = a.latent; r < 2 * a.latent; ++r) b2.data[r] = -2.0;
    params.add(prefix + ".fuse.b2", std::move(b2));
}

inline Tensor raster_tensor(const world::OccupancyImage& img) {
    Tensor t({1, img.height, img.width});
    t.data = img.pixels;
    return t;
}

// -- tape path ----------------------------------------------------------------

struct EncodeGraphOut {
    Var mu, log_sigma;  // each [1, latent]
};

inline EncodeGraphOut encode_graph(ad::Tape& tape, const ad::BoundParams& params,
                                   const EncoderArch& a, const std::string& prefix,
                                   Var image, Var pose_emb) {
    using namespace ad;
    const Tensor& img = tape.value(image);
    if (img.ndim() != 3 || img.shape[1] != a.raster || img.shape[2] != a.raster)
        throw NumericError("encode: raster resolution mismatch, expected " +
                           std::to_string(a.raster));
    Var h = ad::softsign(conv2d(image, params.at(prefix + ".conv1.w"),
                                params.at(prefix + ".conv1.b"), 2, 1));
    h = ad::softsign(conv2d(h, params.at(prefix + ".conv2.w"),
                            params.at(prefix + ".conv2.b"), 2, 1));
    h = ad::softsign(conv2d(h, params.at(prefix + ".conv3.w"),
                            params.at(prefix + ".conv3.b"), 2, 1));
    Var flat = reshape(h, {1, a.flat()});
    Var feat = ad::softsign(
        affine(flat, params.at(prefix + ".proj.w"), params.at(prefix + ".proj.b")));
    Var fused = concat(pose_emb, feat, 1);
    Var h1 = ad::softsign(
        affine(fused, params.at(prefix + ".fuse.w1"), params.at(prefix + ".fuse.b1")));
    Var out =
        affine(h1, params.at(prefix + ".fuse.w2"), params.at(prefix + ".fuse.b2"));
    Var mu = ad::slice(out, 1, 0, a.latent);
    Var log_sigma = clamp(ad::slice(out, 1, a.latent, a.latent), a.logsig_lo,
                          a.logsig_hi);
    return {mu, log_sigma};
}

/// z0 = mu + exp(log sigma) * eps; gradients flow into mu and log sigma.
inline Var reparameterize_graph(ad::Tape& tape, Var mu, Var log_sigma,
                                const Tensor& eps) {
    using namespace ad;
    if (eps.size() != tape.value(mu).size())
        shape_error("reparameterize", tape.value(mu), eps);
    return add(mu, mul(ad::exp(log_sigma), tape.constant(eps)));
}

// -- value path ----------------------------------------------------------------

struct Values {
    Tensor mu, log_sigma;  // [1, latent]
};

struct Model {
    EncoderArch arch;
    Tensor conv1w, conv1b, conv2w, conv2b, conv3w, conv3b;
    Tensor projw, projb, fw1, fb1, fw2, fb2;
};

inline Model make_model(const ad::ParamStore& params, const std::string& prefix,
                        const EncoderArch& arch) {
    return Model{arch,
                 params.at(prefix + ".conv1.w"),
                 params.at(prefix + ".conv1.b"),
                 params.at(prefix + ".conv2.w"),
                 params.at(prefix + ".conv2.b"),
                 params.at(prefix + ".conv3.w"),
                 params.at(prefix + ".conv3.b"),
                 params.at(prefix + ".proj.w"),
                 params.at(prefix + ".proj.b"),
                 params.at(prefix + ".fuse.w1"),
                 params.at(prefix + ".fuse.b1"),
                 params.at(prefix + ".fuse.w2"),
                 params.at(prefix + ".fuse.b2")};
}

inline Values encode_values(const Model& m, const Tensor& image,
                            const Tensor& pose_emb) {
    const EncoderArch& a = m.arch;
    if (image.ndim() != 3 || image.shape[1] != a.raster || image.shape[2] != a.raster)
        throw NumericError("encode: raster resolution mismatch, expected " +
                           std::to_string(a.raster));
    Tensor h = map_values(conv2d_values(image, m.conv1w, m.conv1b, 2, 1),
                          ad::softsign_scalar);
    h = map_values(conv2d_values(h, m.conv2w, m.conv2b, 2, 1), ad::softsign_scalar);
    h = map_values(conv2d_values(h, m.conv3w, m.conv3b, 2, 1), ad::softsign_scalar);
    h.shape = {1, a.flat()};
    Tensor feat = map_values(affine_values(h, m.projw, m.projb), ad::softsign_scalar);
    Tensor fused = concat_cols_values(pose_emb, feat);
    Tensor h1 = map_values(affine_values(fused, m.fw1, m.fb1), ad::softsign_scalar);
    Tensor out = affine_values(h1, m.fw2, m.fb2);
    Values v;
    v.mu = slice_cols_values(out, 0, a.latent);
    v.log_sigma = map_values(slice_cols_values(out, a.latent, a.latent),
                             [&a](double x) {
                                 return x < a.logsig_lo
                                            ? a.logsig_lo
                                            : (x > a.logsig_hi ? a.logsig_hi : x);
                             });
    return v;
}

inline Tensor reparameterize_values(const Tensor& mu, const Tensor& log_sigma,
                                    rng::Rng& rng) {
    if (!same_shape(mu, log_sigma)) shape_error("reparameterize", mu, log_sigma);
    Tensor z0 = mu;
    for (std::size_t i = 0; i < z0.size(); ++i)
        z0.data[i] += std::exp(log_sigma.data[i]) * rng.gaussian();
    return z0;
}

/// Diagnostic density of the normalized latent: the diagonal-Gaussian density
/// of z0 at z0 = G(z1; pose) plus the log-Jacobian of that map at z1.
inline double latent_log_prob(const flow::Model& latent_flow, const Values& enc,
                              const Tensor& z1, const Tensor& pose_emb) {
    flow::PassResult gen = flow::forward_values(latent_flow, z1, pose_emb);
    double lp = gen.logdet[0];
    for (std::size_t i = 0; i < z1.size(); ++i) {
        double sig = std::exp(enc.log_sigma[i]);
        double d = (gen.x[i] - enc.mu[i]) / sig;
        lp += -0.5 * d * d - enc.log_sigma[i] - 0.5 * std::log(2.0 * M_PI);
    }
    return lp;
}

}  // namespace viik::enc
