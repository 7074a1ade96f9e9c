#pragma once

#include <chrono>
#include <iostream>
#include <optional>

#include "viik/trainer.hpp"

namespace viik::eval {

using ad::Tensor;

/// Solutions for one query plus everything needed to judge them. Decoded flags
/// are the solver's own labels; truth flags are always recomputed by the
/// geometric oracles and never taken from the model.
struct SolutionSet {
    enum class Source { flow, classical };

    std::vector<robot::Configuration> configs;
    std::vector<std::array<bool, 2>> decoded;  // [self, env]; empty when absent
    std::vector<std::array<bool, 2>> truth;
    Source source = Source::flow;
    double t_sample_ms = 0.0;  // flow: encode + sample + decode
    double t_ik_ms = 0.0;      // classical: solve incl. failed restarts
    double t_cc_ms = 0.0;      // classical: collision checks

    double total_ms() const {
        return source == Source::flow ? t_sample_ms : t_ik_ms + t_cc_ms;
    }
    std::size_t size() const { return configs.size(); }
};

/// Checkpoint unpacked once for repeated tape-free inference.
struct LoadedModel {
    train::Checkpoint ckpt;
    flow::Model flow_model;
    flow::Model latent_model;
    enc::Model encoder;
    train::ModelDims dims;

    static LoadedModel from_checkpoint(train::Checkpoint c) {
        LoadedModel m;
        m.flow_model = flow::make_model(c.params, c.buffers, "flow", c.flow_arch());
        m.latent_model = flow::make_model(c.params, c.buffers, "lat", c.latent_arch());
        m.encoder = enc::make_model(c.params, "enc", c.encoder_arch());
        m.dims = c.dims();
        m.ckpt = std::move(c);
        return m;
    }

    static LoadedModel load(const std::filesystem::path& path) {
        return from_checkpoint(train::load_checkpoint(path));
    }
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                     t0)
        .count();
}

}  // namespace detail

/// Draws K configurations for one (pose, scene) query. One scene latent is
/// encoded per query and shared across the draws unless resample_latent asks
/// for a fresh latent per draw.
inline SolutionSet solve_flow(const LoadedModel& m, const robot::Pose& pose,
                              const world::Scene& scene, std::size_t k, rng::Rng& rng,
                              bool resample_latent = false) {
    SolutionSet out;
    out.source = SolutionSet::Source::flow;
    if (k == 0) return out;
    const robot::RobotModel& robot = m.ckpt.robot;
    auto t0 = std::chrono::steady_clock::now();

    world::OccupancyImage img = world::rasterize(scene, robot.reach(),
                                                 m.ckpt.config.raster_res,
                                                 m.ckpt.config.raster_res);
    Tensor raster = enc::raster_tensor(img);
    Tensor pose_emb = enc::pose_embedding(pose, robot.reach());
    enc::Values ev = enc::encode_values(m.encoder, raster, pose_emb);

    auto latent_row = [&](rng::Rng& r) {
        Tensor z0 = enc::reparameterize_values(ev.mu, ev.log_sigma, r);
        return flow::inverse_values(m.latent_model, z0, pose_emb).x;
    };

    std::size_t cond_rows = resample_latent ? k : 1;
    Tensor cond({cond_rows, m.dims.cond_dim});
    for (std::size_t i = 0; i < cond_rows; ++i) {
        Tensor z1 = latent_row(rng);
        for (std::size_t j = 0; j < 4; ++j) cond.at(i, j) = pose_emb[j];
        for (std::size_t j = 0; j < z1.size(); ++j) cond.at(i, 4 + j) = z1[j];
        if (m.ckpt.config.mode == train::Mode::p2) {
            cond.at(i, m.dims.cond_dim - 2) = 0.0;  // condition on collision-free
            cond.at(i, m.dims.cond_dim - 1) = 0.0;
        }
    }

    Tensor z({k, m.dims.data_dim});
    for (double& v : z.data) v = rng.gaussian();
    Tensor x = flow::forward_values(m.flow_model, z, cond).x;

    std::size_t dof = robot.dof();
    bool joint_mode = m.ckpt.config.mode == train::Mode::p3;
    out.configs.reserve(k);
    if (joint_mode) out.decoded.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const double* row = x.data.data() + i * m.dims.data_dim;
        out.configs.emplace_back(row, row + dof);
        if (joint_mode) {
            auto [sc, ec] = data::decode_flags({row, m.dims.data_dim}, dof);
            out.decoded.push_back({sc, ec});
        }
    }
    out.t_sample_ms = detail::ms_since(t0);

    out.truth.reserve(k);
    for (const auto& q : out.configs)
        out.truth.push_back(
            {robot::self_collision(robot, q), world::env_collision(robot, q, scene)});
    return out;
}

/// Damped-least-squares IK from random restarts until K solutions meet the
/// tolerance, then a collision check per solution. Mirrors the classical
/// solve-then-check pipeline whose runtime the flow amortizes.
inline SolutionSet solve_classical(const robot::RobotModel& robot,
                                   const robot::Pose& pose, const world::Scene& scene,
                                   std::size_t k, double tol, rng::Rng& rng,
                                   double lambda = 0.1, std::size_t max_iters = 200) {
    if (!(tol > 0)) throw UsageError("solve_classical: tolerance must be > 0");
    SolutionSet out;
    out.source = SolutionSet::Source::classical;
    if (k == 0) return out;
    std::size_t n = robot.dof();
    std::size_t budget = 100 * k;
    double lambda2 = lambda * lambda;

    auto t0 = std::chrono::steady_clock::now();
    std::size_t restarts = 0;
    while (out.configs.size() < k && restarts < budget) {
        ++restarts;
        robot::Configuration q = robot::sample_config(robot, rng);
        bool ok = false;
        for (std::size_t it = 0; it < max_iters; ++it) {
            robot::Pose cur = robot::forward_kinematics(robot, q);
            double ex = pose.x - cur.x;
            double ey = pose.y - cur.y;
            double et = robot::wrap_angle(pose.theta - cur.theta);
            if (std::hypot(ex, ey) < tol && std::abs(et) < tol) {
                ok = true;
                break;
            }
            std::vector<double> jac = robot::jacobian(robot, q);
            // A = J J^T + lambda^2 I (3x3), solve A y = e
            double a[3][3];
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) {
                    double s = 0;
                    for (std::size_t j = 0; j < n; ++j)
                        s += jac[r * n + j] * jac[c * n + j];
                    a[r][c] = s + (r == c ? lambda2 : 0.0);
                }
            double y[3] = {ex, ey, et};
            // Gaussian elimination with partial pivoting.
            int piv[3] = {0, 1, 2};
            for (int c = 0; c < 3; ++c) {
                int best = c;
                for (int r = c + 1; r < 3; ++r)
                    if (std::abs(a[piv[r]][c]) > std::abs(a[piv[best]][c])) best = r;
                std::swap(piv[c], piv[best]);
                for (int r = c + 1; r < 3; ++r) {
                    double f = a[piv[r]][c] / a[piv[c]][c];
                    for (int cc = c; cc < 3; ++cc) a[piv[r]][cc] -= f * a[piv[c]][cc];
                    y[piv[r]] -= f * y[piv[c]];
                }
            }
            double sol[3];
            for (int r = 2; r >= 0; --r) {
                double s = y[piv[r]];
                for (int cc = r + 1; cc < 3; ++cc) s -= a[piv[r]][cc] * sol[cc];
                sol[r] = s / a[piv[r]][r];
            }
            for (std::size_t j = 0; j < n; ++j) {
                double dq = jac[0 * n + j] * sol[0] + jac[1 * n + j] * sol[1] +
                            jac[2 * n + j] * sol[2];
                q[j] = std::clamp(q[j] + dq, robot.joint_limits[j][0],
                                  robot.joint_limits[j][1]);
            }
        }
        if (ok) out.configs.push_back(std::move(q));
    }
    out.t_ik_ms = detail::ms_since(t0);
    if (out.configs.size() < k)
        std::cerr << "solve_classical: restart budget exhausted, returning "
                  << out.configs.size() << " of " << k << " solutions\n";

    auto t1 = std::chrono::steady_clock::now();
    out.truth.reserve(out.configs.size());
    for (const auto& q : out.configs)
        out.truth.push_back(
            {robot::self_collision(robot, q), world::env_collision(robot, q, scene)});
    out.t_cc_ms = detail::ms_since(t1);
    out.decoded = out.truth;  // the classical pipeline has checked every solution
    return out;
}

inline double position_error(const robot::RobotModel& robot,
                             const robot::Configuration& q, const robot::Pose& target) {
    robot::Pose p = robot::forward_kinematics(robot, q);
    return std::hypot(p.x - target.x, p.y - target.y);
}

inline double angular_error(const robot::RobotModel& robot,
                            const robot::Configuration& q, const robot::Pose& target) {
    robot::Pose p = robot::forward_kinematics(robot, q);
    return std::abs(robot::wrap_angle(p.theta - target.theta));
}

// -- metrics -------------------------------------------------------------------

/// Counting state accumulated across queries of one scene.
struct MetricsAccum {
    double pos_err_sum = 0.0, ang_err_sum = 0.0;
    std::size_t emitted = 0;           // solutions delivered downstream
    std::size_t emitted_self = 0, emitted_env = 0;  // true collisions among them
    std::size_t total = 0;
    // IoU counts over all draws (positive class = collision).
    std::size_t tp_self = 0, fp_self = 0, fn_self = 0;
    std::size_t tp_env = 0, fp_env = 0, fn_env = 0;
    bool has_decoded = false;
};

/// Folds one solution set into the accumulator. When the solver labels its own
/// output (joint mode), the emitted set is the subset it labels collision-free
/// and the label/truth agreement feeds the IoU counters; otherwise every
/// solution is emitted.
inline void accumulate_metrics(MetricsAccum& acc, const SolutionSet& ss,
                               const robot::RobotModel& robot,
                               const robot::Pose& target) {
    bool decoded = !ss.decoded.empty();
    acc.has_decoded = acc.has_decoded || decoded;
    for (std::size_t i = 0; i < ss.configs.size(); ++i) {
        ++acc.total;
        bool t_self = ss.truth[i][0], t_env = ss.truth[i][1];
        if (decoded) {
            bool d_self = ss.decoded[i][0], d_env = ss.decoded[i][1];
            if (d_self && t_self) ++acc.tp_self;
            if (d_self && !t_self) ++acc.fp_self;
            if (!d_self && t_self) ++acc.fn_self;
            if (d_env && t_env) ++acc.tp_env;
            if (d_env && !t_env) ++acc.fp_env;
            if (!d_env && t_env) ++acc.fn_env;
            if (d_self || d_env) continue;  // solver withholds predicted collisions
        }
        ++acc.emitted;
        if (t_self) ++acc.emitted_self;
        if (t_env) ++acc.emitted_env;
        acc.pos_err_sum += position_error(robot, ss.configs[i], target);
        acc.ang_err_sum += angular_error(robot, ss.configs[i], target);
    }
}

struct Metrics {
    double pos_err_m = 0.0, ang_err_rad = 0.0;
    double self_rate = 0.0, env_rate = 0.0;
    std::optional<double> iou_self, iou_env;
    std::size_t emitted = 0, total = 0;
};

/// Positive-class Jaccard; an empty union counts as perfect agreement.
inline double jaccard(std::size_t tp, std::size_t fp, std::size_t fn) {
    std::size_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
}

inline Metrics finalize_metrics(const MetricsAccum& acc) {
    Metrics m;
    m.emitted = acc.emitted;
    m.total = acc.total;
    if (acc.emitted > 0) {
        double n = static_cast<double>(acc.emitted);
        m.pos_err_m = acc.pos_err_sum / n;
        m.ang_err_rad = acc.ang_err_sum / n;
        m.self_rate = static_cast<double>(acc.emitted_self) / n;
        m.env_rate = static_cast<double>(acc.emitted_env) / n;
    }
    if (acc.has_decoded) {
        m.iou_self = jaccard(acc.tp_self, acc.fp_self, acc.fn_self);
        m.iou_env = jaccard(acc.tp_env, acc.fp_env, acc.fn_env);
    }
    return m;
}

inline Metrics collision_metrics(const SolutionSet& ss, const robot::RobotModel& robot,
                                 const robot::Pose& target) {
    MetricsAccum acc;
    accumulate_metrics(acc, ss, robot, target);
    return finalize_metrics(acc);
}

/// Monte-Carlo collision rates of uniform random configurations — the raw
/// test-distribution baseline the solver is compared against.
inline std::pair<double, double> uniform_rates(const robot::RobotModel& robot,
                                               const world::Scene& scene, std::size_t n,
                                               rng::Rng& rng) {
    std::size_t self_hits = 0, env_hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        robot::Configuration q = robot::sample_config(robot, rng);
        if (robot::self_collision(robot, q)) ++self_hits;
        if (world::env_collision(robot, q, scene)) ++env_hits;
    }
    return {static_cast<double>(self_hits) / static_cast<double>(n),
            static_cast<double>(env_hits) / static_cast<double>(n)};
}

// -- scene evaluation ------------------------------------------------------------

struct EvalRow {
    int scene_id = 0;
    std::string mode;  // p1|p2|p3|test
    std::size_t k = 0;
    Metrics metrics;
};

/// Evaluates a model on one scene over `poses` targets drawn from the uniform
/// configuration distribution, K draws per target.
inline EvalRow evaluate_scene(const LoadedModel& m, const world::Scene& scene,
                              std::size_t poses, std::size_t k, std::uint64_t seed) {
    MetricsAccum acc;
    for (std::size_t p = 0; p < poses; ++p) {
        rng::Rng rng(rng::derive(seed, "eval", static_cast<std::uint64_t>(scene.id), p));
        robot::Configuration qt = robot::sample_config(m.ckpt.robot, rng);
        robot::Pose target = robot::forward_kinematics(m.ckpt.robot, qt);
        SolutionSet ss = solve_flow(m, target, scene, k, rng);
        accumulate_metrics(acc, ss, m.ckpt.robot, target);
    }
    EvalRow row;
    row.scene_id = scene.id;
    row.mode = train::to_string(m.ckpt.config.mode);
    row.k = k;
    row.metrics = finalize_metrics(acc);
    return row;
}

inline EvalRow test_set_row(const robot::RobotModel& robot, const world::Scene& scene,
                            std::size_t n, std::uint64_t seed) {
    rng::Rng rng(rng::derive(seed, "test-set", static_cast<std::uint64_t>(scene.id)));
    auto [self_rate, env_rate] = uniform_rates(robot, scene, n, rng);
    EvalRow row;
    row.scene_id = scene.id;
    row.mode = "test";
    row.k = n;
    row.metrics.self_rate = self_rate;
    row.metrics.env_rate = env_rate;
    row.metrics.emitted = row.metrics.total = n;
    return row;
}

inline std::string metrics_csv_header() {
    return "scene_id,mode,K,pos_err_mm,ang_err_deg,env_rate,self_rate,iou_env,iou_self";
}

inline std::string metrics_csv_line(const EvalRow& row) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << row.scene_id << ',' << row.mode << ',' << row.k << ',';
    if (row.mode == "test")
        os << ",,";  // no pose errors for the raw distribution
    else
        os << row.metrics.pos_err_m * 1000.0 << ','
           << row.metrics.ang_err_rad * 180.0 / M_PI << ',';
    os << row.metrics.env_rate << ',' << row.metrics.self_rate << ',';
    if (row.metrics.iou_env) os << *row.metrics.iou_env;
    os << ',';
    if (row.metrics.iou_self) os << *row.metrics.iou_self;
    return os.str();
}

// -- runtime benchmark -------------------------------------------------------------

struct BenchRow {
    std::size_t k = 0;
    std::string method;  // flow | classical
    double median_ms = 0.0, p10_ms = 0.0, p90_ms = 0.0;
};

namespace detail {

inline double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.empty()) return 0.0;
    double pos = q * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace detail

/// Wall-clock comparison of the amortized sampler against solve-then-check,
/// one row per (K, method). Targets are reachable poses shared by both
/// methods; the model is warm before timing starts.
inline std::vector<BenchRow> bench_runtime(const LoadedModel& m,
                                           const world::Scene& scene,
                                           const std::vector<std::size_t>& k_list,
                                           std::size_t trials, double tol,
                                           std::uint64_t seed) {
    if (k_list.empty()) throw UsageError("bench: K list must not be empty");
    if (trials == 0) throw UsageError("bench: trials must be >= 1");
    const robot::RobotModel& robot = m.ckpt.robot;
    {
        rng::Rng warm(rng::derive(seed, "warmup"));
        robot::Configuration q = robot::sample_config(robot, warm);
        robot::Pose target = robot::forward_kinematics(robot, q);
        solve_flow(m, target, scene, 16, warm);
        solve_classical(robot, target, scene, 1, tol, warm);
    }
    std::vector<BenchRow> rows;
    for (std::size_t k : k_list) {
        std::vector<double> flow_ms, classical_ms;
        for (std::size_t trial = 0; trial < trials; ++trial) {
            rng::Rng pose_rng(rng::derive(seed, "bench-pose", k, trial));
            robot::Configuration qt = robot::sample_config(robot, pose_rng);
            robot::Pose target = robot::forward_kinematics(robot, qt);
            rng::Rng flow_rng(rng::derive(seed, "bench-flow", k, trial));
            flow_ms.push_back(solve_flow(m, target, scene, k, flow_rng).t_sample_ms);
            rng::Rng cls_rng(rng::derive(seed, "bench-classical", k, trial));
            SolutionSet cs = solve_classical(robot, target, scene, k, tol, cls_rng);
            classical_ms.push_back(cs.t_ik_ms + cs.t_cc_ms);
        }
        rows.push_back({k, "flow", detail::quantile(flow_ms, 0.5),
                        detail::quantile(flow_ms, 0.1), detail::quantile(flow_ms, 0.9)});
        rows.push_back({k, "classical", detail::quantile(classical_ms, 0.5),
                        detail::quantile(classical_ms, 0.1),
                        detail::quantile(classical_ms, 0.9)});
    }
    return rows;
}

inline std::string bench_csv_header() { return "K,method,median_ms,p10_ms,p90_ms"; }

inline std::string bench_csv_line(const BenchRow& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6);
    os << r.k << ',' << r.method << ',' << r.median_ms << ',' << r.p10_ms << ','
       << r.p90_ms;
    return os.str();
}

}  // namespace viik::eval
