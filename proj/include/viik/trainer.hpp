#pragma once

#include <functional>
#include <iomanip>

#include "viik/checkpoint.hpp"

namespace viik::train {

/// One assembled training batch, all rows from a single scene.
struct Batch {
    Tensor xprime;    // [B, data_dim], dequantized modeled vectors
    Tensor pose_emb;  // [B, 4]
    Tensor flags;     // [B, 2] clean flag conditions (conditioned mode only)
    int scene_id = 0;
};

/// Builds a Batch from loose samples; the samples must all come from the same
/// scene, mirroring the shared-latent batching of training.
inline Batch batch_from_samples(const std::vector<data::RawSample>& samples,
                                const robot::RobotModel& robot, Mode mode,
                                const data::DequantizationParams& dq, rng::Rng& rng) {
    if (samples.empty()) throw UsageError("batch: no samples");
    for (const auto& s : samples)
        if (s.scene_id != samples.front().scene_id)
            throw UsageError("batch: samples mix scenes " +
                             std::to_string(samples.front().scene_id) + " and " +
                             std::to_string(s.scene_id));
    std::size_t dof = robot.dof();
    ModelDims dims = dims_for(mode, dof, 0);
    double reach = robot.reach();
    Batch b;
    b.scene_id = samples.front().scene_id;
    b.xprime = Tensor({samples.size(), dims.data_dim});
    b.pose_emb = Tensor({samples.size(), 4});
    if (mode == Mode::p2) b.flags = Tensor({samples.size(), 2});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const data::RawSample& s = samples[i];
        std::vector<double> xp = data::dequantize(s, dq, rng);
        double* out = b.xprime.data.data() + i * dims.data_dim;
        if (mode == Mode::p3) {
            std::copy(xp.begin(), xp.end(), out);
        } else {
            std::copy(xp.begin(), xp.begin() + dof, out);
            out[dof] = xp[dof + 2];
        }
        b.pose_emb.at(i, 0) = s.pose.x / reach;
        b.pose_emb.at(i, 1) = s.pose.y / reach;
        b.pose_emb.at(i, 2) = std::sin(s.pose.theta);
        b.pose_emb.at(i, 3) = std::cos(s.pose.theta);
        if (mode == Mode::p2) {
            b.flags.at(i, 0) = s.self_col ? 1.0 : 0.0;
            b.flags.at(i, 1) = s.env_col ? 1.0 : 0.0;
        }
    }
    return b;
}

/// Batch for a set of rows of one dataset scene group.
inline Batch assemble_batch(const data::Dataset& ds, std::size_t group,
                            const std::vector<std::size_t>& rows, Mode mode,
                            const data::DequantizationParams& dq, rng::Rng& rng) {
    std::vector<data::RawSample> samples;
    samples.reserve(rows.size());
    for (std::size_t r : rows) samples.push_back(ds.sample_at(group, r));
    return batch_from_samples(samples, ds.robot, mode, dq, rng);
}

/// Negative log-likelihood of a batch under the conditional flow, with the
/// scene latent z1 shared across the batch. Returns the scalar loss var.
inline ad::Var loss_graph(ad::Tape& tape, const ad::BoundParams& params,
                          const ad::ParamStore& buffers, const Checkpoint& ckpt,
                          const Batch& batch, ad::Var z1) {
    using namespace ad;
    ModelDims dims = ckpt.dims();
    if (batch.xprime.shape[1] != dims.data_dim)
        throw NumericError("loss: modeled dim " +
                           std::to_string(batch.xprime.shape[1]) + ", expected " +
                           std::to_string(dims.data_dim));
    std::size_t rows = batch.xprime.shape[0];
    Var x = tape.constant(batch.xprime);
    Var cond = concat(tape.constant(batch.pose_emb), broadcast_rows(z1, rows), 1);
    if (ckpt.config.mode == Mode::p2)
        cond = concat(cond, tape.constant(batch.flags), 1);
    flow::GraphCtx ctx{&params, &buffers, ckpt.flow_arch(), "flow"};
    Var lp = flow::log_prob_graph(tape, ctx, x, cond);
    return ad::neg(mean(lp));
}

/// Scene latent for one batch: encode the raster with a batch pose, draw z0 by
/// reparameterization and normalize it with the latent flow.
inline ad::Var latent_graph(ad::Tape& tape, const ad::BoundParams& params,
                            const ad::ParamStore& buffers, const Checkpoint& ckpt,
                            const Tensor& raster, const Tensor& enc_pose,
                            const Tensor& eps) {
    using namespace ad;
    Var image = tape.constant(raster);
    Var pose = tape.constant(enc_pose);
    auto enc_out = enc::encode_graph(tape, params, ckpt.encoder_arch(), "enc", image,
                                     pose);
    Var z0 = enc::reparameterize_graph(tape, enc_out.mu, enc_out.log_sigma, eps);
    flow::GraphCtx ctx{&params, &buffers, ckpt.latent_arch(), "lat"};
    auto [z1, logdet] = flow::inverse_graph(tape, ctx, z0, pose);
    (void)logdet;  // the latent density never enters the loss
    return z1;
}

// -- optimizer -----------------------------------------------------------------

/// Adam with decoupled weight decay. Moments and the step count live in the
/// checkpoint so training resumes bit-exactly.
inline void adamw_step(ad::ParamStore& params, ad::ParamStore& m, ad::ParamStore& v,
                       const std::map<std::string, Tensor>& grads, std::uint64_t step,
                       double lr, double weight_decay, double beta1 = 0.9,
                       double beta2 = 0.999, double eps = 1e-8) {
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& name : params.names()) {
        Tensor& p = params.at(name);
        const Tensor& g = grads.at(name);
        Tensor& mi = m.at(name);
        Tensor& vi = v.at(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            mi.data[i] = beta1 * mi.data[i] + (1.0 - beta1) * g.data[i];
            vi.data[i] = beta2 * vi.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
            double mhat = mi.data[i] / bc1;
            double vhat = vi.data[i] / bc2;
            p.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p.data[i]);
        }
    }
}

/// Scales all gradients so the global L2 norm does not exceed `clip`.
inline double clip_grad_norm(std::map<std::string, Tensor>& grads, double clip) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g.data) sq += v * v;
    double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
        double s = clip / norm;
        for (auto& [name, g] : grads)
            for (double& v : g.data) v *= s;
    }
    return norm;
}

// -- training loop ---------------------------------------------------------------

inline constexpr double kSpikeMargin = 30.0;  // nats above the loss EMA

struct TrainHooks {
    std::filesystem::path loss_csv;                // per-step curve when set
    std::vector<std::uint64_t> snapshot_epochs;    // completed-epoch counts
    std::filesystem::path snapshot_stem;           // "<stem>.epochN.ckpt"
    std::filesystem::path crash_path;              // snapshot on non-finite loss
    std::function<void(std::uint64_t, double)> on_epoch;
};

namespace detail {

struct ScheduledBatch {
    std::size_t group;
    std::vector<std::size_t> rows;
};

/// All batches of one epoch: every scene partitioned without replacement, the
/// interleaving shuffled. Pools are pre-filtered to collision-free samples in
/// filtered mode.
inline std::vector<ScheduledBatch> epoch_schedule(const data::Dataset& ds, Mode mode,
                                                  std::uint64_t batch,
                                                  std::uint64_t seed,
                                                  std::uint64_t epoch) {
    std::vector<ScheduledBatch> all;
    for (std::size_t g = 0; g < ds.groups.size(); ++g) {
        std::vector<std::size_t> pool;
        std::size_t count = ds.group_count(g);
        pool.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            if (mode == Mode::p1) {
                data::RawSample s = ds.sample_at(g, i);
                if (s.self_col || s.env_col) continue;
            }
            pool.push_back(i);
        }
        if (pool.size() < batch)
            throw UsageError("train: scene " + std::to_string(ds.scenes[g].id) +
                             " has only " + std::to_string(pool.size()) +
                             " usable samples for batch size " + std::to_string(batch));
        rng::Rng perm_rng(rng::derive(seed, "perm", epoch, g));
        data::IndexBatcher it(std::move(pool), batch, perm_rng);
        std::vector<std::size_t> rows;
        while (it.next(rows)) all.push_back({g, rows});
    }
    rng::Rng order_rng(rng::derive(seed, "sched", epoch));
    for (std::size_t i = all.size() - 1; i > 0; --i)
        std::swap(all[i], all[order_rng.uniform_int(0, i)]);
    return all;
}

inline Tensor encoder_pose(const Batch& b, bool mean_pose) {
    Tensor pose({1, 4});
    if (!mean_pose) {
        for (std::size_t j = 0; j < 4; ++j) pose.at(0, j) = b.pose_emb.at(0, j);
        return pose;
    }
    std::size_t rows = b.pose_emb.shape[0];
    for (std::size_t j = 0; j < 4; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += b.pose_emb.at(i, j);
        pose.at(0, j) = s / static_cast<double>(rows);
    }
    return pose;
}

}  // namespace detail

/// Full optimization run. Resuming from a checkpoint continues the exact
/// stream of the uninterrupted run because every stochastic input is derived
/// from (seed, epoch, step).
inline Checkpoint train(const TrainConfig& config, const data::Dataset& ds,
                        const TrainHooks& hooks = {},
                        const Checkpoint* resume = nullptr) {
    config.validate();
    if (ds.scenes.empty()) throw UsageError("train: dataset has no scenes");

    Checkpoint ckpt;
    if (resume) {
        ckpt = *resume;
        ckpt.config.epochs = config.epochs;  // allow extending a finished run
    } else {
        ckpt.config = config;
        ckpt.robot = ds.robot;
        init_model_params(ckpt);
    }

    auto snapshot = [&](std::uint64_t completed) {
        if (hooks.snapshot_stem.empty()) return;
        for (std::uint64_t e : hooks.snapshot_epochs)
            if (e == completed) {
                std::filesystem::path p = hooks.snapshot_stem;
                p += ".epoch" + std::to_string(completed) + ".ckpt";
                save_checkpoint(p, ckpt);
            }
    };
    snapshot(ckpt.epoch);

    std::ofstream loss_csv;
    if (!hooks.loss_csv.empty()) {
        bool fresh = ckpt.epoch == 0;
        loss_csv.open(hooks.loss_csv, fresh ? std::ios::out : std::ios::app);
        if (!loss_csv) throw IoError("cannot open " + hooks.loss_csv.string());
        if (fresh) loss_csv << "epoch,step,loss,lr\n";
        loss_csv << std::setprecision(17);
    }

    // Rasters are a pure function of the scene; cache them once.
    std::vector<Tensor> rasters;
    for (const auto& scene : ds.scenes)
        rasters.push_back(enc::raster_tensor(world::rasterize(
            scene, ds.robot.reach(), ckpt.config.raster_res, ckpt.config.raster_res)));

    ModelDims dims = ckpt.dims();
    std::uint64_t seed = ckpt.config.seed;
    for (std::uint64_t epoch = ckpt.epoch; epoch < ckpt.config.epochs; ++epoch) {
        double lr = ckpt.config.learning_rate *
                    std::pow(ckpt.config.gamma, static_cast<double>(epoch));
        auto schedule = detail::epoch_schedule(ds, ckpt.config.mode,
                                               ckpt.config.batch_size, seed, epoch);
        double loss_sum = 0.0;
        for (std::size_t step = 0; step < schedule.size(); ++step) {
            const auto& sb = schedule[step];
            rng::Rng deq_rng(rng::derive(seed, "deq", epoch, step));
            Batch batch = assemble_batch(ds, sb.group, sb.rows, ckpt.config.mode,
                                         ckpt.config.deq, deq_rng);

            rng::Rng rep_rng(rng::derive(seed, "rep", epoch, step));
            Tensor eps({1, ckpt.config.latent_dim});
            for (double& v : eps.data) v = rep_rng.gaussian();

            Tensor raster = rasters[sb.group];
            if (ckpt.config.raster_noise > 0.0) {
                rng::Rng noise_rng(rng::derive(seed, "raster", epoch, step));
                for (double& v : raster.data)
                    v += ckpt.config.raster_noise * noise_rng.gaussian();
            }

            ad::Tape tape;
            ad::BoundParams bound = ad::bind_params(tape, ckpt.params);
            ad::Var z1 = latent_graph(tape, bound, ckpt.buffers, ckpt, raster,
                                      detail::encoder_pose(batch,
                                                           ckpt.config.encoder_pose_mean),
                                      eps);
            ad::Var loss = loss_graph(tape, bound, ckpt.buffers, ckpt, batch, z1);
            double loss_value = tape.value(loss).data[0];
            if (!std::isfinite(loss_value)) {
                if (!hooks.crash_path.empty()) save_checkpoint(hooks.crash_path, ckpt);
                throw NumericError("train: non-finite loss at epoch " +
                                   std::to_string(epoch) + " step " +
                                   std::to_string(step));
            }
            // Spike guard: a batch that lands far outside the running loss
            // level would poison the optimizer moments and can saturate the
            // coupling-scale clamps beyond recovery. Such steps are skipped;
            // the rule is a pure function of (loss, ema), so runs stay
            // deterministic and resumable.
            bool spike = ckpt.global_step > 0 &&
                         loss_value > ckpt.loss_ema + kSpikeMargin;
            if (!spike) {
                ad::GradMap gm = tape.backward(loss);
                auto grads = ad::grads_by_name(gm, bound);
                clip_grad_norm(grads, ckpt.config.grad_clip);
                ++ckpt.adam_steps;
                adamw_step(ckpt.params, ckpt.opt_m, ckpt.opt_v, grads,
                           ckpt.adam_steps, lr, ckpt.config.weight_decay);
                ckpt.loss_ema = ckpt.global_step == 0
                                    ? loss_value
                                    : 0.95 * ckpt.loss_ema + 0.05 * loss_value;
            }
            ++ckpt.global_step;
            loss_sum += loss_value;
            if (loss_csv.is_open())
                loss_csv << epoch << ',' << step << ',' << loss_value << ',' << lr
                         << '\n';
        }
        ckpt.epoch = epoch + 1;
        if (hooks.on_epoch)
            hooks.on_epoch(ckpt.epoch,
                           schedule.empty() ? 0.0
                                            : loss_sum / static_cast<double>(
                                                             schedule.size()));
        snapshot(ckpt.epoch);
    }
    (void)dims;
    return ckpt;
}

}  // namespace viik::train
