#pragma once

#include "viik/dataset.hpp"
#include "viik/encoder.hpp"
#include "viik/flow.hpp"

namespace viik::train {

using ad::Tensor;

enum class Mode { p1, p2, p3 };

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::p1: return "p1";
        case Mode::p2: return "p2";
        case Mode::p3: return "p3";
    }
    return "p3";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "p1") return Mode::p1;
    if (s == "p2") return Mode::p2;
    if (s == "p3") return Mode::p3;
    throw UsageError("unknown mode '" + s + "' (p1|p2|p3)");
}

struct TrainConfig {
    Mode mode = Mode::p3;
    std::uint64_t batch_size = 256;
    double learning_rate = 3e-4;
    double gamma = 0.99;  // per-epoch learning-rate multiplier
    std::uint64_t epochs = 60;
    double weight_decay = 1e-5;
    std::uint64_t seed = 1;
    data::DequantizationParams deq;
    std::uint64_t flow_blocks = 12;
    std::uint64_t flow_hidden = 128;
    std::uint64_t latent_dim = 8;
    std::uint64_t latent_blocks = 4;
    std::uint64_t latent_hidden = 64;
    std::uint64_t raster_res = 32;
    double grad_clip = 10.0;
    double raster_noise = 0.0;       // train-time raster noise std; 0 disables
    bool encoder_pose_mean = false;  // feed mean batch pose to the encoder

    void validate() const {
        if (batch_size < 2) throw UsageError("train: batch size must be >= 2");
        if (!(gamma > 0.0) || gamma > 1.0)
            throw UsageError("train: gamma must be in (0, 1]");
        if (!(learning_rate > 0.0)) throw UsageError("train: learning rate must be > 0");
        deq.validate();
    }
};

/// Distribution mode decides what the flow models and what it is fed as
/// conditioning. Joint mode keeps both flags inside the modeled vector; the
/// conditioned mode moves them into the conditioning; the filtered mode drops
/// colliding samples entirely.
struct ModelDims {
    std::size_t dof = 0;
    std::size_t data_dim = 0;  // dof+3 when flags are modeled, else dof+1
    std::size_t cond_dim = 0;  // pose embedding + latent (+2 flag conditions)
};

inline ModelDims dims_for(Mode mode, std::size_t dof, std::size_t latent) {
    ModelDims d;
    d.dof = dof;
    d.data_dim = mode == Mode::p3 ? dof + 3 : dof + 1;
    d.cond_dim = 4 + latent + (mode == Mode::p2 ? 2 : 0);
    return d;
}

struct Checkpoint {
    TrainConfig config;
    robot::RobotModel robot;
    ad::ParamStore params;   // trainable tensors of all three families
    ad::ParamStore buffers;  // fixed permutations / signs
    ad::ParamStore opt_m, opt_v;
    std::uint64_t adam_steps = 0;
    std::uint64_t epoch = 0;        // completed epochs
    std::uint64_t global_step = 0;  // completed optimizer steps
    double loss_ema = 0.0;          // spike-guard reference, see trainer

    ModelDims dims() const {
        return dims_for(config.mode, robot.dof(), config.latent_dim);
    }

    flow::FlowArch flow_arch() const {
        ModelDims d = dims();
        return {d.data_dim, d.cond_dim, config.flow_blocks, config.flow_hidden,
                5.0,        true,       true};
    }

    flow::FlowArch latent_arch() const {
        return {config.latent_dim, 4,     config.latent_blocks, config.latent_hidden,
                5.0,               false, false};
    }

    enc::EncoderArch encoder_arch() const {
        enc::EncoderArch a;
        a.raster = config.raster_res;
        a.latent = config.latent_dim;
        return a;
    }
};

/// Fresh parameter families theta (flow), psi (latent flow), phi (encoder).
inline void init_model_params(Checkpoint& ckpt, bool identity_linear = false) {
    rng::Rng rng(rng::derive(ckpt.config.seed, "init"));
    flow::init_params(ckpt.params, ckpt.buffers, ckpt.flow_arch(), "flow", rng,
                      identity_linear);
    flow::init_params(ckpt.params, ckpt.buffers, ckpt.latent_arch(), "lat", rng);
    enc::init_params(ckpt.params, ckpt.encoder_arch(), "enc", rng);
    for (const auto& name : ckpt.params.names()) {
        ckpt.opt_m.add(name, Tensor::zeros(ckpt.params.at(name).shape), false);
        ckpt.opt_v.add(name, Tensor::zeros(ckpt.params.at(name).shape), false);
    }
}

// -- on-disk format ------------------------------------------------------------
// "VIIKCKPT" | u32 version | u64 meta_len | meta text | u64 tensor_count |
// per tensor: u32 name_len, name, u32 ndim, u64 dims..., f64 data (LE) |
// u32 crc32 over all preceding bytes.

constexpr char kCkptMagic[8] = {'V', 'I', 'I', 'K', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

namespace detail {

inline std::string config_text(const Checkpoint& c) {
    std::ostringstream os;
    os.precision(17);
    os << "format: viik-checkpoint\n";
    os << "mode: " << to_string(c.config.mode) << "\n";
    os << "batch_size: " << c.config.batch_size << "\n";
    os << "learning_rate: " << c.config.learning_rate << "\n";
    os << "gamma: " << c.config.gamma << "\n";
    os << "epochs: " << c.config.epochs << "\n";
    os << "weight_decay: " << c.config.weight_decay << "\n";
    os << "seed: " << c.config.seed << "\n";
    os << "deq_a: " << c.config.deq.a << "\n";
    os << "deq_b: " << c.config.deq.b << "\n";
    os << "flow_blocks: " << c.config.flow_blocks << "\n";
    os << "flow_hidden: " << c.config.flow_hidden << "\n";
    os << "latent_dim: " << c.config.latent_dim << "\n";
    os << "latent_blocks: " << c.config.latent_blocks << "\n";
    os << "latent_hidden: " << c.config.latent_hidden << "\n";
    os << "raster_res: " << c.config.raster_res << "\n";
    os << "grad_clip: " << c.config.grad_clip << "\n";
    os << "raster_noise: " << c.config.raster_noise << "\n";
    os << "encoder_pose_mean: " << (c.config.encoder_pose_mean ? 1 : 0) << "\n";
    os << robot::to_text_block(c.robot);
    // The training streams are derived from (seed, epoch, step), so these
    // counters fully describe the generator state at the saved boundary.
    os << "epoch: " << c.epoch << "\n";
    os << "global_step: " << c.global_step << "\n";
    os << "adam_steps: " << c.adam_steps << "\n";
    os << "loss_ema: " << c.loss_ema << "\n";
    return os.str();
}

inline void put_tensor(std::string& buf, const std::string& name, const Tensor& t) {
    io::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    io::put_u32(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) io::put_u64(buf, d);
    for (double v : t.data) io::put_f64(buf, v);
}

inline std::pair<std::string, Tensor> get_tensor(io::Reader& rd) {
    std::string name = rd.str(rd.u32());
    std::uint32_t ndim = rd.u32();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = rd.u64();
    Tensor t(shape);
    for (double& v : t.data) v = rd.f64();
    return {std::move(name), std::move(t)};
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    std::string buf;
    io::put_bytes(buf, kCkptMagic, 8);
    io::put_u32(buf, kCkptVersion);
    std::string meta = detail::config_text(c);
    io::put_u64(buf, meta.size());
    buf += meta;
    std::uint64_t count = c.params.size() + c.buffers.size() + c.opt_m.size() +
                          c.opt_v.size();
    io::put_u64(buf, count);
    for (const auto& n : c.params.names()) detail::put_tensor(buf, n, c.params.at(n));
    for (const auto& n : c.buffers.names())
        detail::put_tensor(buf, "buf." + n, c.buffers.at(n));
    for (const auto& n : c.opt_m.names())
        detail::put_tensor(buf, "adam.m." + n, c.opt_m.at(n));
    for (const auto& n : c.opt_v.names())
        detail::put_tensor(buf, "adam.v." + n, c.opt_v.at(n));
    io::put_u32(buf, io::crc32_final(io::crc32(buf.data(), buf.size())));
    io::write_file(path, buf);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string buf = io::read_file(path);
    std::string what = "checkpoint " + path.string();
    if (buf.size() < 16) throw IoError(what + ": truncated file");
    std::uint32_t stored_crc = 0;
    {
        io::Reader tail(buf, what);
        tail.str(buf.size() - 4);
        stored_crc = tail.u32();
    }
    if (io::crc32_final(io::crc32(buf.data(), buf.size() - 4)) != stored_crc)
        throw IoError(what + ": checksum mismatch");
    io::Reader rd(buf, what);
    if (rd.str(8) != std::string(kCkptMagic, 8)) throw IoError(what + ": bad magic");
    std::uint32_t version = rd.u32();
    if (version != kCkptVersion)
        throw IoError(what + ": unsupported version " + std::to_string(version));
    std::string meta = rd.str(rd.u64());
    Checkpoint c;
    std::istringstream ms(meta);
    auto kv = data::detail::parse_kv(ms, nullptr);
    c.config.mode = mode_from_string(kv.at("mode"));
    c.config.batch_size = std::stoull(kv.at("batch_size"));
    c.config.learning_rate = std::stod(kv.at("learning_rate"));
    c.config.gamma = std::stod(kv.at("gamma"));
    c.config.epochs = std::stoull(kv.at("epochs"));
    c.config.weight_decay = std::stod(kv.at("weight_decay"));
    c.config.seed = std::stoull(kv.at("seed"));
    c.config.deq.a = std::stod(kv.at("deq_a"));
    c.config.deq.b = std::stod(kv.at("deq_b"));
    c.config.flow_blocks = std::stoull(kv.at("flow_blocks"));
    c.config.flow_hidden = std::stoull(kv.at("flow_hidden"));
    c.config.latent_dim = std::stoull(kv.at("latent_dim"));
    c.config.latent_blocks = std::stoull(kv.at("latent_blocks"));
    c.config.latent_hidden = std::stoull(kv.at("latent_hidden"));
    c.config.raster_res = std::stoull(kv.at("raster_res"));
    c.config.grad_clip = std::stod(kv.at("grad_clip"));
    c.config.raster_noise = std::stod(kv.at("raster_noise"));
    c.config.encoder_pose_mean = kv.at("encoder_pose_mean") == "1";
    c.robot = robot::robot_from_fields(kv.at("robot.link_lengths"),
                                       kv.at("robot.joint_limits"),
                                       kv.at("robot.link_radius"));
    c.epoch = std::stoull(kv.at("epoch"));
    c.global_step = std::stoull(kv.at("global_step"));
    c.adam_steps = std::stoull(kv.at("adam_steps"));
    c.loss_ema = std::stod(kv.at("loss_ema"));
    std::uint64_t count = rd.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        auto [name, t] = detail::get_tensor(rd);
        if (name.rfind("buf.", 0) == 0)
            c.buffers.add(name.substr(4), std::move(t), false);
        else if (name.rfind("adam.m.", 0) == 0)
            c.opt_m.add(name.substr(7), std::move(t), false);
        else if (name.rfind("adam.v.", 0) == 0)
            c.opt_v.add(name.substr(7), std::move(t), false);
        else
            c.params.add(name, std::move(t), true);
    }
    if (rd.remaining() != 4) throw IoError(what + ": trailing bytes");
    return c;
}

}  // namespace viik::train
