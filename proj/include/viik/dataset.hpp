#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <thread>

#include "viik/robot.hpp"
#include "viik/serialize.hpp"
#include "viik/world.hpp"

namespace viik::data {

/// One labeled training sample: configuration, its end-effector pose and the
/// two oracle collision flags for a specific scene.
struct RawSample {
    robot::Configuration q;
    robot::Pose pose;
    bool self_col = false;
    bool env_col = false;
    int scene_id = 0;
};

/// Noise levels for dequantizing the boolean flags (a) and the padding
/// coordinate (b); both are standard deviations.
struct DequantizationParams {
    double a = 0.1;
    double b = 0.1;

    void validate() const {
        if (a < 0 || b < 0) throw UsageError("dequantization: a and b must be >= 0");
    }
};

/// Row layout: [q_1..q_N, x, y, theta, self_flag, env_flag], all f64.
struct Dataset {
    robot::RobotModel robot;
    std::uint64_t seed = 0;
    std::uint64_t n_per_scene = 0;
    std::vector<world::Scene> scenes;
    std::vector<std::vector<double>> groups;  // aligned with scenes

    std::size_t row_width() const { return robot.dof() + 5; }

    std::size_t group_index(int scene_id) const {
        for (std::size_t i = 0; i < scenes.size(); ++i)
            if (scenes[i].id == scene_id) return i;
        throw UsageError("dataset: unknown scene id " + std::to_string(scene_id));
    }

    std::size_t group_count(std::size_t g) const {
        return groups[g].size() / row_width();
    }

    const double* row(std::size_t g, std::size_t i) const {
        return groups[g].data() + i * row_width();
    }

    RawSample sample_at(std::size_t g, std::size_t i) const {
        const double* r = row(g, i);
        std::size_t n = robot.dof();
        RawSample s;
        s.q.assign(r, r + n);
        s.pose = {r[n], r[n + 1], r[n + 2]};
        s.self_col = r[n + 3] != 0.0;
        s.env_col = r[n + 4] != 0.0;
        s.scene_id = scenes[g].id;
        return s;
    }

    std::size_t total_rows() const {
        std::size_t n = 0;
        for (std::size_t g = 0; g < groups.size(); ++g) n += group_count(g);
        return n;
    }
};

/// Uniform configurations with exact labels, one group per scene. Each sample
/// draws from its own counter-derived stream, so the output is a pure function
/// of (robot, scenes, n_per_scene, seed) regardless of the worker count.
inline Dataset generate(const robot::RobotModel& robot,
                        const std::vector<world::Scene>& scenes,
                        std::uint64_t n_per_scene, std::uint64_t seed,
                        std::size_t threads = 1) {
    if (scenes.empty()) throw UsageError("generate: needs at least one scene");
    robot.validate();
    Dataset ds;
    ds.robot = robot;
    ds.seed = seed;
    ds.n_per_scene = n_per_scene;
    ds.scenes = scenes;
    ds.groups.resize(scenes.size());
    std::size_t w = ds.row_width();
    std::size_t n = robot.dof();
    for (std::size_t g = 0; g < scenes.size(); ++g) {
        auto& rows = ds.groups[g];
        rows.resize(n_per_scene * w);
        auto fill = [&, g](std::uint64_t lo, std::uint64_t hi) {
            for (std::uint64_t i = lo; i < hi; ++i) {
                rng::Rng r(rng::derive(seed, "sample",
                                       static_cast<std::uint64_t>(scenes[g].id), i));
                robot::Configuration q = robot::sample_config(robot, r);
                robot::Pose p = robot::forward_kinematics(robot, q);
                double* out = rows.data() + i * w;
                std::copy(q.begin(), q.end(), out);
                out[n] = p.x;
                out[n + 1] = p.y;
                out[n + 2] = p.theta;
                out[n + 3] = robot::self_collision(robot, q) ? 1.0 : 0.0;
                out[n + 4] = world::env_collision(robot, q, scenes[g]) ? 1.0 : 0.0;
            }
        };
        std::size_t workers = std::max<std::size_t>(1, threads);
        if (workers == 1 || n_per_scene < 2 * workers) {
            fill(0, n_per_scene);
        } else {
            std::vector<std::thread> pool;
            std::uint64_t chunk = (n_per_scene + workers - 1) / workers;
            for (std::size_t t = 0; t < workers; ++t) {
                std::uint64_t lo = t * chunk;
                std::uint64_t hi = std::min<std::uint64_t>(lo + chunk, n_per_scene);
                if (lo >= hi) break;
                pool.emplace_back(fill, lo, hi);
            }
            for (auto& th : pool) th.join();
        }
    }
    return ds;
}

/// x' = (c, flags + eps2, eps): the configuration is passed through exactly,
/// the two flags get N(0, a^2) noise and one N(0, b^2) padding coordinate is
/// appended. Output length dof + 3.
inline std::vector<double> dequantize(const RawSample& s,
                                      const DequantizationParams& dq, rng::Rng& rng) {
    dq.validate();
    std::vector<double> x(s.q.size() + 3);
    std::copy(s.q.begin(), s.q.end(), x.begin());
    std::size_t n = s.q.size();
    x[n] = (s.self_col ? 1.0 : 0.0) + dq.a * rng.gaussian();
    x[n + 1] = (s.env_col ? 1.0 : 0.0) + dq.a * rng.gaussian();
    x[n + 2] = dq.b * rng.gaussian();
    return x;
}

/// Recovers (self, env) flags from an augmented vector; the padding coordinate
/// is ignored. A coordinate exactly at the threshold decodes to false.
inline std::pair<bool, bool> decode_flags(std::span<const double> x, std::size_t dof,
                                          double threshold = 0.5) {
    if (x.size() != dof + 3)
        throw UsageError("decode_flags: expected dimension " + std::to_string(dof + 3) +
                         ", got " + std::to_string(x.size()));
    return {x[dof] > threshold, x[dof + 1] > threshold};
}

/// Without-replacement batches over an index pool; every index appears exactly
/// once per pass, the final batch may be short.
class IndexBatcher {
public:
    IndexBatcher(std::vector<std::size_t> pool, std::size_t batch, rng::Rng& rng)
        : pool_(std::move(pool)), batch_(batch) {
        if (batch_ == 0) throw UsageError("batch size must be >= 1");
        if (batch_ > pool_.size())
            throw UsageError("batch size " + std::to_string(batch_) +
                             " exceeds population " + std::to_string(pool_.size()));
        for (std::size_t i = pool_.size() - 1; i > 0; --i)
            std::swap(pool_[i], pool_[rng.uniform_int(0, i)]);
    }

    std::size_t batches() const { return (pool_.size() + batch_ - 1) / batch_; }

    bool next(std::vector<std::size_t>& out) {
        if (cursor_ >= pool_.size()) return false;
        std::size_t take = std::min(batch_, pool_.size() - cursor_);
        out.assign(pool_.begin() + cursor_, pool_.begin() + cursor_ + take);
        cursor_ += take;
        return true;
    }

private:
    std::vector<std::size_t> pool_;
    std::size_t batch_ = 0;
    std::size_t cursor_ = 0;
};

/// Batches of row indices drawn from a single scene of the dataset.
inline IndexBatcher iter_batches(const Dataset& ds, int scene_id, std::size_t batch,
                                 rng::Rng& rng) {
    std::size_t g = ds.group_index(scene_id);
    std::vector<std::size_t> pool(ds.group_count(g));
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    return IndexBatcher(std::move(pool), batch, rng);
}

// -- on-disk format ------------------------------------------------------------
// "VIIK" | u32 version | u64 text_len | header text | u32 group_count |
// per group: u64 scene_id, u64 row_count, row_count*row_width f64 (LE).

constexpr char kDatasetMagic[4] = {'V', 'I', 'I', 'K'};
constexpr std::uint32_t kDatasetVersion = 1;

inline std::string dataset_header_text(const Dataset& ds) {
    std::ostringstream os;
    os.precision(17);
    os << "format: viik-dataset\n";
    os << "seed: " << ds.seed << "\n";
    os << "n_per_scene: " << ds.n_per_scene << "\n";
    os << robot::to_text_block(ds.robot);
    os << "scene_count: " << ds.scenes.size() << "\n";
    for (const auto& s : ds.scenes) {
        os << "scene " << s.id << ' ' << world::to_string(s.clutter) << ' '
           << s.obstacles.size() << "\n";
        for (const auto& ob : s.obstacles)
            os << ob.cx << ' ' << ob.cy << ' ' << ob.r << "\n";
    }
    return os.str();
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::string buf;
    io::put_bytes(buf, kDatasetMagic, 4);
    io::put_u32(buf, kDatasetVersion);
    std::string text = dataset_header_text(ds);
    io::put_u64(buf, text.size());
    buf += text;
    io::put_u32(buf, static_cast<std::uint32_t>(ds.groups.size()));
    for (std::size_t g = 0; g < ds.groups.size(); ++g) {
        io::put_u64(buf, static_cast<std::uint64_t>(ds.scenes[g].id));
        io::put_u64(buf, ds.group_count(g));
        for (double v : ds.groups[g]) io::put_f64(buf, v);
    }
    io::write_file(path, buf);
}

namespace detail {

inline std::map<std::string, std::string> parse_kv(std::istream& in,
                                                   std::vector<world::Scene>* scenes) {
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.rfind("scene ", 0) == 0) {
            std::istringstream hs(line);
            std::string word, clutter;
            world::Scene s;
            std::size_t count = 0;
            if (!(hs >> word >> s.id >> clutter >> count))
                throw IoError("dataset: bad scene header '" + line + "'");
            s.clutter = world::clutter_from_string(clutter);
            for (std::size_t i = 0; i < count; ++i) {
                if (!std::getline(in, line))
                    throw IoError("dataset: truncated scene block");
                std::istringstream os(line);
                world::Obstacle ob;
                if (!(os >> ob.cx >> ob.cy >> ob.r))
                    throw IoError("dataset: bad obstacle line '" + line + "'");
                s.obstacles.push_back(ob);
            }
            if (scenes) scenes->push_back(std::move(s));
            continue;
        }
        auto colon = line.find(": ");
        if (colon == std::string::npos)
            throw IoError("dataset: bad header line '" + line + "'");
        kv[line.substr(0, colon)] = line.substr(colon + 2);
    }
    return kv;
}

/// Re-verifies every 100th row against the kinematics and collision oracles.
inline void spot_check(const Dataset& ds) {
    for (std::size_t g = 0; g < ds.groups.size(); ++g) {
        for (std::size_t i = 0; i < ds.group_count(g); i += 100) {
            RawSample s = ds.sample_at(g, i);
            robot::Pose p = robot::forward_kinematics(ds.robot, s.q);
            if (p.x != s.pose.x || p.y != s.pose.y || p.theta != s.pose.theta)
                throw IoError("dataset: stored pose fails re-verification (scene " +
                              std::to_string(s.scene_id) + ", row " +
                              std::to_string(i) + ")");
            if (robot::self_collision(ds.robot, s.q) != s.self_col ||
                world::env_collision(ds.robot, s.q, ds.scenes[g]) != s.env_col)
                throw IoError("dataset: stored flags fail re-verification (scene " +
                              std::to_string(s.scene_id) + ", row " +
                              std::to_string(i) + ")");
        }
    }
}

}  // namespace detail

inline Dataset load_dataset(const std::filesystem::path& path, bool verify = true) {
    std::string buf = io::read_file(path);
    io::Reader rd(buf, "dataset " + path.string());
    if (rd.str(4) != std::string(kDatasetMagic, 4))
        throw IoError("dataset " + path.string() + ": bad magic");
    std::uint32_t version = rd.u32();
    if (version != kDatasetVersion)
        throw IoError("dataset " + path.string() + ": unsupported version " +
                      std::to_string(version));
    std::string text = rd.str(rd.u64());
    Dataset ds;
    std::istringstream ts(text);
    auto kv = detail::parse_kv(ts, &ds.scenes);
    ds.robot = robot::robot_from_fields(kv.at("robot.link_lengths"),
                                        kv.at("robot.joint_limits"),
                                        kv.at("robot.link_radius"));
    ds.seed = std::stoull(kv.at("seed"));
    ds.n_per_scene = std::stoull(kv.at("n_per_scene"));
    std::uint32_t groups = rd.u32();
    if (groups != ds.scenes.size())
        throw IoError("dataset: group count does not match scene table");
    std::size_t w = ds.row_width();
    ds.groups.resize(groups);
    for (std::uint32_t g = 0; g < groups; ++g) {
        std::uint64_t scene_id = rd.u64();
        if (scene_id != static_cast<std::uint64_t>(ds.scenes[g].id))
            throw IoError("dataset: group/scene order mismatch");
        std::uint64_t count = rd.u64();
        ds.groups[g].resize(count * w);
        for (double& v : ds.groups[g]) v = rd.f64();
    }
    if (rd.remaining() != 0) throw IoError("dataset: trailing bytes");
    if (verify) detail::spot_check(ds);
    return ds;
}

}  // namespace viik::data
