// Command-line frontend for the whole workflow: scene and dataset generation,
// training, sampling, evaluation, the target-distribution ablation and the
// runtime benchmark. Every subcommand is deterministic under --seed.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "viik/evaluator.hpp"

namespace fs = std::filesystem;
using namespace viik;

namespace {

std::vector<world::Scene> load_scene_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".scene") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .scene files in " + dir.string());
    std::vector<world::Scene> scenes;
    for (const auto& f : files) scenes.push_back(world::load_scene(f));
    return scenes;
}

robot::RobotModel robot_from_flags(const std::vector<double>& links,
                                   double joint_limit, double link_radius) {
    robot::RobotModel r;
    r.link_lengths = links;
    r.joint_limits.assign(links.size(), {-joint_limit, joint_limit});
    r.link_radius = link_radius;
    r.validate();
    return r;
}

std::vector<std::uint64_t> parse_u64_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoull(item));
    return out;
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

void add_train_flags(CLI::App* cmd, train::TrainConfig& cfg, std::string& mode) {
    cmd->add_option("--mode", mode, "target distribution: p1, p2 or p3")
        ->default_val("p3");
    cmd->add_option("--epochs", cfg.epochs, "training epochs")->default_val(60);
    cmd->add_option("--batch", cfg.batch_size, "batch size")->default_val(256);
    cmd->add_option("--lr", cfg.learning_rate, "initial learning rate")
        ->default_val(3e-4);
    cmd->add_option("--gamma", cfg.gamma, "per-epoch learning-rate multiplier")
        ->default_val(0.99);
    cmd->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay")
        ->default_val(1e-5);
    cmd->add_option("--deq-a", cfg.deq.a, "flag dequantization noise std")
        ->default_val(0.1);
    cmd->add_option("--deq-b", cfg.deq.b, "padding noise std")->default_val(0.1);
    cmd->add_option("--blocks", cfg.flow_blocks, "flow blocks")->default_val(12);
    cmd->add_option("--hidden", cfg.flow_hidden, "coupling net width")
        ->default_val(128);
    cmd->add_option("--latent-dim", cfg.latent_dim, "scene latent length")
        ->default_val(8);
    cmd->add_option("--latent-blocks", cfg.latent_blocks, "latent flow blocks")
        ->default_val(4);
    cmd->add_option("--latent-hidden", cfg.latent_hidden, "latent coupling width")
        ->default_val(64);
    cmd->add_option("--raster-res", cfg.raster_res, "occupancy raster resolution")
        ->default_val(32);
    cmd->add_option("--grad-clip", cfg.grad_clip, "gradient norm clip (0 disables)")
        ->default_val(10.0);
    cmd->add_option("--raster-noise", cfg.raster_noise,
                    "train-time raster noise std (0 disables)")
        ->default_val(0.0);
    cmd->add_flag("--pose-mean", cfg.encoder_pose_mean,
                  "feed the mean batch pose to the encoder instead of the first");
}

train::Checkpoint run_training(const train::TrainConfig& cfg, const data::Dataset& ds,
                               const fs::path& out, const fs::path& loss_csv,
                               const std::vector<std::uint64_t>& snapshots,
                               const fs::path& resume) {
    train::TrainHooks hooks;
    hooks.loss_csv = loss_csv;
    hooks.snapshot_epochs = snapshots;
    if (!snapshots.empty()) hooks.snapshot_stem = out;
    fs::path crash = out;
    crash += ".crash.ckpt";
    hooks.crash_path = crash;
    hooks.on_epoch = [](std::uint64_t epoch, double mean_loss) {
        std::cerr << "epoch " << epoch << " mean loss " << mean_loss << "\n";
    };
    train::Checkpoint ckpt;
    if (!resume.empty()) {
        train::Checkpoint prev = train::load_checkpoint(resume);
        ckpt = train::train(cfg, ds, hooks, &prev);
    } else {
        ckpt = train::train(cfg, ds, hooks);
    }
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    train::save_checkpoint(out, ckpt);
    return ckpt;
}

void write_eval_csv(const fs::path& out, const std::vector<eval::EvalRow>& rows) {
    auto f = open_out(out);
    f << eval::metrics_csv_header() << "\n";
    for (const auto& r : rows) f << eval::metrics_csv_line(r) << "\n";
}

std::vector<eval::EvalRow> eval_model(const eval::LoadedModel& model,
                                      const std::vector<world::Scene>& scenes,
                                      std::size_t poses, std::size_t k,
                                      std::uint64_t seed, bool test_rows) {
    std::vector<eval::EvalRow> rows;
    for (const auto& scene : scenes) {
        rows.push_back(eval::evaluate_scene(model, scene, poses, k, seed));
        if (test_rows)
            rows.push_back(
                eval::test_set_row(model.ckpt.robot, scene, poses * k, seed));
    }
    return rows;
}

int run(int argc, char** argv) {
    CLI::App app{"Amortized inverse kinematics with fused collision labels"};
    app.require_subcommand(1);

    // gen-scenes -----------------------------------------------------------
    auto* gen_scenes = app.add_subcommand("gen-scenes", "generate procedural scenes");
    std::size_t gs_count = 8;
    std::string gs_clutter = "medium";
    std::uint64_t gs_seed = 1;
    fs::path gs_out = "scenes";
    double gs_reach = 1.0, gs_clearance = 0.02;
    gen_scenes->add_option("--count", gs_count, "number of scenes")->default_val(8);
    gen_scenes->add_option("--clutter", gs_clutter, "low, medium or high")
        ->default_val("medium");
    gen_scenes->add_option("--seed", gs_seed, "master seed")->default_val(1);
    gen_scenes->add_option("--out", gs_out, "output directory")->default_val("scenes");
    gen_scenes->add_option("--reach", gs_reach, "workspace radius")->default_val(1.0);
    gen_scenes
        ->add_option("--base-clearance", gs_clearance, "keep-out radius at the base")
        ->default_val(0.02);
    gen_scenes->callback([&] {
        if (gs_count < 1) throw UsageError("gen-scenes: count must be >= 1");
        world::Clutter clutter = world::clutter_from_string(gs_clutter);
        fs::create_directories(gs_out);
        std::ostringstream manifest;
        manifest << "file,id,clutter,obstacles\n";
        for (std::size_t i = 0; i < gs_count; ++i) {
            world::Scene s =
                world::random_scene(rng::derive(gs_seed, "scene", i), clutter, gs_reach,
                                    gs_clearance, static_cast<int>(i));
            char name[32];
            std::snprintf(name, sizeof name, "scene_%03zu.scene", i);
            world::save_scene(gs_out / name, s);
            manifest << name << ',' << s.id << ',' << world::to_string(s.clutter) << ','
                     << s.obstacles.size() << "\n";
        }
        open_out(gs_out / "manifest.csv") << manifest.str();
    });

    // gen-data -------------------------------------------------------------
    auto* gen_data = app.add_subcommand("gen-data", "generate a labeled dataset");
    fs::path gd_scenes, gd_out = "data.viik";
    std::uint64_t gd_n = 50000, gd_seed = 1;
    std::vector<double> gd_links = {0.4, 0.3, 0.2, 0.1};
    double gd_limit = 2.9, gd_radius = 0.02;
    gen_data->add_option("--scenes", gd_scenes, "scene directory")->required();
    gen_data->add_option("--n-per-scene", gd_n, "samples per scene")
        ->default_val(50000);
    gen_data->add_option("--seed", gd_seed, "master seed")->default_val(1);
    gen_data->add_option("--out", gd_out, "output file")->default_val("data.viik");
    gen_data->add_option("--links", gd_links, "link lengths in meters");
    gen_data->add_option("--joint-limit", gd_limit, "symmetric joint limit (rad)")
        ->default_val(2.9);
    gen_data->add_option("--link-radius", gd_radius, "capsule half-width (m)")
        ->default_val(0.02);
    std::size_t gd_threads = std::max(1u, std::thread::hardware_concurrency());
    gen_data->add_option("--threads", gd_threads, "worker threads for generation");
    gen_data->callback([&] {
        auto scenes = load_scene_dir(gd_scenes);
        auto robot = robot_from_flags(gd_links, gd_limit, gd_radius);
        data::Dataset ds = data::generate(robot, scenes, gd_n, gd_seed, gd_threads);
        if (gd_out.has_parent_path()) fs::create_directories(gd_out.parent_path());
        data::save_dataset(gd_out, ds);
    });

    // train ------------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "optimize a model on a dataset");
    fs::path tr_data, tr_out = "model.ckpt", tr_loss_csv, tr_resume;
    std::string tr_mode = "p3", tr_snapshots;
    train::TrainConfig tr_cfg;
    train_cmd->add_option("--data", tr_data, "dataset file")->required();
    train_cmd->add_option("--out", tr_out, "checkpoint path")->default_val("model.ckpt");
    train_cmd->add_option("--seed", tr_cfg.seed, "master seed")->default_val(1);
    train_cmd->add_option("--loss-csv", tr_loss_csv, "per-step loss curve");
    train_cmd->add_option("--resume", tr_resume, "checkpoint to continue from");
    train_cmd->add_option("--snapshot-at", tr_snapshots,
                          "comma-separated epoch counts to snapshot at");
    add_train_flags(train_cmd, tr_cfg, tr_mode);
    train_cmd->callback([&] {
        tr_cfg.mode = train::mode_from_string(tr_mode);
        data::Dataset ds = data::load_dataset(tr_data);
        run_training(tr_cfg, ds, tr_out, tr_loss_csv,
                     tr_snapshots.empty() ? std::vector<std::uint64_t>{}
                                          : parse_u64_list(tr_snapshots),
                     tr_resume);
    });

    // sample ------------------------------------------------------------------
    auto* sample_cmd = app.add_subcommand("sample", "draw configurations for a pose");
    fs::path sm_ckpt, sm_scene, sm_out = "samples.csv";
    std::size_t sm_k = 1000;
    std::uint64_t sm_seed = 1;
    std::vector<double> sm_pose;
    bool sm_resample = false;
    sample_cmd->add_option("--ckpt", sm_ckpt, "checkpoint")->required();
    sample_cmd->add_option("--scene", sm_scene, "scene file")->required();
    sample_cmd->add_option("--k", sm_k, "number of draws")->default_val(1000);
    sample_cmd->add_option("--seed", sm_seed, "master seed")->default_val(1);
    sample_cmd->add_option("--out", sm_out, "output CSV")->default_val("samples.csv");
    sample_cmd->add_option("--pose", sm_pose,
                           "target pose x y theta (default: pose of a random "
                           "reachable configuration)");
    sample_cmd->add_flag("--resample-latent", sm_resample,
                         "draw a fresh scene latent per sample");
    sample_cmd->callback([&] {
        auto model = eval::LoadedModel::load(sm_ckpt);
        world::Scene scene = world::load_scene(sm_scene);
        rng::Rng rng(rng::derive(sm_seed, "sample-cmd"));
        robot::Pose target;
        if (sm_pose.empty()) {
            robot::Configuration q = robot::sample_config(model.ckpt.robot, rng);
            target = robot::forward_kinematics(model.ckpt.robot, q);
        } else if (sm_pose.size() == 3) {
            target = {sm_pose[0], sm_pose[1], robot::wrap_angle(sm_pose[2])};
        } else {
            throw UsageError("--pose needs exactly three values");
        }
        eval::SolutionSet ss =
            eval::solve_flow(model, target, scene, sm_k, rng, sm_resample);
        auto f = open_out(sm_out);
        std::size_t dof = model.ckpt.robot.dof();
        for (std::size_t j = 1; j <= dof; ++j) f << 'q' << j << ',';
        f << "dec_self,dec_env,true_self,true_env,pos_err_mm,ang_err_deg\n";
        f << std::fixed << std::setprecision(9);
        for (std::size_t i = 0; i < ss.size(); ++i) {
            for (double v : ss.configs[i]) f << v << ',';
            if (!ss.decoded.empty())
                f << ss.decoded[i][0] << ',' << ss.decoded[i][1] << ',';
            else
                f << ",,";
            f << ss.truth[i][0] << ',' << ss.truth[i][1] << ','
              << eval::position_error(model.ckpt.robot, ss.configs[i], target) * 1000.0
              << ','
              << eval::angular_error(model.ckpt.robot, ss.configs[i], target) * 180.0 /
                     M_PI
              << "\n";
        }
    });

    // eval --------------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "per-scene metrics for a checkpoint");
    fs::path ev_ckpt, ev_scenes, ev_data, ev_out = "metrics.csv";
    std::size_t ev_poses = 100, ev_k = 100;
    std::uint64_t ev_seed = 1;
    eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
    eval_cmd->add_option("--scenes", ev_scenes, "scene directory");
    eval_cmd->add_option("--data", ev_data, "dataset file (use its scene table)");
    eval_cmd->add_option("--poses", ev_poses, "targets per scene")->default_val(100);
    eval_cmd->add_option("--k", ev_k, "draws per target")->default_val(100);
    eval_cmd->add_option("--seed", ev_seed, "master seed")->default_val(1);
    eval_cmd->add_option("--out", ev_out, "output CSV")->default_val("metrics.csv");
    eval_cmd->callback([&] {
        auto model = eval::LoadedModel::load(ev_ckpt);
        std::vector<world::Scene> scenes;
        if (!ev_data.empty())
            scenes = data::load_dataset(ev_data, false).scenes;
        else if (!ev_scenes.empty())
            scenes = load_scene_dir(ev_scenes);
        else
            throw UsageError("eval: pass --scenes or --data");
        write_eval_csv(ev_out, eval_model(model, scenes, ev_poses, ev_k, ev_seed, true));
    });

    // ablate --------------------------------------------------------------------
    auto* ablate_cmd =
        app.add_subcommand("ablate", "compare target distributions on one dataset");
    fs::path ab_data, ab_out = "ablate.csv", ab_workdir = "ablate_work";
    std::string ab_modes = "p2,p3", ab_mode_unused;
    std::size_t ab_poses = 100, ab_k = 100;
    std::uint64_t ab_seed = 1;
    std::map<std::string, fs::path> ab_ckpts;
    fs::path ab_ckpt_p1, ab_ckpt_p2, ab_ckpt_p3;
    train::TrainConfig ab_cfg;
    ablate_cmd->add_option("--data", ab_data, "dataset file")->required();
    ablate_cmd->add_option("--modes", ab_modes, "comma-separated modes to compare")
        ->default_val("p2,p3");
    ablate_cmd->add_option("--out", ab_out, "output CSV")->default_val("ablate.csv");
    ablate_cmd->add_option("--workdir", ab_workdir, "where trained checkpoints go")
        ->default_val("ablate_work");
    ablate_cmd->add_option("--poses", ab_poses, "targets per scene")->default_val(100);
    ablate_cmd->add_option("--k", ab_k, "draws per target")->default_val(100);
    ablate_cmd->add_option("--seed", ab_seed, "master seed")->default_val(1);
    ablate_cmd->add_option("--ckpt-p1", ab_ckpt_p1, "reuse a trained p1 checkpoint");
    ablate_cmd->add_option("--ckpt-p2", ab_ckpt_p2, "reuse a trained p2 checkpoint");
    ablate_cmd->add_option("--ckpt-p3", ab_ckpt_p3, "reuse a trained p3 checkpoint");
    add_train_flags(ablate_cmd, ab_cfg, ab_mode_unused);
    ablate_cmd->callback([&] {
        ab_ckpts = {{"p1", ab_ckpt_p1}, {"p2", ab_ckpt_p2}, {"p3", ab_ckpt_p3}};
        data::Dataset ds = data::load_dataset(ab_data);
        std::vector<std::string> modes;
        {
            std::stringstream ss(ab_modes);
            std::string item;
            while (std::getline(ss, item, ',')) modes.push_back(item);
        }
        std::vector<std::vector<eval::EvalRow>> per_mode;
        for (const auto& mode : modes) {
            fs::path ckpt_path = ab_ckpts.at(mode);
            if (ckpt_path.empty()) {
                train::TrainConfig cfg = ab_cfg;
                cfg.seed = ab_seed;
                cfg.mode = train::mode_from_string(mode);
                fs::create_directories(ab_workdir);
                ckpt_path = ab_workdir / (mode + ".ckpt");
                std::cerr << "ablate: training mode " << mode << "\n";
                run_training(cfg, ds, ckpt_path, ab_workdir / (mode + "_loss.csv"), {},
                             {});
            }
            auto model = eval::LoadedModel::load(ckpt_path);
            per_mode.push_back(
                eval_model(model, ds.scenes, ab_poses, ab_k, ab_seed, false));
        }
        std::vector<eval::EvalRow> rows;
        for (std::size_t s = 0; s < ds.scenes.size(); ++s) {
            for (auto& mode_rows : per_mode) rows.push_back(mode_rows[s]);
            rows.push_back(
                eval::test_set_row(ds.robot, ds.scenes[s], ab_poses * ab_k, ab_seed));
        }
        write_eval_csv(ab_out, rows);
    });

    // bench ----------------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand(
        "bench",
        "runtime of flow sampling vs solve-then-check (always single-threaded)");
    fs::path bn_ckpt, bn_scene, bn_out = "bench.csv";
    std::string bn_klist = "10,20,40,100,300,1000";
    std::size_t bn_trials = 5;
    double bn_tol = 1e-3;
    std::uint64_t bn_seed = 1;
    bench_cmd->add_option("--ckpt", bn_ckpt, "checkpoint")->required();
    bench_cmd->add_option("--scene", bn_scene, "scene file")->required();
    bench_cmd->add_option("--k-list", bn_klist, "solution counts to time")
        ->default_val("10,20,40,100,300,1000");
    bench_cmd->add_option("--trials", bn_trials, "queries per K")->default_val(5);
    bench_cmd->add_option("--tol", bn_tol, "classical solver tolerance")
        ->default_val(1e-3);
    bench_cmd->add_option("--seed", bn_seed, "master seed")->default_val(1);
    bench_cmd->add_option("--out", bn_out, "output CSV")->default_val("bench.csv");
    bench_cmd->callback([&] {
        auto model = eval::LoadedModel::load(bn_ckpt);
        world::Scene scene = world::load_scene(bn_scene);
        std::vector<std::size_t> ks;
        for (auto v : parse_u64_list(bn_klist)) ks.push_back(v);
        auto rows = eval::bench_runtime(model, scene, ks, bn_trials, bn_tol, bn_seed);
        auto f = open_out(bn_out);
        f << eval::bench_csv_header() << "\n";
        for (const auto& r : rows) f << eval::bench_csv_line(r) << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
