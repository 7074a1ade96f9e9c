#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "viik/dataset.hpp"

using namespace viik;
using data::Dataset;
using robot::RobotModel;
using world::Scene;

namespace {

std::vector<Scene> two_scenes() {
    RobotModel r = RobotModel::default_model();
    return {world::random_scene(100, world::Clutter::medium, r.reach(), r.link_radius, 0),
            world::random_scene(101, world::Clutter::low, r.reach(), r.link_radius, 1)};
}

std::filesystem::path tmp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("empty dataset still carries a full header", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    Dataset ds = data::generate(r, two_scenes(), 0, 5);
    auto path = tmp_file("viik_empty.viik");
    data::save_dataset(path, ds);
    Dataset loaded = data::load_dataset(path);
    REQUIRE(loaded.scenes.size() == 2);
    REQUIRE(loaded.total_rows() == 0);
    REQUIRE(loaded.robot.link_lengths == r.link_lengths);
    REQUIRE(loaded.seed == 5);
    std::filesystem::remove(path);
}

TEST_CASE("empty scene labels no environment collisions", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    Scene empty;
    empty.id = 9;
    Dataset ds = data::generate(r, {empty}, 500, 6);
    for (std::size_t i = 0; i < 500; ++i)
        REQUIRE_FALSE(ds.sample_at(0, i).env_col);
}

TEST_CASE("label rates match an independent re-estimate", "[dataset][oracle]") {
    RobotModel r = RobotModel::default_model();
    auto scenes = two_scenes();
    const std::uint64_t n = 20000;
    Dataset ds = data::generate(r, scenes, n, 7);
    for (std::size_t g = 0; g < scenes.size(); ++g) {
        double stored = 0;
        for (std::size_t i = 0; i < n; ++i) stored += ds.sample_at(g, i).env_col;
        stored /= n;
        rng::Rng rng(777 + g);
        double fresh = 0;
        for (std::size_t i = 0; i < n; ++i)
            fresh += world::env_collision(r, robot::sample_config(r, rng), scenes[g]);
        fresh /= n;
        double p = (stored + fresh) / 2;
        double se = std::sqrt(std::max(p * (1 - p), 1e-9) * 2.0 / n);
        REQUIRE(std::abs(stored - fresh) < 3 * se + 1e-12);
    }
}

TEST_CASE("generation is independent of the worker count", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    auto scenes = two_scenes();
    Dataset a = data::generate(r, scenes, 1000, 3, 1);
    Dataset b = data::generate(r, scenes, 1000, 3, 4);
    REQUIRE(a.groups == b.groups);
}

TEST_CASE("dequantize without noise is exact", "[dataset]") {
    data::RawSample s;
    s.q = {0.1, -0.2, 0.3, 2.9};
    s.self_col = true;
    s.env_col = false;
    rng::Rng rng(8);
    auto x = data::dequantize(s, {0.0, 0.0}, rng);
    REQUIRE(x == std::vector<double>{0.1, -0.2, 0.3, 2.9, 1.0, 0.0, 0.0});
}

TEST_CASE("augmented dimension is dof + 3", "[dataset]") {
    data::RawSample s;
    s.q = {0, 0, 0, 0};
    rng::Rng rng(9);
    REQUIRE(data::dequantize(s, {0.1, 0.1}, rng).size() == 7);
}

TEST_CASE("flag noise has the configured magnitude", "[dataset][oracle]") {
    data::RawSample s;
    s.q = {0, 0, 0, 0};
    s.self_col = true;
    s.env_col = false;
    rng::Rng rng(10);
    const int n = 100000;
    double sq = 0;
    for (int i = 0; i < n; ++i) {
        auto x = data::dequantize(s, {0.1, 0.1}, rng);
        double d = x[4] - 1.0;
        sq += d * d;
        REQUIRE(x[0] == 0.0);  // configuration coordinates are untouched
    }
    double std_hat = std::sqrt(sq / n);
    REQUIRE(std::abs(std_hat - 0.1) < 3 * 0.1 / std::sqrt(2.0 * n));
}

TEST_CASE("decode_flags thresholding", "[dataset]") {
    std::vector<double> x = {0, 0, 0, 0, 0.93, 0.07, 0.4};
    auto [sc, ec] = data::decode_flags(x, 4);
    REQUIRE(sc);
    REQUIRE_FALSE(ec);
    x[4] = 0.5;  // exactly at the threshold decodes to false
    REQUIRE_FALSE(data::decode_flags(x, 4).first);
    REQUIRE_THROWS_AS(data::decode_flags(x, 5), UsageError);
}

TEST_CASE("decode recovers flags through dequantization noise", "[dataset][oracle]") {
    data::RawSample s;
    s.q = {0, 0, 0, 0};
    rng::Rng rng(11);
    rng::Rng flip(12);
    int errors = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        s.self_col = flip.uniform() < 0.5;
        s.env_col = flip.uniform() < 0.5;
        auto x = data::dequantize(s, {0.1, 0.1}, rng);
        auto [sc, ec] = data::decode_flags(x, 4);
        errors += (sc != s.self_col) + (ec != s.env_col);
    }
    REQUIRE(errors == 0);  // 5-sigma separation; expected error count 0.02
}

TEST_CASE("batches cover each sample exactly once per epoch", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    Scene s = two_scenes()[0];
    Dataset ds = data::generate(r, {s}, 1000, 13);
    rng::Rng rng(14);
    auto it = data::iter_batches(ds, s.id, 64, rng);
    std::vector<int> seen(1000, 0);
    std::vector<std::size_t> batch;
    std::size_t batches = 0;
    while (it.next(batch)) {
        ++batches;
        REQUIRE(batch.size() <= 64);
        for (std::size_t idx : batch) ++seen[idx];
    }
    REQUIRE(batches == it.batches());
    REQUIRE(batches == 16);  // ceil(1000/64)
    for (int c : seen) REQUIRE(c == 1);
}

TEST_CASE("batch size larger than the population is rejected", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    Scene s = two_scenes()[0];
    Dataset ds = data::generate(r, {s}, 10, 15);
    rng::Rng rng(16);
    REQUIRE_THROWS_AS(data::iter_batches(ds, s.id, 11, rng), UsageError);
    REQUIRE_THROWS_AS(data::iter_batches(ds, 42, 4, rng), UsageError);
}

TEST_CASE("dataset files are byte-identical across runs", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    auto scenes = two_scenes();
    auto pa = tmp_file("viik_d1.viik"), pb = tmp_file("viik_d2.viik");
    data::save_dataset(pa, data::generate(r, scenes, 500, 17));
    data::save_dataset(pb, data::generate(r, scenes, 500, 17));
    REQUIRE(io::read_file(pa) == io::read_file(pb));
    std::filesystem::remove(pa);
    std::filesystem::remove(pb);
}

TEST_CASE("round trip preserves every row bit-exactly", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    auto scenes = two_scenes();
    Dataset ds = data::generate(r, scenes, 300, 18);
    auto path = tmp_file("viik_rt.viik");
    data::save_dataset(path, ds);
    Dataset loaded = data::load_dataset(path);
    REQUIRE(loaded.groups == ds.groups);
    REQUIRE(loaded.n_per_scene == ds.n_per_scene);
    std::filesystem::remove(path);
}

TEST_CASE("corrupted labels fail the load-time spot check", "[dataset]") {
    RobotModel r = RobotModel::default_model();
    auto scenes = two_scenes();
    Dataset ds = data::generate(r, scenes, 200, 19);
    // flip the self-collision flag of a checked row (multiples of 100)
    ds.groups[0][r.dof() + 3] = ds.groups[0][r.dof() + 3] == 1.0 ? 0.0 : 1.0;
    auto path = tmp_file("viik_bad.viik");
    data::save_dataset(path, ds);
    REQUIRE_THROWS_AS(data::load_dataset(path), IoError);
    REQUIRE_NOTHROW(data::load_dataset(path, /*verify=*/false));
    std::filesystem::remove(path);
}

TEST_CASE("bad magic is a format error", "[dataset]") {
    auto path = tmp_file("viik_magic.viik");
    io::write_file(path, "NOPE....rest");
    REQUIRE_THROWS_AS(data::load_dataset(path), IoError);
    std::filesystem::remove(path);
}
