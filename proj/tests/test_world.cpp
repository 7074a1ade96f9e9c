#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "viik/world.hpp"

using namespace viik;
using robot::RobotModel;
using world::Clutter;
using world::Scene;

TEST_CASE("empty scene never collides", "[world]") {
    RobotModel r = RobotModel::default_model();
    Scene empty;
    rng::Rng rng(3);
    for (int i = 0; i < 200; ++i)
        REQUIRE_FALSE(world::env_collision(r, robot::sample_config(r, rng), empty));
}

TEST_CASE("obstacle over link 1 hits the extended arm", "[world]") {
    RobotModel r = RobotModel::default_model();
    Scene s;
    s.obstacles.push_back({0.2, 0.0, 0.45});
    REQUIRE(world::env_collision(r, {0, 0, 0, 0}, s));
}

TEST_CASE("env collision agrees with dense sampling oracle", "[world][oracle]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(43);
    const double margin = 1e-4;
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        Scene s = world::random_scene(rng.next_u64(), Clutter::medium, r.reach(),
                                      r.link_radius, 0);
        robot::Configuration q = robot::sample_config(r, rng);
        double clearance = world::env_clearance(r, q, s);
        if (std::abs(clearance) <= margin) continue;
        ++checked;
        REQUIRE(world::env_collision(r, q, s) ==
                (oracle::dense_env_clearance(r, q, s) < 0.0));
    }
    REQUIRE(checked > 9000);
}

TEST_CASE("env collision monotone in obstacle radius", "[world][property]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(47);
    for (int i = 0; i < 2000; ++i) {
        Scene s = world::random_scene(rng.next_u64(), Clutter::low, r.reach(),
                                      r.link_radius, 0);
        robot::Configuration q = robot::sample_config(r, rng);
        bool before = world::env_collision(r, q, s);
        for (auto& ob : s.obstacles) ob.r += rng.uniform(0.0, 0.1);
        if (before) REQUIRE(world::env_collision(r, q, s));
    }
}

TEST_CASE("rasterize empty and full scenes", "[world]") {
    Scene empty;
    world::OccupancyImage img = world::rasterize(empty, 1.0);
    REQUIRE(img.pixels == std::vector<double>(32 * 32, 0.0));

    Scene full;
    full.obstacles.push_back({0.0, 0.0, 10.0});
    img = world::rasterize(full, 1.0);
    REQUIRE(img.pixels == std::vector<double>(32 * 32, 1.0));
}

TEST_CASE("raster area fraction of a centered disc", "[world][oracle]") {
    Scene s;
    double R = 1.0;
    s.obstacles.push_back({0.0, 0.0, R / 2});
    world::OccupancyImage img = world::rasterize(s, R, 64, 64);
    double ones = 0;
    for (double v : img.pixels) ones += v;
    double frac = ones / (64.0 * 64.0);
    // disc area / square area = pi/16; allow a one-pixel boundary band
    double band = 2.0 * M_PI * (R / 2) * (2.0 * R / 64) / (4.0 * R * R);
    REQUIRE(std::abs(frac - M_PI / 16.0) < band);
}

TEST_CASE("rasterize is deterministic", "[world]") {
    RobotModel r = RobotModel::default_model();
    Scene s = world::random_scene(99, Clutter::high, r.reach(), r.link_radius, 4);
    auto a = world::rasterize(s, r.reach());
    auto b = world::rasterize(s, r.reach());
    REQUIRE(a.pixels == b.pixels);
}

TEST_CASE("random_scene determinism and counts", "[world]") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
        Scene a = world::random_scene(seed, Clutter::low, 1.0, 0.02, 7);
        Scene b = world::random_scene(seed, Clutter::low, 1.0, 0.02, 7);
        REQUIRE(a.obstacles.size() == b.obstacles.size());
        for (std::size_t i = 0; i < a.obstacles.size(); ++i) {
            REQUIRE(a.obstacles[i].cx == b.obstacles[i].cx);
            REQUIRE(a.obstacles[i].cy == b.obstacles[i].cy);
            REQUIRE(a.obstacles[i].r == b.obstacles[i].r);
        }
        REQUIRE(a.obstacles.size() >= 2);
        REQUIRE(a.obstacles.size() <= 3);
    }
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        REQUIRE(world::random_scene(seed, Clutter::medium, 1.0, 0.02, 0)
                    .obstacles.size() >= 5);
        REQUIRE(world::random_scene(seed, Clutter::medium, 1.0, 0.02, 0)
                    .obstacles.size() <= 7);
        std::size_t high =
            world::random_scene(seed, Clutter::high, 1.0, 0.02, 0).obstacles.size();
        REQUIRE(high >= 9);
        REQUIRE(high <= 12);
    }
}

TEST_CASE("scene obstacles clear the base", "[world][property]") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Scene s = world::random_scene(seed, Clutter::high, 1.0, 0.02, 0);
        for (const auto& ob : s.obstacles)
            REQUIRE(std::hypot(ob.cx, ob.cy) > ob.r + 0.02);
    }
}

TEST_CASE("high clutter collides more than low clutter", "[world][oracle]") {
    RobotModel r = RobotModel::default_model();
    auto rate = [&](Clutter c, std::uint64_t seed) {
        rng::Rng rng(seed);
        int hits = 0;
        const int n = 100000;
        Scene s = world::random_scene(rng::derive(seed, "scene"), c, r.reach(),
                                      r.link_radius, 0);
        for (int i = 0; i < n; ++i)
            if (world::env_collision(r, robot::sample_config(r, rng), s)) ++hits;
        return static_cast<double>(hits) / n;
    };
    // average over a few scene draws per level
    double low = 0, high = 0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        low += rate(Clutter::low, 100 + s);
        high += rate(Clutter::high, 200 + s);
    }
    REQUIRE(high > low);
}

TEST_CASE("scene files round-trip byte-identically", "[world]") {
    Scene s = world::random_scene(5, Clutter::medium, 1.0, 0.02, 3);
    auto path = std::filesystem::temp_directory_path() / "viik_scene_test.scene";
    world::save_scene(path, s);
    Scene loaded = world::load_scene(path);
    REQUIRE(loaded.id == s.id);
    REQUIRE(loaded.clutter == s.clutter);
    REQUIRE(loaded.obstacles.size() == s.obstacles.size());
    for (std::size_t i = 0; i < s.obstacles.size(); ++i) {
        REQUIRE(loaded.obstacles[i].cx == s.obstacles[i].cx);
        REQUIRE(loaded.obstacles[i].cy == s.obstacles[i].cy);
        REQUIRE(loaded.obstacles[i].r == s.obstacles[i].r);
    }
    world::save_scene(path, loaded);  // second save must be byte-identical
    REQUIRE(world::scene_to_text(loaded) == world::scene_to_text(s));
    std::filesystem::remove(path);
}

TEST_CASE("bad clutter label", "[world]") {
    REQUIRE_THROWS_AS(world::clutter_from_string("dense"), UsageError);
}
