#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "viik/robot.hpp"

using namespace viik;
using robot::Configuration;
using robot::RobotModel;

TEST_CASE("fully extended arm", "[robot]") {
    RobotModel r = RobotModel::default_model();
    robot::Pose p = robot::forward_kinematics(r, {0, 0, 0, 0});
    REQUIRE(p.x == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(p.y == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(p.theta == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("quarter-turn at the base", "[robot]") {
    RobotModel r = RobotModel::default_model();
    robot::Pose p = robot::forward_kinematics(r, {M_PI / 2, 0, 0, 0});
    REQUIRE(p.x == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(p.y == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(p.theta == Catch::Approx(M_PI / 2).margin(1e-12));
}

TEST_CASE("fk matches transform-composition oracle", "[robot][oracle]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(13);
    for (int i = 0; i < 2000; ++i) {
        Configuration q = robot::sample_config(r, rng);
        robot::Pose a = robot::forward_kinematics(r, q);
        robot::Pose b = oracle::fk_transforms(r, q);
        REQUIRE(std::abs(a.x - b.x) < 1e-12);
        REQUIRE(std::abs(a.y - b.y) < 1e-12);
        REQUIRE(std::abs(robot::wrap_angle(a.theta - b.theta)) < 1e-12);
    }
}

TEST_CASE("fk dimension mismatch", "[robot]") {
    RobotModel r = RobotModel::default_model();
    REQUIRE_THROWS_AS(robot::forward_kinematics(r, {0, 0}), UsageError);
    REQUIRE_THROWS_AS(robot::jacobian(r, {0, 0, 0}), UsageError);
}

TEST_CASE("reach bound holds everywhere", "[robot][property]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(17);
    for (int i = 0; i < 5000; ++i) {
        Configuration q = robot::sample_config(r, rng);
        robot::Pose p = robot::forward_kinematics(r, q);
        REQUIRE(std::hypot(p.x, p.y) <= r.reach() + 1e-12);
    }
}

TEST_CASE("jacobian structure at zero", "[robot]") {
    RobotModel r = RobotModel::default_model();
    auto j = robot::jacobian(r, {0, 0, 0, 0});
    std::size_t n = r.dof();
    // dx/dq = 0 for the extended arm, dy/dq_k = sum of lengths from k on
    for (std::size_t k = 0; k < n; ++k) {
        REQUIRE(j[0 * n + k] == Catch::Approx(0.0).margin(1e-15));
        double tail = 0;
        for (std::size_t i = k; i < n; ++i) tail += r.link_lengths[i];
        REQUIRE(j[1 * n + k] == Catch::Approx(tail).margin(1e-15));
        REQUIRE(j[2 * n + k] == 1.0);
    }
}

TEST_CASE("jacobian third row is ones for any q", "[robot]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(19);
    for (int i = 0; i < 50; ++i) {
        Configuration q = robot::sample_config(r, rng);
        auto j = robot::jacobian(r, q);
        for (std::size_t k = 0; k < r.dof(); ++k) REQUIRE(j[2 * r.dof() + k] == 1.0);
    }
}

TEST_CASE("jacobian matches finite differences of fk", "[robot][oracle]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(23);
    std::size_t n = r.dof();
    for (int trial = 0; trial < 1000; ++trial) {
        Configuration q = robot::sample_config(r, rng);
        auto j = robot::jacobian(r, q);
        const double h = 1e-6;
        for (std::size_t k = 0; k < n; ++k) {
            Configuration qp = q, qm = q;
            qp[k] += h;
            qm[k] -= h;
            robot::Pose pp = robot::forward_kinematics(r, qp);
            robot::Pose pm = robot::forward_kinematics(r, qm);
            REQUIRE(oracle::close(j[0 * n + k], (pp.x - pm.x) / (2 * h), 1e-5, 1e-7));
            REQUIRE(oracle::close(j[1 * n + k], (pp.y - pm.y) / (2 * h), 1e-5, 1e-7));
            double dth = robot::wrap_angle(pp.theta - pm.theta) / (2 * h);
            REQUIRE(oracle::close(j[2 * n + k], dth, 1e-5, 1e-7));
        }
    }
}

TEST_CASE("straight arm does not self-collide", "[robot]") {
    RobotModel r = RobotModel::default_model();
    REQUIRE_FALSE(robot::self_collision(r, {0, 0, 0, 0}));
}

TEST_CASE("folded arm self-collides", "[robot]") {
    RobotModel r = RobotModel::default_model();
    // Fold joints 2..4 by pi: the later links lie back over link 1.
    REQUIRE(robot::self_collision(r, {0.0, M_PI * 0.98, M_PI * 0.98, 0.0}));
}

TEST_CASE("self collision agrees with dense sampling oracle", "[robot][oracle]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(29);
    const double margin = 1e-4;
    int checked = 0;
    for (int i = 0; i < 10000; ++i) {
        Configuration q = robot::sample_config(r, rng);
        double clearance = robot::self_clearance(r, q);
        if (std::abs(clearance) <= margin) continue;  // boundary band is exempt
        bool mine = clearance < 0.0;
        bool oracle_says = oracle::dense_self_clearance(r, q) < 0.0;
        ++checked;
        REQUIRE(mine == oracle_says);
    }
    REQUIRE(checked > 9000);
}

TEST_CASE("self collision invariant under base rotation", "[robot][property]") {
    RobotModel big = RobotModel::default_model();
    // widen the base joint so rotating by delta stays in limits
    big.joint_limits[0] = {-20.0, 20.0};
    rng::Rng rng(31);
    for (int i = 0; i < 2000; ++i) {
        Configuration q = robot::sample_config(big, rng);
        double delta = rng.uniform(-3, 3);
        Configuration q2 = q;
        q2[0] += delta;
        REQUIRE(robot::self_collision(big, q) == robot::self_collision(big, q2));
    }
}

TEST_CASE("sample_config degenerate limits", "[robot]") {
    RobotModel r = RobotModel::default_model();
    for (auto& lim : r.joint_limits) lim = {0.7, 0.7};
    rng::Rng rng(37);
    for (int i = 0; i < 20; ++i) {
        Configuration q = robot::sample_config(r, rng);
        for (double v : q) REQUIRE(v == 0.7);
    }
}

TEST_CASE("sample_config uniform means", "[robot][property]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng rng(41);
    const int n = 1000000;
    std::vector<double> sums(r.dof(), 0.0);
    for (int i = 0; i < n; ++i) {
        Configuration q = robot::sample_config(r, rng);
        for (std::size_t k = 0; k < q.size(); ++k) sums[k] += q[k];
    }
    for (std::size_t k = 0; k < r.dof(); ++k) {
        double lo = r.joint_limits[k][0], hi = r.joint_limits[k][1];
        double mean = sums[k] / n;
        double se = (hi - lo) / std::sqrt(12.0 * n);
        REQUIRE(std::abs(mean - (lo + hi) / 2) < 3 * se);
    }
}

TEST_CASE("sample_config deterministic under seed", "[robot]") {
    RobotModel r = RobotModel::default_model();
    rng::Rng a(5), b(5);
    for (int i = 0; i < 100; ++i)
        REQUIRE(robot::sample_config(r, a) == robot::sample_config(r, b));
}

TEST_CASE("robot text block round-trips", "[robot]") {
    RobotModel r = RobotModel::default_model();
    std::string block = robot::to_text_block(r);
    // Reparse through the same field splitter the file loaders use.
    std::istringstream is(block);
    std::string l1, l2, l3;
    std::getline(is, l1);
    std::getline(is, l2);
    std::getline(is, l3);
    RobotModel r2 = robot::robot_from_fields(l1.substr(l1.find(": ") + 2),
                                             l2.substr(l2.find(": ") + 2),
                                             l3.substr(l3.find(": ") + 2));
    REQUIRE(r2.link_lengths == r.link_lengths);
    REQUIRE(r2.joint_limits == r.joint_limits);
    REQUIRE(r2.link_radius == r.link_radius);
}

TEST_CASE("model validation", "[robot]") {
    RobotModel r = RobotModel::default_model();
    r.link_lengths = {0.4, 0.3};
    r.joint_limits.resize(2);
    REQUIRE_THROWS_AS(r.validate(), UsageError);  // fewer than 3 links
    r = RobotModel::default_model();
    r.link_radius = 0.2;
    REQUIRE_THROWS_AS(r.validate(), UsageError);  // capsule too fat
}
