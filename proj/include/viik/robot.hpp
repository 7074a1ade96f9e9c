#pragma once

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "viik/errors.hpp"
#include "viik/rng.hpp"

namespace viik::robot {

/// Wraps an angle to the principal range (-pi, pi].
inline double wrap_angle(double a) {
    double w = std::remainder(a, 2.0 * M_PI);
    if (w <= -M_PI) w += 2.0 * M_PI;
    return w;
}

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;
};

using Configuration = std::vector<double>;

/// Planar revolute arm with capsule links: N link lengths, per-joint limits
/// and one shared capsule half-width.
struct RobotModel {
    std::vector<double> link_lengths;
    std::vector<std::array<double, 2>> joint_limits;
    double link_radius = 0.0;

    std::size_t dof() const { return link_lengths.size(); }

    double reach() const {
        double s = 0.0;
        for (double l : link_lengths) s += l;
        return s;
    }

    void validate() const {
        if (dof() < 3) throw UsageError("robot: needs at least 3 links");
        if (joint_limits.size() != dof())
            throw UsageError("robot: joint limit count does not match link count");
        double min_len = link_lengths[0];
        for (double l : link_lengths) {
            if (l <= 0) throw UsageError("robot: link lengths must be positive");
            min_len = std::min(min_len, l);
        }
        for (const auto& [lo, hi] : joint_limits)
            if (!(lo < hi)) throw UsageError("robot: joint limit lo must be < hi");
        if (!(link_radius > 0) || link_radius >= min_len / 2)
            throw UsageError("robot: link radius must be in (0, min_length/2)");
    }

    static RobotModel default_model() {
        RobotModel r;
        r.link_lengths = {0.4, 0.3, 0.2, 0.1};
        r.joint_limits.assign(4, {-2.9, 2.9});
        r.link_radius = 0.02;
        return r;
    }
};

inline void check_dims(const RobotModel& robot, const Configuration& q) {
    if (q.size() != robot.dof())
        throw UsageError("configuration has " + std::to_string(q.size()) +
                         " joints, robot has " + std::to_string(robot.dof()));
}

/// Joint positions including the base at the origin: N+1 points.
inline std::vector<std::array<double, 2>> joint_positions(const RobotModel& robot,
                                                          const Configuration& q) {
    check_dims(robot, q);
    std::vector<std::array<double, 2>> pts(robot.dof() + 1, {0.0, 0.0});
    double angle = 0.0, x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < robot.dof(); ++i) {
        angle += q[i];
        x += robot.link_lengths[i] * std::cos(angle);
        y += robot.link_lengths[i] * std::sin(angle);
        pts[i + 1] = {x, y};
    }
    return pts;
}

inline Pose forward_kinematics(const RobotModel& robot, const Configuration& q) {
    check_dims(robot, q);
    double angle = 0.0, x = 0.0, y = 0.0;
    for (std::size_t i = 0; i < robot.dof(); ++i) {
        angle += q[i];
        x += robot.link_lengths[i] * std::cos(angle);
        y += robot.link_lengths[i] * std::sin(angle);
    }
    return Pose{x, y, wrap_angle(angle)};
}

/// Analytic Jacobian of (x, y, theta) w.r.t. q, row-major 3xN. The third row
/// is all ones since theta is the plain joint-angle sum.
inline std::vector<double> jacobian(const RobotModel& robot, const Configuration& q) {
    check_dims(robot, q);
    std::size_t n = robot.dof();
    std::vector<double> sines(n), cosines(n);
    double angle = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        angle += q[i];
        sines[i] = robot.link_lengths[i] * std::sin(angle);
        cosines[i] = robot.link_lengths[i] * std::cos(angle);
    }
    std::vector<double> j(3 * n);
    double sx = 0.0, sy = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        sx += sines[k];
        sy += cosines[k];
        j[0 * n + k] = -sx;
        j[1 * n + k] = sy;
        j[2 * n + k] = 1.0;
    }
    return j;
}

// -- capsule geometry --------------------------------------------------------

inline double point_segment_distance(double px, double py, double ax, double ay,
                                     double bx, double by) {
    double abx = bx - ax, aby = by - ay;
    double apx = px - ax, apy = py - ay;
    double ab2 = abx * abx + aby * aby;
    double s = ab2 > 0 ? (apx * abx + apy * aby) / ab2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    double dx = apx - s * abx, dy = apy - s * aby;
    return std::sqrt(dx * dx + dy * dy);
}

/// Shortest distance between segments AB and CD (Ericson-style closest points).
inline double segment_segment_distance(double ax, double ay, double bx, double by,
                                       double cx, double cy, double dx, double dy) {
    double d1x = bx - ax, d1y = by - ay;
    double d2x = dx - cx, d2y = dy - cy;
    double rx = ax - cx, ry = ay - cy;
    double a = d1x * d1x + d1y * d1y;
    double e = d2x * d2x + d2y * d2y;
    double f = d2x * rx + d2y * ry;
    double s, t;
    constexpr double kEps = 1e-15;
    if (a <= kEps && e <= kEps) {
        s = t = 0.0;
    } else if (a <= kEps) {
        s = 0.0;
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        double c = d1x * rx + d1y * ry;
        if (e <= kEps) {
            t = 0.0;
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            double b = d1x * d2x + d1y * d2y;
            double denom = a * e - b * b;
            s = denom > kEps ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    double px = ax + s * d1x - (cx + t * d2x);
    double py = ay + s * d1y - (cy + t * d2y);
    return std::sqrt(px * px + py * py);
}

/// Smallest capsule clearance over non-adjacent link pairs; negative means the
/// capsules overlap. Adjacent links share a joint and are skipped.
inline double self_clearance(const RobotModel& robot, const Configuration& q) {
    auto pts = joint_positions(robot, q);
    std::size_t n = robot.dof();
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 2 < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            double d = segment_segment_distance(pts[i][0], pts[i][1], pts[i + 1][0],
                                                pts[i + 1][1], pts[j][0], pts[j][1],
                                                pts[j + 1][0], pts[j + 1][1]);
            best = std::min(best, d - 2.0 * robot.link_radius);
        }
    }
    return best;
}

inline bool self_collision(const RobotModel& robot, const Configuration& q) {
    return self_clearance(robot, q) < 0.0;
}

inline Configuration sample_config(const RobotModel& robot, rng::Rng& rng) {
    Configuration q(robot.dof());
    for (std::size_t i = 0; i < q.size(); ++i)
        q[i] = rng.uniform(robot.joint_limits[i][0], robot.joint_limits[i][1]);
    return q;
}

// -- text block serialization (dataset and checkpoint headers) ---------------

inline std::string to_text_block(const RobotModel& robot) {
    std::ostringstream os;
    os.precision(17);
    os << "robot.link_lengths:";
    for (double l : robot.link_lengths) os << ' ' << l;
    os << "\nrobot.joint_limits:";
    for (const auto& [lo, hi] : robot.joint_limits) os << ' ' << lo << ' ' << hi;
    os << "\nrobot.link_radius: " << robot.link_radius << "\n";
    return os.str();
}

inline RobotModel robot_from_fields(const std::string& lengths,
                                    const std::string& limits,
                                    const std::string& radius) {
    RobotModel r;
    std::istringstream ls(lengths);
    double v;
    while (ls >> v) r.link_lengths.push_back(v);
    std::istringstream js(limits);
    double lo, hi;
    while (js >> lo >> hi) r.joint_limits.push_back({lo, hi});
    r.link_radius = std::stod(radius);
    r.validate();
    return r;
}

}  // namespace viik::robot
