#pragma once

// Test-side oracles. These deliberately re-derive results through independent
// routes (homogeneous transforms, dense point sampling, numerical Jacobians)
// and must not call into the implementation paths they check.

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "viik/robot.hpp"
#include "viik/tensor.hpp"
#include "viik/world.hpp"

namespace oracle {

struct Mat3 {
    double m[3][3];

    static Mat3 identity() {
        Mat3 r{};
        r.m[0][0] = r.m[1][1] = r.m[2][2] = 1.0;
        return r;
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
                r.m[i][j] = s;
            }
        return r;
    }
};

inline Mat3 rot(double a) {
    Mat3 r = Mat3::identity();
    r.m[0][0] = std::cos(a);
    r.m[0][1] = -std::sin(a);
    r.m[1][0] = std::sin(a);
    r.m[1][1] = std::cos(a);
    return r;
}

inline Mat3 trans(double x, double y) {
    Mat3 r = Mat3::identity();
    r.m[0][2] = x;
    r.m[1][2] = y;
    return r;
}

/// Forward kinematics by composing homogeneous transforms.
inline viik::robot::Pose fk_transforms(const viik::robot::RobotModel& robot,
                                       const viik::robot::Configuration& q) {
    Mat3 t = Mat3::identity();
    for (std::size_t i = 0; i < robot.dof(); ++i)
        t = t * rot(q[i]) * trans(robot.link_lengths[i], 0.0);
    return {t.m[0][2], t.m[1][2], std::atan2(t.m[1][0], t.m[0][0])};
}

/// Smallest capsule clearance between non-adjacent links, from dense point
/// sampling along each segment (points_per_link samples).
inline double dense_self_clearance(const viik::robot::RobotModel& robot,
                                   const viik::robot::Configuration& q,
                                   int points_per_link = 500) {
    auto pts = viik::robot::joint_positions(robot, q);
    double best = 1e300;
    std::size_t n = robot.dof();
    for (std::size_t i = 0; i + 2 < n; ++i) {
        for (std::size_t j = i + 2; j < n; ++j) {
            for (int s = 0; s < points_per_link; ++s) {
                double f = static_cast<double>(s) / (points_per_link - 1);
                double px = pts[i][0] + f * (pts[i + 1][0] - pts[i][0]);
                double py = pts[i][1] + f * (pts[i + 1][1] - pts[i][1]);
                double d = viik::robot::point_segment_distance(
                    px, py, pts[j][0], pts[j][1], pts[j + 1][0], pts[j + 1][1]);
                best = std::min(best, d - 2.0 * robot.link_radius);
            }
        }
    }
    return best;
}

inline double dense_env_clearance(const viik::robot::RobotModel& robot,
                                  const viik::robot::Configuration& q,
                                  const viik::world::Scene& scene,
                                  int points_per_link = 500) {
    auto pts = viik::robot::joint_positions(robot, q);
    double best = 1e300;
    for (std::size_t i = 0; i < robot.dof(); ++i) {
        for (int s = 0; s < points_per_link; ++s) {
            double f = static_cast<double>(s) / (points_per_link - 1);
            double px = pts[i][0] + f * (pts[i + 1][0] - pts[i][0]);
            double py = pts[i][1] + f * (pts[i + 1][1] - pts[i][1]);
            for (const auto& ob : scene.obstacles) {
                double d = std::hypot(px - ob.cx, py - ob.cy) -
                           (ob.r + robot.link_radius);
                best = std::min(best, d);
            }
        }
    }
    return best;
}

/// Central-difference Jacobian of a vector map f: R^d -> R^d.
inline std::vector<double> numeric_jacobian(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-6) {
    std::size_t d = x.size();
    std::vector<double> jac(d * d);
    for (std::size_t j = 0; j < d; ++j) {
        double orig = x[j];
        x[j] = orig + h;
        std::vector<double> fp = f(x);
        x[j] = orig - h;
        std::vector<double> fm = f(x);
        x[j] = orig;
        for (std::size_t i = 0; i < d; ++i) jac[i * d + j] = (fp[i] - fm[i]) / (2 * h);
    }
    return jac;
}

/// log|det| of a dense d x d matrix via Gaussian elimination with pivoting.
inline double slogdet(std::vector<double> a, std::size_t d) {
    double logdet = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < d; ++r)
            if (std::abs(a[r * d + c]) > std::abs(a[piv * d + c])) piv = r;
        if (piv != c)
            for (std::size_t j = 0; j < d; ++j) std::swap(a[c * d + j], a[piv * d + j]);
        double p = a[c * d + c];
        logdet += std::log(std::abs(p));
        for (std::size_t r = c + 1; r < d; ++r) {
            double f = a[r * d + c] / p;
            for (std::size_t j = c; j < d; ++j) a[r * d + j] -= f * a[c * d + j];
        }
    }
    return logdet;
}

inline bool close(double a, double b, double rtol, double atol = 0.0) {
    return std::abs(a - b) <= atol + rtol * std::max(std::abs(a), std::abs(b));
}

}  // namespace oracle
