#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "viik/robot.hpp"

namespace viik::world {

enum class Clutter { low, medium, high };

inline const char* to_string(Clutter c) {
    switch (c) {
        case Clutter::low: return "low";
        case Clutter::medium: return "medium";
        case Clutter::high: return "high";
    }
    return "low";
}

inline Clutter clutter_from_string(const std::string& s) {
    if (s == "low") return Clutter::low;
    if (s == "medium") return Clutter::medium;
    if (s == "high") return Clutter::high;
    throw UsageError("unknown clutter level '" + s + "' (low|medium|high)");
}

struct Obstacle {
    double cx = 0.0, cy = 0.0, r = 0.0;
};

struct Scene {
    std::vector<Obstacle> obstacles;
    int id = 0;
    Clutter clutter = Clutter::low;
};

/// Square occupancy raster of the workspace [-extent, extent]^2, values in
/// {0,1}: 1 where the pixel center lies inside an obstacle.
struct OccupancyImage {
    std::size_t width = 0, height = 0;
    double extent = 0.0;
    std::vector<double> pixels;  // row-major, row 0 at y = -extent

    double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

/// Smallest clearance between any link capsule and any obstacle disc; negative
/// means contact.
inline double env_clearance(const robot::RobotModel& robot,
                            const robot::Configuration& q, const Scene& scene) {
    auto pts = robot::joint_positions(robot, q);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < robot.dof(); ++i) {
        for (const Obstacle& ob : scene.obstacles) {
            double d = robot::point_segment_distance(ob.cx, ob.cy, pts[i][0], pts[i][1],
                                                     pts[i + 1][0], pts[i + 1][1]);
            best = std::min(best, d - (ob.r + robot.link_radius));
        }
    }
    return best;
}

inline bool env_collision(const robot::RobotModel& robot, const robot::Configuration& q,
                          const Scene& scene) {
    if (scene.obstacles.empty()) return false;
    return env_clearance(robot, q, scene) < 0.0;
}

inline OccupancyImage rasterize(const Scene& scene, double extent,
                                std::size_t width = 32, std::size_t height = 32) {
    OccupancyImage img;
    img.width = width;
    img.height = height;
    img.extent = extent;
    img.pixels.assign(width * height, 0.0);
    double step_x = 2.0 * extent / static_cast<double>(width);
    double step_y = 2.0 * extent / static_cast<double>(height);
    for (std::size_t row = 0; row < height; ++row) {
        double py = -extent + (static_cast<double>(row) + 0.5) * step_y;
        for (std::size_t col = 0; col < width; ++col) {
            double px = -extent + (static_cast<double>(col) + 0.5) * step_x;
            for (const Obstacle& ob : scene.obstacles) {
                double dx = px - ob.cx, dy = py - ob.cy;
                if (dx * dx + dy * dy < ob.r * ob.r) {
                    img.pixels[row * width + col] = 1.0;
                    break;
                }
            }
        }
    }
    return img;
}

/// Procedural clutter: obstacle count by level, centers uniform over the
/// annulus [0.25, 0.95]*extent, radii uniform in [0.05, 0.15]*extent. Obstacles
/// that would reach the arm base are rejected and redrawn.
inline Scene random_scene(std::uint64_t seed, Clutter clutter, double extent,
                          double base_clearance, int id) {
    rng::Rng rng(seed);
    std::size_t count = 0;
    switch (clutter) {
        case Clutter::low: count = rng.uniform_int(2, 3); break;
        case Clutter::medium: count = rng.uniform_int(5, 7); break;
        case Clutter::high: count = rng.uniform_int(9, 12); break;
    }
    Scene scene;
    scene.id = id;
    scene.clutter = clutter;
    double r_lo = 0.25 * extent, r_hi = 0.95 * extent;
    for (std::size_t i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 10000; ++attempt) {
            double u = rng.uniform();
            double rad = std::sqrt(r_lo * r_lo + u * (r_hi * r_hi - r_lo * r_lo));
            double ang = rng.uniform(0.0, 2.0 * M_PI);
            Obstacle ob;
            ob.cx = rad * std::cos(ang);
            ob.cy = rad * std::sin(ang);
            ob.r = rng.uniform(0.05 * extent, 0.15 * extent);
            if (std::hypot(ob.cx, ob.cy) <= ob.r + base_clearance) continue;
            scene.obstacles.push_back(ob);
            placed = true;
            break;
        }
        if (!placed)
            throw NumericError("random_scene: placement rejection budget exhausted");
    }
    return scene;
}

// -- scene text files ---------------------------------------------------------
// Header line "scene <id> <clutter>", then one obstacle per line "cx cy r".

inline std::string scene_to_text(const Scene& scene) {
    std::ostringstream os;
    os.precision(17);
    os << "scene " << scene.id << ' ' << to_string(scene.clutter) << '\n';
    for (const Obstacle& ob : scene.obstacles)
        os << ob.cx << ' ' << ob.cy << ' ' << ob.r << '\n';
    return os.str();
}

inline Scene scene_from_stream(std::istream& in) {
    Scene scene;
    std::string line;
    if (!std::getline(in, line)) throw IoError("scene: empty input");
    std::istringstream hs(line);
    std::string word, clutter;
    if (!(hs >> word >> scene.id >> clutter) || word != "scene")
        throw IoError("scene: bad header line '" + line + "'");
    scene.clutter = clutter_from_string(clutter);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream os(line);
        Obstacle ob;
        if (!(os >> ob.cx >> ob.cy >> ob.r))
            throw IoError("scene: bad obstacle line '" + line + "'");
        if (!(ob.r > 0)) throw IoError("scene: obstacle radius must be positive");
        scene.obstacles.push_back(ob);
    }
    return scene;
}

inline void save_scene(const std::filesystem::path& path, const Scene& scene) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << scene_to_text(scene);
    if (!out) throw IoError("failed writing " + path.string());
}

inline Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return scene_from_stream(in);
}

}  // namespace viik::world
