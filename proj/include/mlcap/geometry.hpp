#ifndef MLCAP_GEOMETRY_HPP
#define MLCAP_GEOMETRY_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <optional>
#include <stdexcept>

namespace mlcap {

struct Aabb {
    Eigen::Vector3d min = Eigen::Vector3d::Zero();
    Eigen::Vector3d max = Eigen::Vector3d::Zero();

    double volume() const {
        Eigen::Vector3d d = (max - min).cwiseMax(0.0);
        return d.x() * d.y() * d.z();
    }
    bool degenerate() const { return volume() <= 0.0; }
    bool valid() const {
        return min.x() <= max.x() && min.y() <= max.y() && min.z() <= max.z();
    }
    bool operator==(const Aabb& o) const { return min == o.min && max == o.max; }
};

// Volume IoU of two axis-aligned boxes. Two identical degenerate boxes
// count as a perfect match (IoU 1); any other degenerate pairing is 0.
inline double aabb_iou(const Aabb& a, const Aabb& b) {
    if (!a.valid() || !b.valid()) throw std::invalid_argument("aabb_iou: invalid box");
    if (a.degenerate() || b.degenerate()) return (a == b) ? 1.0 : 0.0;
    Eigen::Vector3d lo = a.min.cwiseMax(b.min);
    Eigen::Vector3d hi = a.max.cwiseMin(b.max);
    Eigen::Vector3d d = (hi - lo).cwiseMax(0.0);
    double inter = d.x() * d.y() * d.z();
    double uni = a.volume() + b.volume() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

struct PixelPoint {
    double u, v;    // continuous pixel coordinates
    double depth;   // camera-space z
};

// Pinhole camera with a world-to-camera rigid transform.
struct Camera {
    int id = 0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
    int width = 0, height = 0;

    bool valid() const { return fx > 0.0 && fy > 0.0 && width >= 64 && height >= 64; }

    // Returns nothing for points at or behind the camera plane.
    std::optional<PixelPoint> project(const Eigen::Vector3d& p) const {
        Eigen::Vector3d pc = rotation * p + translation;
        if (pc.z() <= 1e-9) return std::nullopt;
        return PixelPoint{fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy, pc.z()};
    }

    bool inside(double u, double v) const {
        return u >= 0.0 && v >= 0.0 && u < width && v < height;
    }
};

// Camera at `eye` looking toward `target`, `up_hint` roughly up.
inline Camera look_at_camera(int id, const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                             double fx, double fy, int width, int height,
                             const Eigen::Vector3d& up_hint = Eigen::Vector3d(0, 0, 1)) {
    Eigen::Vector3d fwd = (target - eye).normalized();
    Eigen::Vector3d right = fwd.cross(up_hint).normalized();
    Eigen::Vector3d down = fwd.cross(right);  // +v axis points down in image
    Camera c;
    c.id = id;
    c.rotation.row(0) = right;
    c.rotation.row(1) = down;
    c.rotation.row(2) = fwd;
    c.translation = -c.rotation * eye;
    c.fx = fx;
    c.fy = fy;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.width = width;
    c.height = height;
    return c;
}

struct Box2D {
    double x0, y0, x1, y1;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
};

}  // namespace mlcap

#endif
