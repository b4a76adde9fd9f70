// Spatial core: regular grids, dense volumes, rigid poses and the mappings
// between voxel and world (mm) coordinates.
//
// Conventions used throughout the project:
//   * world units are millimetres, echo/repetition times are milliseconds
//   * Euler angles (tx, ty, tz) compose intrinsic Z-Y-X, i.e.
//     R = Rz(tz) * Ry(ty) * Rx(tx)
//   * sampling outside a volume returns 0 (air)
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "t2forge/common.hpp"

namespace t2forge {

enum class Semantics : uint8_t { intensity = 0, t2_map = 1, m0_map = 2, label_map = 3 };

enum class Interp { nearest, trilinear };

// ---------------------------------------------------------------- Grid

struct Grid {
    std::array<int, 3> dims{1, 1, 1}; // voxels per axis
    Vec3 spacing{1, 1, 1};            // mm
    Vec3 origin{0, 0, 0};             // world position of voxel (0,0,0) center, mm
    Mat3 orientation;                 // world-from-voxel axes, orthonormal

    size_t voxel_count() const { return size_t(dims[0]) * size_t(dims[1]) * size_t(dims[2]); }

    // world extent of the voxel lattice along each grid axis
    Vec3 extent() const {
        return {dims[0] * spacing.x, dims[1] * spacing.y, dims[2] * spacing.z};
    }

    Vec3 center() const {
        Vec3 mid{0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1)};
        return origin + orientation * mid.cmul(spacing);
    }

    void validate() const {
        if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
            throw ConfigError("Grid: dims must be >= 1 per axis");
        if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
            throw ConfigError("Grid: spacing must be > 0");
        if (orientation.orthonormality_error() >= 1e-10)
            throw ConfigError("Grid: orientation is not orthonormal");
    }

    bool same_geometry(const Grid& o, double tol = 1e-6) const {
        if (dims != o.dims) return false;
        if ((spacing - o.spacing).max_abs() > tol) return false;
        if ((origin - o.origin).max_abs() > tol) return false;
        for (int i = 0; i < 9; ++i)
            if (std::abs(orientation.m[size_t(i)] - o.orientation.m[size_t(i)]) > tol) return false;
        return true;
    }
};

// Axis-aligned grid whose voxel centers are symmetric about `center`.
inline Grid make_centered_grid(std::array<int, 3> dims, Vec3 spacing, Vec3 center = {0, 0, 0}) {
    Grid g;
    g.dims = dims;
    g.spacing = spacing;
    g.origin = center - Vec3{0.5 * (dims[0] - 1) * spacing.x, 0.5 * (dims[1] - 1) * spacing.y,
                             0.5 * (dims[2] - 1) * spacing.z};
    return g;
}

inline Vec3 world_from_voxel(const Grid& g, const Vec3& idx) {
    return g.origin + g.orientation * idx.cmul(g.spacing);
}

inline Vec3 voxel_from_world(const Grid& g, const Vec3& p) {
    Vec3 local = g.orientation.transposed() * (p - g.origin);
    return local.cdiv(g.spacing);
}

// ---------------------------------------------------------------- Volume

struct Volume {
    Grid grid;
    Semantics semantics = Semantics::intensity;
    std::vector<double> data; // x-fastest

    Volume() = default;
    Volume(const Grid& g, Semantics s) : grid(g), semantics(s), data(g.voxel_count(), 0.0) {}

    size_t index(int i, int j, int k) const {
        return size_t(i) + size_t(grid.dims[0]) * (size_t(j) + size_t(grid.dims[1]) * size_t(k));
    }
    double& at(int i, int j, int k) { return data[index(i, j, k)]; }
    double at(int i, int j, int k) const { return data[index(i, j, k)]; }

    void validate() const {
        grid.validate();
        if (data.size() != grid.voxel_count())
            throw DataError("Volume: data length does not match grid dims");
        if (semantics == Semantics::intensity) {
            for (double v : data)
                if (!(std::isfinite(v) && v >= 0.0))
                    throw DataError("Volume: intensity values must be finite and >= 0");
        }
    }

    double min_value() const { return data.empty() ? 0 : *std::min_element(data.begin(), data.end()); }
    double max_value() const { return data.empty() ? 0 : *std::max_element(data.begin(), data.end()); }

    // Trilinear sample at continuous voxel coordinates; 0 outside.
    double sample_trilinear_voxel(const Vec3& v) const {
        const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
        if (v.x < -0.5 || v.y < -0.5 || v.z < -0.5 || v.x > nx - 0.5 || v.y > ny - 0.5 ||
            v.z > nz - 0.5)
            return 0.0;
        double fx = std::floor(v.x), fy = std::floor(v.y), fz = std::floor(v.z);
        int i0 = int(fx), j0 = int(fy), k0 = int(fz);
        double dx = v.x - fx, dy = v.y - fy, dz = v.z - fz;
        double acc = 0.0;
        for (int dk = 0; dk < 2; ++dk) {
            int k = k0 + dk;
            if (k < 0 || k >= nz) continue;
            double wz = dk ? dz : 1.0 - dz;
            if (wz == 0.0) continue;
            for (int dj = 0; dj < 2; ++dj) {
                int j = j0 + dj;
                if (j < 0 || j >= ny) continue;
                double wy = dj ? dy : 1.0 - dy;
                if (wy == 0.0) continue;
                for (int di = 0; di < 2; ++di) {
                    int i = i0 + di;
                    if (i < 0 || i >= nx) continue;
                    double wx = di ? dx : 1.0 - dx;
                    if (wx == 0.0) continue;
                    acc += wx * wy * wz * at(i, j, k);
                }
            }
        }
        return acc;
    }

    double sample_nearest_voxel(const Vec3& v) const {
        int i = int(std::lround(v.x)), j = int(std::lround(v.y)), k = int(std::lround(v.z));
        if (i < 0 || j < 0 || k < 0 || i >= grid.dims[0] || j >= grid.dims[1] || k >= grid.dims[2])
            return 0.0;
        return at(i, j, k);
    }

    double sample_world(const Vec3& p, Interp interp = Interp::trilinear) const {
        Vec3 v = voxel_from_world(grid, p);
        return interp == Interp::trilinear ? sample_trilinear_voxel(v) : sample_nearest_voxel(v);
    }
};

// ---------------------------------------------------------------- rotations

inline Mat3 rotation_x(double t) {
    double c = std::cos(t), s = std::sin(t);
    Mat3 r;
    r.m = {1, 0, 0, 0, c, -s, 0, s, c};
    return r;
}
inline Mat3 rotation_y(double t) {
    double c = std::cos(t), s = std::sin(t);
    Mat3 r;
    r.m = {c, 0, s, 0, 1, 0, -s, 0, c};
    return r;
}
inline Mat3 rotation_z(double t) {
    double c = std::cos(t), s = std::sin(t);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
}

// intrinsic ZYX: R = Rz * Ry * Rx
inline Mat3 euler_to_matrix(const Vec3& euler) {
    return rotation_z(euler.z) * rotation_y(euler.y) * rotation_x(euler.x);
}

// dR/d(euler[axis]), analytic; axis 0 = tx, 1 = ty, 2 = tz
inline Mat3 euler_rotation_derivative(const Vec3& euler, int axis) {
    double cx = std::cos(euler.x), sx = std::sin(euler.x);
    double cy = std::cos(euler.y), sy = std::sin(euler.y);
    double cz = std::cos(euler.z), sz = std::sin(euler.z);
    Mat3 rx = rotation_x(euler.x), ry = rotation_y(euler.y), rz = rotation_z(euler.z);
    Mat3 d;
    switch (axis) {
    case 0:
        d.m = {0, 0, 0, 0, -sx, -cx, 0, cx, -sx};
        return rz * ry * d;
    case 1:
        d.m = {-sy, 0, cy, 0, 0, 0, -cy, 0, -sy};
        return rz * d * rx;
    default:
        d.m = {-sz, -cz, 0, cz, -sz, 0, 0, 0, 0};
        return d * ry * rx;
    }
}

// ---------------------------------------------------------------- RigidPose

struct RigidPose {
    Vec3 euler{0, 0, 0};       // radians, intrinsic ZYX
    Vec3 translation{0, 0, 0}; // mm

    Mat3 rotation() const { return euler_to_matrix(euler); }
    bool finite() const { return euler.finite() && translation.finite(); }
};

inline Vec3 apply_pose(const RigidPose& pose, const Vec3& p) {
    return pose.rotation() * p + pose.translation;
}

// Inverse as (R^T, -R^T t). The returned pose stores the inverse rotation
// matrix via recovered ZYX angles so that apply_pose(invert(q), apply_pose(q, p)) == p.
inline RigidPose invert(const RigidPose& pose) {
    Mat3 rt = pose.rotation().transposed();
    RigidPose inv;
    // extract intrinsic ZYX angles from rt
    double sy = -rt(2, 0);
    sy = std::clamp(sy, -1.0, 1.0);
    inv.euler.y = std::asin(sy);
    if (std::abs(sy) < 1.0 - 1e-12) {
        inv.euler.x = std::atan2(rt(2, 1), rt(2, 2));
        inv.euler.z = std::atan2(rt(1, 0), rt(0, 0));
    } else {
        // gimbal lock: fold z into x
        inv.euler.x = std::atan2(-rt(1, 2), rt(1, 1));
        inv.euler.z = 0.0;
    }
    inv.translation = -(rt * pose.translation);
    return inv;
}

inline RigidPose compose(const RigidPose& a, const RigidPose& b) {
    // apply b first, then a
    Mat3 r = a.rotation() * b.rotation();
    RigidPose out;
    double sy = std::clamp(-r(2, 0), -1.0, 1.0);
    out.euler.y = std::asin(sy);
    if (std::abs(sy) < 1.0 - 1e-12) {
        out.euler.x = std::atan2(r(2, 1), r(2, 2));
        out.euler.z = std::atan2(r(1, 0), r(0, 0));
    } else {
        out.euler.x = std::atan2(-r(1, 2), r(1, 1));
        out.euler.z = 0.0;
    }
    out.translation = a.rotation() * b.translation + a.translation;
    return out;
}

// angle (radians) of the relative rotation between two poses
inline double rotation_angle_between(const RigidPose& a, const RigidPose& b) {
    Mat3 rel = a.rotation() * b.rotation().transposed();
    double tr = rel(0, 0) + rel(1, 1) + rel(2, 2);
    return std::acos(std::clamp(0.5 * (tr - 1.0), -1.0, 1.0));
}

// ---------------------------------------------------------------- resample

inline Volume resample(const Volume& vol, const Grid& target, Interp interp) {
    target.validate();
    // identical lattice: copy, no interpolation noise
    if (target.dims == vol.grid.dims && target.spacing.x == vol.grid.spacing.x &&
        target.spacing.y == vol.grid.spacing.y && target.spacing.z == vol.grid.spacing.z &&
        target.origin.x == vol.grid.origin.x && target.origin.y == vol.grid.origin.y &&
        target.origin.z == vol.grid.origin.z && target.orientation.m == vol.grid.orientation.m) {
        return vol;
    }
    Volume out(target, vol.semantics);
    const int nx = target.dims[0], ny = target.dims[1], nz = target.dims[2];
    parallel_for(nz, [&](int64_t k0, int64_t k1) {
        for (int64_t k = k0; k < k1; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    Vec3 p = world_from_voxel(target, {double(i), double(j), double(k)});
                    out.at(i, j, int(k)) = vol.sample_world(p, interp);
                }
    });
    return out;
}

} // namespace t2forge
