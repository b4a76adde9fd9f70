// Voxel-wise T2/M0 estimation by log-linear ordinary least squares.
//
// For echo times TE_1..TE_N the log signal obeys y = D b with
//   y_i = log V^{TE_i},  D = [1 TE_i],  b = (log M0, -1/T2).
// The OLS solution is b* = (D^T D)^{-1} D^T y; the residual operator
// A = D (D^T D)^{-1} D^T - I maps y to its deviation from an exact
// monoexponential decay and is independent of the voxel, so it is built once.
#pragma once

#include <cmath>
#include <vector>

#include "t2forge/geometry.hpp"

namespace t2forge {

struct T2FitSystem {
    std::vector<double> tes; // ms, N >= 2, distinct
    // D is N x 2 (ones column, TE column); stored flattened row-major
    std::vector<double> design;     // N*2
    std::vector<double> projection; // P = D (D^T D)^{-1} D^T, N*N
    std::vector<double> residual;   // A = P - I, N*N
    // closed-form (D^T D)^{-1} D^T, 2 x N; used by fit_voxel
    std::vector<double> pseudo_inverse;
    double det_normal = 0; // det(D^T D), conditioning monitor

    int n() const { return int(tes.size()); }

    double a(int i, int j) const { return residual[size_t(i) * tes.size() + size_t(j)]; }

    // r = A y for one voxel's log-intensity vector
    void apply_residual(const double* y, double* r) const {
        const int N = n();
        for (int i = 0; i < N; ++i) {
            double s = 0;
            for (int j = 0; j < N; ++j) s += residual[size_t(i) * size_t(N) + size_t(j)] * y[j];
            r[i] = s;
        }
    }
};

inline T2FitSystem build_system(const std::vector<double>& tes) {
    const int N = int(tes.size());
    if (N < 2) throw ConfigError("build_system: need at least two echo times");
    for (int i = 0; i < N; ++i) {
        if (!(tes[size_t(i)] > 0)) throw ConfigError("build_system: echo times must be positive");
        for (int j = i + 1; j < N; ++j)
            if (tes[size_t(i)] == tes[size_t(j)])
                throw ConfigError("build_system: duplicate echo time makes D^T D singular");
    }
    T2FitSystem sys;
    sys.tes = tes;
    sys.design.resize(size_t(N) * 2);
    double s1 = N, st = 0, stt = 0;
    for (int i = 0; i < N; ++i) {
        sys.design[size_t(i) * 2 + 0] = 1.0;
        sys.design[size_t(i) * 2 + 1] = tes[size_t(i)];
        st += tes[size_t(i)];
        stt += tes[size_t(i)] * tes[size_t(i)];
    }
    // normal matrix [[N, st], [st, stt]], inverted in closed form
    sys.det_normal = s1 * stt - st * st;
    if (!(std::abs(sys.det_normal) > 0))
        throw ConfigError("build_system: singular normal equations");
    const double i00 = stt / sys.det_normal, i01 = -st / sys.det_normal,
                 i11 = s1 / sys.det_normal;
    // (D^T D)^{-1} D^T: 2 x N
    sys.pseudo_inverse.resize(size_t(2) * size_t(N));
    for (int j = 0; j < N; ++j) {
        sys.pseudo_inverse[size_t(j)] = i00 + i01 * tes[size_t(j)];
        sys.pseudo_inverse[size_t(N) + size_t(j)] = i01 + i11 * tes[size_t(j)];
    }
    // P = D * pseudo_inverse, A = P - I
    sys.projection.assign(size_t(N) * size_t(N), 0.0);
    sys.residual.assign(size_t(N) * size_t(N), 0.0);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
            double p = sys.pseudo_inverse[size_t(j)] +
                       tes[size_t(i)] * sys.pseudo_inverse[size_t(N) + size_t(j)];
            sys.projection[size_t(i) * size_t(N) + size_t(j)] = p;
            sys.residual[size_t(i) * size_t(N) + size_t(j)] = p - (i == j ? 1.0 : 0.0);
        }
    return sys;
}

struct VoxelFit {
    double m0 = 0;
    double t2 = 0; // ms
    bool valid = false;
};

inline constexpr double kT2Max = 5000.0; // ms; validity ceiling for fits

inline VoxelFit fit_voxel(const T2FitSystem& sys, const std::vector<double>& intensities,
                          double t2_max = kT2Max) {
    const int N = sys.n();
    if (int(intensities.size()) != N)
        throw ContractViolation("fit_voxel: intensity count does not match system");
    double b0 = 0, b1 = 0;
    for (int i = 0; i < N; ++i) {
        const double v = intensities[size_t(i)];
        if (!(v > 0)) throw DataError("fit_voxel: intensities must be positive");
        const double y = std::log(v);
        b0 += sys.pseudo_inverse[size_t(i)] * y;
        b1 += sys.pseudo_inverse[size_t(N) + size_t(i)] * y;
    }
    VoxelFit fit;
    fit.m0 = std::exp(b0);
    if (b1 < 0) {
        fit.t2 = -1.0 / b1;
        fit.valid = fit.t2 <= t2_max;
    } else {
        fit.t2 = 0;
        fit.valid = false; // flat or growing signal has no physical T2
    }
    return fit;
}

// squared norm of the OLS residual, r_T2(y) = ||A log(intensities)||^2
inline double residual_energy(const T2FitSystem& sys, const std::vector<double>& intensities) {
    const int N = sys.n();
    if (int(intensities.size()) != N)
        throw ContractViolation("residual_energy: intensity count does not match system");
    std::vector<double> y(size_t(N), 0.0), r(size_t(N), 0.0);
    for (int i = 0; i < N; ++i) {
        if (!(intensities[size_t(i)] > 0))
            throw DataError("residual_energy: intensities must be positive");
        y[size_t(i)] = std::log(intensities[size_t(i)]);
    }
    sys.apply_residual(y.data(), r.data());
    double e = 0;
    for (int i = 0; i < N; ++i) e += r[size_t(i)] * r[size_t(i)];
    return e;
}

struct ParameterMap {
    Volume m0;   // m0-map
    Volume t2;   // t2-map, ms
    Volume mask; // label-map, 1 = valid fit
};

inline ParameterMap fit_volume(const T2FitSystem& sys, const std::vector<Volume>& volumes,
                               double floor_eps = 1e-6, double t2_max = kT2Max) {
    const int N = sys.n();
    if (int(volumes.size()) != N)
        throw DataError("fit_volume: volume count does not match echo times");
    for (const auto& v : volumes)
        if (!v.grid.same_geometry(volumes[0].grid))
            throw DataError("fit_volume: volumes are not on a common grid");
    const Grid& g = volumes[0].grid;
    ParameterMap map{Volume(g, Semantics::m0_map), Volume(g, Semantics::t2_map),
                     Volume(g, Semantics::label_map)};
    const size_t count = g.voxel_count();
    parallel_for(int64_t(count), [&](int64_t b, int64_t e) {
        std::vector<double> vals(size_t(N), 0.0);
        for (int64_t vi = b; vi < e; ++vi) {
            bool background = true;
            for (int c = 0; c < N; ++c) {
                double raw = volumes[size_t(c)].data[size_t(vi)];
                if (raw > floor_eps) background = false;
                vals[size_t(c)] = std::max(raw, floor_eps);
            }
            if (background) continue; // mask stays 0
            VoxelFit fit = fit_voxel(sys, vals, t2_max);
            if (fit.valid) {
                map.m0.data[size_t(vi)] = fit.m0;
                map.t2.data[size_t(vi)] = fit.t2;
                map.mask.data[size_t(vi)] = 1.0;
            }
        }
    });
    return map;
}

} // namespace t2forge
