// Multi-tissue digital brain phantom: nested ellipsoid shells with
// per-tissue T2/M0, plus synthesis of noise-free multi-TE volumes from the
// monoexponential decay model.
#pragma once

#include <atomic>
#include <map>
#include <stdexcept>

#include "t2forge/geometry.hpp"

namespace t2forge {

enum class Tissue : uint8_t { background = 0, wm = 1, gm = 2, dgm = 3, csf = 4 };

inline const char* tissue_name(Tissue t) {
    switch (t) {
    case Tissue::background: return "background";
    case Tissue::wm: return "wm";
    case Tissue::gm: return "gm";
    case Tissue::dgm: return "dgm";
    case Tissue::csf: return "csf";
    }
    return "?";
}

struct TissueSpec {
    Tissue label = Tissue::background;
    double t2 = 0; // ms
    double m0 = 0; // signal units
};

// One ellipsoid shell boundary. Shells are listed outer to inner; a voxel
// takes the label of the innermost shell containing it. A shell with all
// three semi-axes equal to zero is treated as absent.
struct Shell {
    Tissue label = Tissue::background;
    Vec3 semi_axes{0, 0, 0};    // mm
    Vec3 center_offset{0, 0, 0}; // mm, relative to the (jittered) brain center
};

struct PhantomSpec {
    Grid grid = make_centered_grid({64, 64, 64}, {2, 2, 2});
    std::vector<TissueSpec> tissues;
    std::vector<Shell> shells; // outer to inner
    uint64_t geometry_seed = 42;
    // seed-driven anatomy variation
    double scale_jitter = 0.02;      // per-shell size factor in [1-j, 1+j]
    double rotation_jitter_deg = 3;  // shared brain tilt
    double center_jitter_mm = 2;     // shared brain shift
    bool m0_bias_field = false;      // smooth multiplicative M0 bias
    double m0_bias_amplitude = 0.1;

    static PhantomSpec default_spec(uint64_t seed = 42) {
        PhantomSpec s;
        s.geometry_seed = seed;
        // 0.55T-like T2 values; GM and CSF are synthetic fill-ins
        s.tissues = {{Tissue::wm, 339.0, 100.0},
                     {Tissue::gm, 280.0, 100.0},
                     {Tissue::dgm, 246.0, 100.0},
                     {Tissue::csf, 1200.0, 100.0}};
        // concentric shells, outer to inner; the white-matter core holds the
        // grid center, with the deep-gray shell wrapped around it
        s.shells = {{Tissue::csf, {56, 41, 61}, {0, 0, 0}},
                    {Tissue::gm, {51, 37, 56}, {0, 0, 0}},
                    {Tissue::dgm, {46, 33, 50}, {0, 0, 0}},
                    {Tissue::wm, {40, 28, 43}, {0, 0, 0}}};
        return s;
    }

    const TissueSpec* find_tissue(Tissue t) const {
        for (const auto& ts : tissues)
            if (ts.label == t) return &ts;
        return nullptr;
    }

    void validate() const {
        grid.validate();
        std::array<bool, 8> seen{};
        for (const auto& ts : tissues) {
            if (seen[size_t(ts.label)]) throw ConfigError("PhantomSpec: duplicate tissue label");
            seen[size_t(ts.label)] = true;
            if (ts.label != Tissue::background && !(ts.t2 > 0))
                throw ConfigError(std::string("PhantomSpec: t2 must be > 0 for ") +
                                  tissue_name(ts.label));
            if (!(ts.m0 >= 0)) throw ConfigError("PhantomSpec: m0 must be >= 0");
        }
        std::array<bool, 8> shell_seen{};
        for (const auto& sh : shells) {
            bool all_zero = sh.semi_axes.x == 0 && sh.semi_axes.y == 0 && sh.semi_axes.z == 0;
            if (all_zero) continue; // absent shell
            if (!(sh.semi_axes.x > 0 && sh.semi_axes.y > 0 && sh.semi_axes.z > 0))
                throw ConfigError(std::string("PhantomSpec: degenerate shell for ") +
                                  tissue_name(sh.label));
            if (shell_seen[size_t(sh.label)])
                throw ConfigError("PhantomSpec: duplicate shell label");
            shell_seen[size_t(sh.label)] = true;
        }
    }
};

// Placed shell after seed jitter: same rigid motion for the whole brain,
// per-shell scale. Nesting is re-verified numerically after placement.
struct PlacedShell {
    Tissue label;
    Vec3 semi_axes;
    Vec3 center;
    Mat3 rotation; // world-from-shell
};

inline std::vector<PlacedShell> place_shells(const PhantomSpec& spec) {
    Rng rng(derive_seed(spec.geometry_seed, {0x7068616eULL}));
    const double rot = spec.rotation_jitter_deg * M_PI / 180.0;
    Vec3 tilt{uniform(rng, -rot, rot), uniform(rng, -rot, rot), uniform(rng, -rot, rot)};
    Mat3 R = euler_to_matrix(tilt);
    Vec3 shift{uniform(rng, -spec.center_jitter_mm, spec.center_jitter_mm),
               uniform(rng, -spec.center_jitter_mm, spec.center_jitter_mm),
               uniform(rng, -spec.center_jitter_mm, spec.center_jitter_mm)};
    Vec3 brain_center = spec.grid.center() + shift;

    std::vector<PlacedShell> placed;
    for (const auto& sh : spec.shells) {
        if (sh.semi_axes.x == 0 && sh.semi_axes.y == 0 && sh.semi_axes.z == 0) {
            uniform(rng, 0, 1); // keep the stream aligned for absent shells
            continue;
        }
        double s = uniform(rng, 1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
        PlacedShell p;
        p.label = sh.label;
        p.semi_axes = sh.semi_axes * s;
        p.center = brain_center + R * sh.center_offset;
        p.rotation = R;
        placed.push_back(p);
    }
    // numeric nesting check: surface samples of each inner shell must lie
    // inside every outer shell
    auto inside = [](const PlacedShell& sh, const Vec3& p) {
        Vec3 local = sh.rotation.transposed() * (p - sh.center);
        Vec3 q = local.cdiv(sh.semi_axes);
        return q.dot(q) <= 1.0;
    };
    for (size_t inner = 1; inner < placed.size(); ++inner) {
        for (int a = 0; a < 3; ++a)
            for (int sgn : {-1, 1}) {
                Vec3 axis{0, 0, 0};
                axis[a] = double(sgn) * placed[inner].semi_axes[a];
                Vec3 surf = placed[inner].center + placed[inner].rotation * axis;
                for (size_t outer = 0; outer < inner; ++outer)
                    if (!inside(placed[outer], surf))
                        throw ConfigError("PhantomSpec: shells are not nested after jitter");
            }
    }
    return placed;
}

inline Volume build_label_map(const PhantomSpec& spec) {
    spec.validate();
    auto placed = place_shells(spec);
    for (const auto& p : placed)
        if (spec.find_tissue(p.label) == nullptr)
            throw ConfigError(std::string("PhantomSpec: shell tissue missing from table: ") +
                              tissue_name(p.label));
    Volume labels(spec.grid, Semantics::label_map);
    const int nx = spec.grid.dims[0], ny = spec.grid.dims[1], nz = spec.grid.dims[2];
    parallel_for(nz, [&](int64_t k0, int64_t k1) {
        for (int64_t k = k0; k < k1; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    Vec3 p = world_from_voxel(spec.grid, {double(i), double(j), double(k)});
                    Tissue label = Tissue::background;
                    // innermost containing shell wins
                    for (auto it = placed.rbegin(); it != placed.rend(); ++it) {
                        Vec3 local = it->rotation.transposed() * (p - it->center);
                        Vec3 q = local.cdiv(it->semi_axes);
                        if (q.dot(q) <= 1.0) {
                            label = it->label;
                            break;
                        }
                    }
                    labels.at(i, j, int(k)) = double(uint8_t(label));
                }
    });
    return labels;
}

// Monoexponential spin-echo decay.
inline double signal(double m0, double t2, double te) {
    if (!(t2 > 0)) throw std::domain_error("signal: t2 must be > 0");
    if (!(te >= 0)) throw std::domain_error("signal: te must be >= 0");
    return m0 * std::exp(-te / t2);
}

// Smooth multiplicative bias (low-order polynomial in normalized coords).
inline double m0_bias(const PhantomSpec& spec, const Vec3& world) {
    if (!spec.m0_bias_field) return 1.0;
    Rng rng(derive_seed(spec.geometry_seed, {0x62696173ULL}));
    double c[6];
    for (double& v : c) v = uniform(rng, -1.0, 1.0);
    Vec3 half = spec.grid.extent() * 0.5;
    Vec3 n = (world - spec.grid.center()).cdiv(half);
    double poly = c[0] * n.x + c[1] * n.y + c[2] * n.z + c[3] * n.x * n.y + c[4] * n.y * n.z +
                  c[5] * n.x * n.x;
    return 1.0 + spec.m0_bias_amplitude * poly;
}

// One intensity volume per echo time; background voxels are exactly 0.
inline std::vector<Volume> synthesize_hr_volumes(const Volume& labels,
                                                 const std::vector<TissueSpec>& tissues,
                                                 const std::vector<double>& tes,
                                                 const PhantomSpec* bias_from = nullptr) {
    std::map<uint8_t, TissueSpec> table;
    for (const auto& t : tissues) table[uint8_t(t.label)] = t;
    std::vector<Volume> out;
    out.reserve(tes.size());
    for (double te : tes) {
        Volume vol(labels.grid, Semantics::intensity);
        const size_t n = labels.grid.voxel_count();
        std::atomic<bool> bad{false};
        parallel_for(int64_t(n), [&](int64_t b, int64_t e) {
            const int nx = labels.grid.dims[0], ny = labels.grid.dims[1];
            for (int64_t vi = b; vi < e; ++vi) {
                auto lbl = uint8_t(labels.data[size_t(vi)]);
                if (lbl == uint8_t(Tissue::background)) continue;
                auto it = table.find(lbl);
                if (it == table.end()) {
                    bad.store(true);
                    return;
                }
                double v = signal(it->second.m0, it->second.t2, te);
                if (bias_from && bias_from->m0_bias_field) {
                    int i = int(vi % nx), j = int((vi / nx) % ny), k = int(vi / (size_t(nx) * ny));
                    Vec3 p = world_from_voxel(labels.grid, {double(i), double(j), double(k)});
                    v *= m0_bias(*bias_from, p);
                }
                vol.data[size_t(vi)] = v;
            }
        });
        if (bad.load())
            throw DataError("synthesize_hr_volumes: label map contains a tissue not in the table");
        out.push_back(std::move(vol));
    }
    return out;
}

// Ground-truth parameter maps straight from the tissue table.
inline Volume tissue_parameter_map(const Volume& labels, const std::vector<TissueSpec>& tissues,
                                   bool t2_map) {
    std::map<uint8_t, TissueSpec> table;
    for (const auto& t : tissues) table[uint8_t(t.label)] = t;
    Volume out(labels.grid, t2_map ? Semantics::t2_map : Semantics::m0_map);
    for (size_t i = 0; i < labels.data.size(); ++i) {
        auto lbl = uint8_t(labels.data[i]);
        if (lbl == uint8_t(Tissue::background)) continue;
        auto it = table.find(lbl);
        if (it == table.end())
            throw DataError("tissue_parameter_map: label map contains a tissue not in the table");
        out.data[i] = t2_map ? it->second.t2 : it->second.m0;
    }
    return out;
}

} // namespace t2forge
