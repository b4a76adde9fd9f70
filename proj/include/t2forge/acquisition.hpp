// Forward acquisition: slice the HR ground truth into orthogonal thick-slice
// stacks through an anisotropic Gaussian PSF, inject per-slice rigid motion,
// slice-level signal dropout and Gaussian noise.
//
// Sampling model for pixel p of slice k (world position w, stack axes R_s):
//   I_k(p) = dropout_k * (1/K) sum_j gt( T_psi_k(w) + R_s u_j ) + noise,
// with u_j ~ N(0, Sigma) in the slice frame and T_psi rotating about the
// HR grid center. Negative noisy values are clamped to 0 (magnitude data).
#pragma once

#include <optional>
#include <sstream>

#include "t2forge/geometry.hpp"
#include "t2forge/qvol.hpp"

namespace t2forge {

enum class StackOrientation : uint8_t { axial = 0, coronal = 1, sagittal = 2 };

inline const char* orientation_name(StackOrientation o) {
    switch (o) {
    case StackOrientation::axial: return "axial";
    case StackOrientation::coronal: return "coronal";
    case StackOrientation::sagittal: return "sagittal";
    }
    return "?";
}

// world-from-slice-frame axes: columns are in-plane u, v and the normal
inline Mat3 orientation_axes(StackOrientation o) {
    Mat3 r;
    switch (o) {
    case StackOrientation::axial: // u=x, v=y, n=z
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        break;
    case StackOrientation::coronal: // u=z, v=x, n=y (proper rotation)
        r.m = {0, 1, 0, 0, 0, 1, 1, 0, 0};
        break;
    case StackOrientation::sagittal: // u=y, v=z, n=x (proper rotation)
        r.m = {0, 0, 1, 1, 0, 0, 0, 1, 0};
        break;
    }
    return r;
}

// ---------------------------------------------------------------- PSF

struct PsfModel {
    Mat3 covariance; // mm^2, diagonal in the slice frame

    Vec3 stddev() const {
        return {std::sqrt(covariance(0, 0)), std::sqrt(covariance(1, 1)),
                std::sqrt(covariance(2, 2))};
    }
};

inline constexpr double kFwhmToSigma = 2.354820045030949; // 2*sqrt(2 ln 2)

// Gaussian PSF: in-plane FWHM = 1.2 x in-plane spacing, through-plane
// FWHM = slice thickness.
inline PsfModel psf_covariance(double in_plane_u, double in_plane_v, double thickness) {
    if (!(in_plane_u > 0 && in_plane_v > 0 && thickness > 0))
        throw ConfigError("psf_covariance: spacings and thickness must be positive");
    PsfModel psf;
    psf.covariance = Mat3{};
    const double su = 1.2 * in_plane_u / kFwhmToSigma;
    const double sv = 1.2 * in_plane_v / kFwhmToSigma;
    const double sn = thickness / kFwhmToSigma;
    psf.covariance.m = {su * su, 0, 0, 0, sv * sv, 0, 0, 0, sn * sn};
    return psf;
}

// i.i.d. draws from N(0, Sigma); Sigma is diagonal in the slice frame.
inline std::vector<Vec3> sample_psf_offsets(const PsfModel& psf, int count, Rng& rng) {
    if (count < 1) throw ConfigError("sample_psf_offsets: count must be >= 1");
    Vec3 sd = psf.stddev();
    std::vector<Vec3> out(static_cast<size_t>(count));
    for (auto& v : out) {
        v.x = gaussian(rng, 0.0, sd.x);
        v.y = gaussian(rng, 0.0, sd.y);
        v.z = gaussian(rng, 0.0, sd.z);
    }
    return out;
}

// ---------------------------------------------------------------- stacks

struct Slice {
    int index_in_stack = 0;
    int stack_index = 0;
    std::vector<double> pixels;       // nu x nv, u-fastest
    std::vector<double> dropout_mask; // per-pixel multiplier in [0,1]
    RigidPose true_pose;              // simulation ground truth only
    bool empty = false;               // slab had no support in the volume
};

struct SliceStack {
    double te = 0; // ms
    StackOrientation orientation = StackOrientation::axial;
    int stack_index = 0;  // global index within the study
    uint64_t seed = 0;    // stream used for this stack
    Vec3 in_plane_spacing{1, 1, 0}; // mm (z unused)
    double thickness = 0;           // mm
    double gap = 0;                 // mm
    int nu = 0, nv = 0;
    Grid frame; // 3D geometry: dims {nu, nv, n_slices}, z axis = slice normal
    std::vector<Slice> slices;

    int n_slices() const { return int(slices.size()); }

    // world position of pixel (u,v) in slice s (before motion)
    Vec3 pixel_world(int u, int v, int s) const {
        return world_from_voxel(frame, {double(u), double(v), double(s)});
    }
};

struct MotionSpec {
    double rot_range_deg = 5.0;  // uniform per slice, per axis
    double trans_range_mm = 3.0; // uniform per slice, per axis
    bool burst = false;          // contiguous runs share a drifting pose
    int burst_length = 4;
};

struct DropoutSpec {
    double probability = 0.1;   // per-slice Bernoulli
    double min_scale = 0.0;     // attenuation drawn uniform in [min,max]
    double max_scale = 0.5;
};

struct AcquisitionConfig {
    Vec3 in_plane_spacing{2, 2, 0};
    double thickness = 6.0;
    double gap = 0.0;
    int psf_samples = 32;
    double psf_fwhm_scale = 1.0; // shrink toward 0 for a near-delta PSF
    MotionSpec motion;
    DropoutSpec dropout;
    double noise_sigma = 2.0;
    uint64_t seed = 1;
};

// Stack frame covering the same world box as `cover`, with slices normal to
// the orientation axis.
inline Grid make_stack_frame(const Grid& cover, StackOrientation o, Vec3 in_plane,
                             double thickness, double gap) {
    Mat3 axes = orientation_axes(o);
    Vec3 ext = cover.extent();
    // extent along each slice-frame axis (cover grids are axis-aligned)
    Vec3 local_ext = axes.transposed() * ext;
    local_ext = {std::abs(local_ext.x), std::abs(local_ext.y), std::abs(local_ext.z)};
    const double step = thickness + gap;
    int nu = std::max(1, int(std::ceil(local_ext.x / in_plane.x)));
    int nv = std::max(1, int(std::ceil(local_ext.y / in_plane.y)));
    int ns = std::max(1, int(std::ceil(local_ext.z / step)));
    Grid frame;
    frame.dims = {nu, nv, ns};
    frame.spacing = {in_plane.x, in_plane.y, step};
    frame.orientation = axes;
    Vec3 mid{0.5 * (nu - 1) * in_plane.x, 0.5 * (nv - 1) * in_plane.y, 0.5 * (ns - 1) * step};
    frame.origin = cover.center() - axes * mid;
    return frame;
}

inline RigidPose sample_pose(const MotionSpec& m, Rng& rng) {
    const double r = m.rot_range_deg * M_PI / 180.0;
    RigidPose p;
    p.euler = {uniform(rng, -r, r), uniform(rng, -r, r), uniform(rng, -r, r)};
    p.translation = {uniform(rng, -m.trans_range_mm, m.trans_range_mm),
                     uniform(rng, -m.trans_range_mm, m.trans_range_mm),
                     uniform(rng, -m.trans_range_mm, m.trans_range_mm)};
    return p;
}

// Simulate one stack. Per-slice RNG streams are derived from
// (seed, stack_index, slice_index) so the result is independent of the
// parallel schedule.
inline SliceStack simulate_stack(const Volume& gt, double te, StackOrientation orientation,
                                 const AcquisitionConfig& cfg, int stack_index,
                                 std::optional<RigidPose> forced_pose = std::nullopt) {
    SliceStack stack;
    stack.te = te;
    stack.orientation = orientation;
    stack.stack_index = stack_index;
    stack.seed = cfg.seed;
    stack.in_plane_spacing = cfg.in_plane_spacing;
    stack.thickness = cfg.thickness;
    stack.gap = cfg.gap;
    stack.frame = make_stack_frame(gt.grid, orientation, cfg.in_plane_spacing, cfg.thickness,
                                   cfg.gap);
    stack.nu = stack.frame.dims[0];
    stack.nv = stack.frame.dims[1];
    const int ns = stack.frame.dims[2];
    stack.slices.assign(size_t(ns), Slice{});

    PsfModel psf = psf_covariance(cfg.in_plane_spacing.x, cfg.in_plane_spacing.y, cfg.thickness);
    if (cfg.psf_fwhm_scale != 1.0) {
        const double s2 = cfg.psf_fwhm_scale * cfg.psf_fwhm_scale;
        for (double& v : psf.covariance.m) v *= s2;
    }
    const Mat3 axes = stack.frame.orientation;
    const Vec3 rot_center = gt.grid.center();

    // burst mode: pose drift shared along runs of slices, drawn up front
    std::vector<RigidPose> burst_base;
    if (cfg.motion.burst) {
        Rng burst_rng(derive_seed(cfg.seed, {0x62757273ULL, uint64_t(stack_index)}));
        int runs = (ns + cfg.motion.burst_length - 1) / cfg.motion.burst_length;
        for (int r = 0; r < runs; ++r) burst_base.push_back(sample_pose(cfg.motion, burst_rng));
    }

    parallel_for(ns, [&](int64_t s0, int64_t s1) {
        for (int64_t s = s0; s < s1; ++s) {
            Slice& sl = stack.slices[size_t(s)];
            sl.index_in_stack = int(s);
            sl.stack_index = stack_index;
            sl.pixels.assign(size_t(stack.nu) * size_t(stack.nv), 0.0);
            sl.dropout_mask.assign(sl.pixels.size(), 1.0);

            Rng rng(derive_seed(cfg.seed, {0x736c6963ULL, uint64_t(stack_index), uint64_t(s)}));
            if (forced_pose) {
                sl.true_pose = *forced_pose;
            } else if (cfg.motion.burst) {
                RigidPose base = burst_base[size_t(s) / size_t(cfg.motion.burst_length)];
                RigidPose wobble = sample_pose(cfg.motion, rng);
                sl.true_pose.euler = base.euler + wobble.euler * 0.2;
                sl.true_pose.translation = base.translation + wobble.translation * 0.2;
            } else {
                sl.true_pose = sample_pose(cfg.motion, rng);
            }
            const Mat3 R = sl.true_pose.rotation();
            const Vec3 t = sl.true_pose.translation;

            const Vec3 sd = psf.stddev();
            double peak = 0.0;
            for (int v = 0; v < stack.nv; ++v)
                for (int u = 0; u < stack.nu; ++u) {
                    Vec3 w = stack.pixel_world(u, v, int(s));
                    Vec3 moved = R * (w - rot_center) + rot_center + t;
                    double acc = 0.0;
                    Vec3 off{0, 0, 0};
                    for (int j = 0; j < cfg.psf_samples; ++j) {
                        // antithetic pairs halve the Monte Carlo noise
                        if (j % 2 == 1)
                            off = -off;
                        else
                            off = {gaussian(rng, 0.0, sd.x), gaussian(rng, 0.0, sd.y),
                                   gaussian(rng, 0.0, sd.z)};
                        acc += gt.sample_world(moved + axes * off);
                    }
                    double val = acc / cfg.psf_samples;
                    sl.pixels[size_t(v) * size_t(stack.nu) + size_t(u)] = val;
                    peak = std::max(peak, std::abs(val));
                }
            sl.empty = peak == 0.0;

            // whole-slice dropout, then noise, then clamp to magnitude
            double drop = 1.0;
            if (cfg.dropout.probability > 0 &&
                uniform(rng, 0.0, 1.0) < cfg.dropout.probability)
                drop = uniform(rng, cfg.dropout.min_scale, cfg.dropout.max_scale);
            for (auto& m : sl.dropout_mask) m = drop;
            for (auto& px : sl.pixels) {
                px *= drop;
                if (cfg.noise_sigma > 0) px += gaussian(rng, 0.0, cfg.noise_sigma);
                px = std::max(px, 0.0);
            }
        }
    });
    return stack;
}

// Orientation schedule across TEs.
//   3 stacks/TE: axial + coronal + sagittal
//   2 stacks/TE: drop orientation (te_index mod 3), round-robin
//   1 stack/TE:  orientation (te_index mod 3), so views stay orthogonal
inline std::vector<StackOrientation> stack_orientations(int stacks_per_te, int te_index) {
    const StackOrientation all[3] = {StackOrientation::axial, StackOrientation::coronal,
                                     StackOrientation::sagittal};
    if (stacks_per_te == 3) return {all[0], all[1], all[2]};
    if (stacks_per_te == 2) {
        std::vector<StackOrientation> out;
        for (int i = 0; i < 3; ++i)
            if (i != te_index % 3) out.push_back(all[i]);
        return out;
    }
    if (stacks_per_te == 1) return {all[te_index % 3]};
    throw ConfigError("stacks_per_te must be 1, 2 or 3");
}

inline std::vector<SliceStack> simulate_study(const std::vector<Volume>& gt_volumes,
                                              const std::vector<double>& tes, int stacks_per_te,
                                              const AcquisitionConfig& cfg) {
    if (gt_volumes.size() != tes.size())
        throw DataError("simulate_study: one ground-truth volume per TE required");
    if (stacks_per_te < 1 || stacks_per_te > 3)
        throw ConfigError("simulate_study: stacks_per_te must be 1, 2 or 3");
    std::vector<SliceStack> stacks;
    int stack_index = 0;
    for (size_t i = 0; i < tes.size(); ++i) {
        for (StackOrientation o : stack_orientations(stacks_per_te, int(i))) {
            stacks.push_back(
                simulate_stack(gt_volumes[i], tes[i], o, cfg, stack_index));
            ++stack_index;
        }
    }
    return stacks;
}

// ---------------------------------------------------------------- file I/O
// One QVOL per stack (slices as z-planes), a sidecar text file with the
// acquisition metadata, and a separate ground-truth-only file of true poses.

inline Volume stack_as_volume(const SliceStack& stack) {
    Volume vol(stack.frame, Semantics::intensity);
    for (int s = 0; s < stack.n_slices(); ++s)
        for (int v = 0; v < stack.nv; ++v)
            for (int u = 0; u < stack.nu; ++u)
                vol.at(u, v, s) = stack.slices[size_t(s)].pixels[size_t(v) * size_t(stack.nu) + size_t(u)];
    return vol;
}

inline void write_stack(const SliceStack& stack, const std::string& prefix) {
    write_qvol(stack_as_volume(stack), prefix + ".qvol");
    std::ofstream meta(prefix + ".meta");
    if (!meta) throw DataError("write_stack: cannot open " + prefix + ".meta");
    meta.precision(17);
    meta << "te = " << stack.te << "\n";
    meta << "orientation = " << orientation_name(stack.orientation) << "\n";
    meta << "stack_index = " << stack.stack_index << "\n";
    meta << "in_plane_spacing = " << stack.in_plane_spacing.x << " " << stack.in_plane_spacing.y
         << "\n";
    meta << "thickness = " << stack.thickness << "\n";
    meta << "gap = " << stack.gap << "\n";
    meta << "seed = " << stack.seed << "\n";
    meta << "n_slices = " << stack.n_slices() << "\n";
    std::ostringstream drops, empties;
    drops.precision(17);
    for (const auto& sl : stack.slices) {
        drops << " " << (sl.dropout_mask.empty() ? 1.0 : sl.dropout_mask.front());
        empties << " " << (sl.empty ? 1 : 0);
    }
    meta << "dropout_scales =" << drops.str() << "\n";
    meta << "empty_flags =" << empties.str() << "\n";

    // ground-truth poses live in their own file so reconstruction code can
    // be pointed at data without them
    std::ofstream truth(prefix + ".true_poses");
    if (!truth) throw DataError("write_stack: cannot open " + prefix + ".true_poses");
    truth.precision(17);
    truth << "# stack_index slice_index rx ry rz tx ty tz (radians, mm)\n";
    for (const auto& sl : stack.slices)
        truth << sl.stack_index << " " << sl.index_in_stack << " " << sl.true_pose.euler.x << " "
              << sl.true_pose.euler.y << " " << sl.true_pose.euler.z << " "
              << sl.true_pose.translation.x << " " << sl.true_pose.translation.y << " "
              << sl.true_pose.translation.z << "\n";
}

inline SliceStack read_stack(const std::string& prefix, bool with_truth = false) {
    Volume vol = read_qvol(prefix + ".qvol");
    std::ifstream meta(prefix + ".meta");
    if (!meta) throw MissingInputError("read_stack: cannot open " + prefix + ".meta");
    SliceStack stack;
    stack.frame = vol.grid;
    stack.nu = vol.grid.dims[0];
    stack.nv = vol.grid.dims[1];
    const int ns = vol.grid.dims[2];
    std::vector<double> drop_scales;
    std::vector<int> empty_flags;
    std::string line;
    while (std::getline(meta, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        std::istringstream val(line.substr(eq + 1));
        if (key == "te") val >> stack.te;
        else if (key == "orientation") {
            std::string o;
            val >> o;
            if (o == "axial") stack.orientation = StackOrientation::axial;
            else if (o == "coronal") stack.orientation = StackOrientation::coronal;
            else if (o == "sagittal") stack.orientation = StackOrientation::sagittal;
            else throw DataError("read_stack: unknown orientation " + o);
        } else if (key == "stack_index") val >> stack.stack_index;
        else if (key == "in_plane_spacing") val >> stack.in_plane_spacing.x >> stack.in_plane_spacing.y;
        else if (key == "thickness") val >> stack.thickness;
        else if (key == "gap") val >> stack.gap;
        else if (key == "seed") val >> stack.seed;
        else if (key == "dropout_scales") {
            double d;
            while (val >> d) drop_scales.push_back(d);
        } else if (key == "empty_flags") {
            int f;
            while (val >> f) empty_flags.push_back(f);
        }
    }
    stack.slices.assign(size_t(ns), Slice{});
    for (int s = 0; s < ns; ++s) {
        Slice& sl = stack.slices[size_t(s)];
        sl.index_in_stack = s;
        sl.stack_index = stack.stack_index;
        sl.pixels.assign(size_t(stack.nu) * size_t(stack.nv), 0.0);
        for (int v = 0; v < stack.nv; ++v)
            for (int u = 0; u < stack.nu; ++u)
                sl.pixels[size_t(v) * size_t(stack.nu) + size_t(u)] = vol.at(u, v, s);
        double drop = s < int(drop_scales.size()) ? drop_scales[size_t(s)] : 1.0;
        sl.dropout_mask.assign(sl.pixels.size(), drop);
        sl.empty = s < int(empty_flags.size()) && empty_flags[size_t(s)] != 0;
    }
    if (with_truth) {
        std::ifstream truth(prefix + ".true_poses");
        if (!truth) throw MissingInputError("read_stack: cannot open " + prefix + ".true_poses");
        while (std::getline(truth, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ss(line);
            int sidx, slidx;
            RigidPose p;
            if (ss >> sidx >> slidx >> p.euler.x >> p.euler.y >> p.euler.z >> p.translation.x >>
                p.translation.y >> p.translation.z) {
                if (slidx >= 0 && slidx < ns) stack.slices[size_t(slidx)].true_pose = p;
            }
        }
    }
    return stack;
}

} // namespace t2forge
