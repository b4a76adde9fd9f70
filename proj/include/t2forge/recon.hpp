// Reconstruction engine.
//
// Two SIREN networks are trained jointly and self-supervised:
//   * the SR network maps a normalized 3D coordinate to one intensity per TE;
//   * the slice network maps a per-slice encoding (stack index, slice index)
//     to a rigid pose plus calibration (intensity scale sigma, weight omega).
// Slice pixels are simulated from the SR network through a Monte Carlo
// Gaussian PSF at motion-corrected positions and matched to the measured
// pixels with a weighted mean-absolute-error loss; the MC_Reg variant adds
// alpha * R_T2, the mean squared OLS log-decay residual over volume
// coordinates.
//
// Variants:
//   SC      one single-channel SR network (and slice network) per TE
//   MC      one shared SR network with one output channel per TE
//   MC_Reg  MC plus the T2-decay regularizer
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <tuple>

#include "t2forge/acquisition.hpp"
#include "t2forge/neural.hpp"
#include "t2forge/relaxometry.hpp"

namespace t2forge {

enum class Variant : uint8_t { sc = 0, mc = 1, mc_reg = 2 };

inline const char* variant_name(Variant v) {
    switch (v) {
    case Variant::sc: return "sc";
    case Variant::mc: return "mc";
    case Variant::mc_reg: return "mc-reg";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "sc") return Variant::sc;
    if (s == "mc") return Variant::mc;
    if (s == "mc-reg" || s == "mc_reg" || s == "mcreg") return Variant::mc_reg;
    throw ConfigError("unknown variant: " + s);
}

struct ReconConfig {
    Variant variant = Variant::mc_reg;
    double alpha = 0.5; // regularizer weight; forced to 0 unless MC_Reg
    int epochs = 50;
    int warmup_epochs = 2; // slice network frozen at identity poses
    int psf_samples = 4;   // K per pixel during reconstruction
    int batch_size = 4096; // pixels per step
    double lr_sr = 1e-4;
    double lr_slice = 1e-4;
    std::vector<double> tes; // ms
    Grid hr_grid;
    uint64_t seed = 0;

    // network shapes
    int sr_width = 128;
    int sr_depth = 3; // hidden layers
    int slice_width = 32;
    double omega0 = 30.0;
    double omega0_first = 0.0; // first-layer frequency scale; 0 = same as omega0

    // pose head output scaling (raw outputs are O(1))
    double rot_scale = 0.3;    // rad per raw unit
    double trans_scale = 15.0; // mm per raw unit

    // regularizer sampling
    int reg_points = 4096;
    double reg_gate_threshold = 0.02; // train-time foreground gate, normalized units

    // training-pixel selection
    double fg_threshold = 0.05;     // normalized intensity above which a pixel is foreground
    double bg_keep_fraction = 0.25; // deterministic subsample of background pixels

    // calibration-head stabilizers
    double lambda_omega = 0.01;  // -log(omega) barrier against weight collapse
    double lambda_sigma = 0.01;  // (log sigma)^2 anchor on the per-slice scale
    double lambda_pose = 1e-4;   // per-slice raw-pose damping
    double lambda_gauge = 0.05;  // penalty on the mean raw pose; pins the global frame

    // cosine decay of both learning rates to lr/20 across the epochs
    bool lr_decay = true;

    void validate() const {
        if (epochs < 1) throw ConfigError("ReconConfig: epochs must be >= 1");
        if (psf_samples < 1) throw ConfigError("ReconConfig: psf_samples must be >= 1");
        if (batch_size < 1) throw ConfigError("ReconConfig: batch_size must be >= 1");
        if (tes.size() < 1) throw ConfigError("ReconConfig: need at least one TE");
        if (variant != Variant::mc_reg && alpha != 0.0)
            throw ConfigError("ReconConfig: alpha must be 0 unless variant is mc-reg");
        if (alpha < 0) throw ConfigError("ReconConfig: alpha must be >= 0");
        hr_grid.validate();
    }

    double effective_alpha() const { return variant == Variant::mc_reg ? alpha : 0.0; }
};

struct SliceCalibration {
    double sigma = 1.0; // intensity scale, > 0
    double omega = 1.0; // loss weight in (0,1]
};

// ------------------------------------------------------------- coordinates

// Normalized coordinates: the HR grid box maps to [-1,1]^3; rotation center
// for slice poses is the HR grid center.
struct NormInfo {
    Vec3 center{0, 0, 0};
    Vec3 half{1, 1, 1};

    static NormInfo from_grid(const Grid& g) {
        NormInfo n;
        n.center = g.center();
        n.half = g.extent() * 0.5;
        return n;
    }
    Vec3 normalize(const Vec3& world) const {
        return (world - center).cdiv(half);
    }
    Vec3 denormalize(const Vec3& n) const { return n.cmul(half) + center; }
};

// ------------------------------------------------------------- slice head

inline constexpr double kSigmaHeadOffset = 0.5413248546129181; // softplus(x) = 1
inline constexpr double kOmegaHeadOffset = 2.1972245773362196; // sigmoid(x) = 0.9

struct SliceHead {
    RigidPose pose;
    SliceCalibration calib;
    Mat3 rotation;
    Mat3 rotation_d[3]; // dR/d(euler component)
    double dsigma_draw = 0;
    double domega_draw = 0;
};

inline SliceHead decode_slice_head(const double* raw, const ReconConfig& cfg) {
    SliceHead h;
    h.pose.euler = {raw[0] * cfg.rot_scale, raw[1] * cfg.rot_scale, raw[2] * cfg.rot_scale};
    h.pose.translation = {raw[3] * cfg.trans_scale, raw[4] * cfg.trans_scale,
                          raw[5] * cfg.trans_scale};
    h.rotation = euler_to_matrix(h.pose.euler);
    for (int a = 0; a < 3; ++a) h.rotation_d[a] = euler_rotation_derivative(h.pose.euler, a);
    h.calib.sigma = softplus(raw[6] + kSigmaHeadOffset);
    h.dsigma_draw = sigmoid(raw[6] + kSigmaHeadOffset);
    h.calib.omega = sigmoid(raw[7] + kOmegaHeadOffset);
    h.domega_draw = h.calib.omega * (1.0 - h.calib.omega);
    return h;
}

// ------------------------------------------------------------- sample batch

struct SampleBatch {
    int k_psf = 1;
    std::vector<int> slice_id;                 // per pixel, index into the slice table
    std::vector<int> te_index;                 // per pixel
    std::vector<std::array<int, 2>> pixel_uv;  // per pixel
    std::vector<double> target;                // per pixel, normalized units
    std::vector<Vec3> offsets;                 // k_psf per pixel, slice-frame mm

    size_t size() const { return target.size(); }
};

// One row per slice available to the trainer.
struct SliceEntry {
    int stack_index = 0; // global stack index
    int slice_index = 0;
    int te_index = 0;
    int channel = 0; // SR output channel for this slice
    Mat3 axes;
    Grid frame;
    Vec3 psf_stddev;
    double enc[2] = {0, 0};
    const Slice* pixels = nullptr;
};

// ------------------------------------------------------------- operations

// Predicted intensity of one slice pixel:
//   sigma * (1/K) sum_j net(normalize(T_pose(world) + axes * offset_j))[channel]
inline double simulate_slice_pixel(const SirenNetwork& sr, const RigidPose& pose,
                                   const SliceCalibration& calib, const Vec3& pixel_world,
                                   std::span<const Vec3> offsets, const Mat3& slice_axes,
                                   int channel, const NormInfo& norm) {
    if (offsets.empty()) throw ContractViolation("simulate_slice_pixel: need PSF offsets");
    Mat X(int(offsets.size()), 3);
    Vec3 moved = pose.rotation() * (pixel_world - norm.center) + norm.center + pose.translation;
    for (size_t j = 0; j < offsets.size(); ++j) {
        Vec3 p = norm.normalize(moved + slice_axes * offsets[j]);
        X(int(j), 0) = p.x;
        X(int(j), 1) = p.y;
        X(int(j), 2) = p.z;
    }
    Mat Y = forward(sr, X);
    double acc = 0;
    for (int j = 0; j < Y.rows; ++j) acc += Y(j, channel);
    return calib.sigma * acc / double(Y.rows);
}

// Weighted multi-TE data loss: mean over TEs present in the batch of the
// mean over that TE's slices of the omega-weighted per-slice mean absolute
// error.
inline double data_loss(const SampleBatch& batch, std::span<const double> predictions,
                        std::span<const SliceCalibration> calib) {
    if (predictions.size() != batch.size())
        throw ContractViolation("data_loss: prediction count mismatch");
    std::map<int, std::map<int, std::pair<double, int>>> groups; // te -> slice -> (sum, n)
    for (size_t p = 0; p < batch.size(); ++p) {
        auto& cell = groups[batch.te_index[p]][batch.slice_id[p]];
        cell.first += std::abs(batch.target[p] - predictions[p]);
        cell.second += 1;
    }
    double te_acc = 0;
    for (const auto& [te, slices] : groups) {
        double slice_acc = 0;
        for (const auto& [sid, cell] : slices) {
            double w = calib[size_t(sid)].omega;
            slice_acc += w * cell.first / double(cell.second);
        }
        te_acc += slice_acc / double(slices.size());
    }
    return te_acc / double(groups.size());
}

// ------------------------------------------------------------- regularizer

struct RegOptions {
    double eps_scale = 1e-6;     // eps = eps_scale * per-TE median prediction
    double eps_floor = 0.0;      // absolute lower bound on eps
    double gate_threshold = 0.0; // skip coordinates whose peak channel is below this
};

namespace detail {

// forward + cotangent core shared by the public operation and the trainer;
// returns mean_c ||A log(Y_c + eps)||^2 over gated coordinates and fills
// dL/dY when requested.
inline double reg_core(const Mat& Y, const T2FitSystem& sys, const RegOptions& opt, Mat* dY) {
    const int N = sys.n();
    if (Y.cols != N) throw ContractViolation("regularizer: channel count != TE count");
    if (N < 2) throw ConfigError("regularizer: needs at least two TEs");
    const int C = Y.rows;
    // per-TE medians for the log guard
    std::vector<double> eps(size_t(N), 0.0);
    {
        std::vector<double> col(static_cast<size_t>(C));
        for (int i = 0; i < N; ++i) {
            for (int c = 0; c < C; ++c) col[size_t(c)] = Y(c, i);
            auto mid = col.begin() + C / 2;
            std::nth_element(col.begin(), mid, col.end());
            eps[size_t(i)] = std::max(opt.eps_scale * *mid, opt.eps_floor);
        }
    }
    if (dY) {
        dY->resize(C, N);
        dY->zero();
    }
    std::vector<double> y(size_t(N), 0.0), r(size_t(N), 0.0), rr(size_t(N), 0.0);
    double acc = 0;
    int64_t gated = 0;
    for (int c = 0; c < C; ++c) {
        if (opt.gate_threshold > 0) {
            double peak = 0;
            for (int i = 0; i < N; ++i) peak = std::max(peak, Y(c, i));
            if (peak < opt.gate_threshold) continue;
        }
        for (int i = 0; i < N; ++i) y[size_t(i)] = std::log(Y(c, i) + eps[size_t(i)]);
        sys.apply_residual(y.data(), r.data());
        double e = 0;
        for (int i = 0; i < N; ++i) e += r[size_t(i)] * r[size_t(i)];
        acc += e;
        ++gated;
        if (dY) {
            // d||Ay||^2/dy = 2 A^T A y = 2 A(Ay); chain through the log
            sys.apply_residual(r.data(), rr.data());
            for (int i = 0; i < N; ++i)
                (*dY)(c, i) = 2.0 * rr[size_t(i)] / (Y(c, i) + eps[size_t(i)]);
        }
    }
    if (gated == 0) return 0.0;
    const double inv = 1.0 / double(gated);
    if (dY) {
        for (double& v : dY->a) v *= inv;
    }
    return acc * inv;
}

} // namespace detail

// Physics regularizer R_T2 over a batch of normalized coordinates.
inline double regularizer_batch(const SirenNetwork& sr, const Mat& coords,
                                const T2FitSystem& sys, const RegOptions& opt = {}) {
    Mat Y = forward(sr, coords);
    return detail::reg_core(Y, sys, opt, nullptr);
}

// ------------------------------------------------------------- results

struct SlicePoseEstimate {
    int stack_index = 0;
    int slice_index = 0;
    RigidPose pose;
    SliceCalibration calib;
};

struct EpochLoss {
    double data = 0;
    double reg = 0;
};

struct TrainResult {
    std::vector<Volume> volumes; // per TE, original intensity units
    std::vector<SlicePoseEstimate> poses;
    std::vector<EpochLoss> loss_history;
    std::vector<SirenNetwork> sr_nets; // 1 (mc, mc_reg) or N (sc)
    std::vector<SirenNetwork> slice_nets;
    double intensity_scale = 1.0;
    NormInfo norm;
    bool aborted = false;
    std::string abort_reason;
};

// Evaluate SR channel `te_channel` at every voxel center of `grid`.
inline Volume render_volume(const SirenNetwork& sr, const Grid& grid, int te_channel,
                            const NormInfo& norm, double scale = 1.0) {
    Volume out(grid, Semantics::intensity);
    const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
    const int chunk_planes = std::max(1, (1 << 18) / std::max(1, nx * ny));
    for (int kz = 0; kz < nz; kz += chunk_planes) {
        const int kend = std::min(nz, kz + chunk_planes);
        Mat X((kend - kz) * ny * nx, 3);
        int row = 0;
        for (int k = kz; k < kend; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    Vec3 p = norm.normalize(world_from_voxel(grid, {double(i), double(j), double(k)}));
                    X(row, 0) = p.x;
                    X(row, 1) = p.y;
                    X(row, 2) = p.z;
                    ++row;
                }
        Mat Y = forward(sr, X);
        row = 0;
        for (int k = kz; k < kend; ++k)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) out.at(i, j, k) = scale * Y(row++, te_channel);
    }
    return out;
}

// ------------------------------------------------------------- trainer

namespace detail {

struct PixelRef {
    int slice_id;
    uint16_t u, v;
    double target; // normalized
};

// One self-contained training problem (the whole study for MC/MC_Reg, a
// single TE for SC).
struct Problem {
    std::vector<SliceEntry> slices;
    std::vector<PixelRef> pixels;
    std::vector<int> te_indices; // TE indices covered, ascending
    int channels = 1;
};

struct ModelState {
    SirenNetwork sr;
    SirenNetwork slice;
    AdamState opt_sr;
    AdamState opt_slice;
};

inline SirenNetwork make_slice_net(const ReconConfig& cfg, uint64_t seed) {
    SirenSpec spec;
    spec.input_dim = 2;
    spec.hidden = {cfg.slice_width, cfg.slice_width};
    spec.output_dim = 8; // 3 rot + 3 trans + sigma + omega
    spec.omega0 = cfg.omega0;
    spec.output_activation = OutputActivation::none;
    SirenNetwork net = make_siren(spec, seed);
    // zero the head so training starts from identity poses and unit scale
    for (double& w : net.weights(net.layer_count() - 1)) w = 0.0;
    for (double& b : net.biases(net.layer_count() - 1)) b = 0.0;
    net.bump_version();
    return net;
}

inline SirenNetwork make_sr_net(const ReconConfig& cfg, int channels, uint64_t seed) {
    SirenSpec spec;
    spec.input_dim = 3;
    spec.hidden.assign(size_t(cfg.sr_depth), cfg.sr_width);
    spec.output_dim = channels;
    spec.omega0 = cfg.omega0;
    spec.output_activation = OutputActivation::softplus;
    SirenNetwork net = make_siren(spec, seed);
    if (cfg.omega0_first > 0) net.omega0.front() = cfg.omega0_first;
    return net;
}

// Objective of one step, as a pure function of the parameters and a frozen
// batch: data term (+ calibration stabilizers) + alpha * R_T2 on reg_coords.
// Gradients are accumulated when sr_grads / slice_grads are non-null.
struct StepStats {
    double data_loss = 0;
    double reg_loss = 0;
    double stabilizer = 0;
    double total() const { return data_loss + stabilizer + reg_loss; }
};

inline StepStats step_objective(const Problem& prob, ModelState& model, const SampleBatch& batch,
                                const Mat* reg_coords, const T2FitSystem* sys,
                                const ReconConfig& cfg, const NormInfo& norm,
                                SirenGradients* sr_grads, SirenGradients* slice_grads) {
    const int B = int(batch.size());
    const int K = batch.k_psf;
    const double alpha = cfg.effective_alpha();
    StepStats stats;

    // slice network forward on the slices present (sorted for determinism)
    std::vector<int> present;
    present.reserve(size_t(B));
    {
        std::set<int> uniq(batch.slice_id.begin(), batch.slice_id.end());
        present.assign(uniq.begin(), uniq.end());
    }
    std::map<int, int> local_of;
    Mat enc(int(present.size()), 2);
    for (size_t s = 0; s < present.size(); ++s) {
        local_of[present[s]] = int(s);
        enc(int(s), 0) = prob.slices[size_t(present[s])].enc[0];
        enc(int(s), 1) = prob.slices[size_t(present[s])].enc[1];
    }
    GradientTape slice_tape;
    Mat raw = forward(model.slice, enc, slice_grads ? &slice_tape : nullptr);
    std::vector<SliceHead> heads(present.size());
    for (size_t s = 0; s < present.size(); ++s)
        heads[s] = decode_slice_head(raw.row(int(s)), cfg);

    // SR forward through the PSF at motion-corrected positions
    Mat X(B * K, 3);
    std::vector<Vec3> centered(static_cast<size_t>(B)); // pixel world - rotation center
    for (int p = 0; p < B; ++p) {
        const SliceEntry& se = prob.slices[size_t(batch.slice_id[size_t(p)])];
        const SliceHead& h = heads[size_t(local_of[batch.slice_id[size_t(p)]])];
        Vec3 w = world_from_voxel(se.frame, {double(batch.pixel_uv[size_t(p)][0]),
                                             double(batch.pixel_uv[size_t(p)][1]),
                                             double(se.slice_index)});
        centered[size_t(p)] = w - norm.center;
        Vec3 moved = h.rotation * centered[size_t(p)] + norm.center + h.pose.translation;
        for (int j = 0; j < K; ++j) {
            Vec3 x = norm.normalize(moved + se.axes * batch.offsets[size_t(p) * size_t(K) + size_t(j)]);
            double* row = X.row(p * K + j);
            row[0] = x.x;
            row[1] = x.y;
            row[2] = x.z;
        }
    }
    GradientTape sr_tape;
    Mat Y = forward(model.sr, X, sr_grads ? &sr_tape : nullptr);

    // predictions and the nested-mean loss
    std::vector<double> pred(static_cast<size_t>(B), 0.0), psf_mean(static_cast<size_t>(B), 0.0);
    for (int p = 0; p < B; ++p) {
        const int ch = prob.slices[size_t(batch.slice_id[size_t(p)])].channel;
        double acc = 0;
        for (int j = 0; j < K; ++j) acc += Y(p * K + j, ch);
        psf_mean[size_t(p)] = acc / double(K);
        pred[size_t(p)] =
            heads[size_t(local_of[batch.slice_id[size_t(p)]])].calib.sigma * psf_mean[size_t(p)];
    }

    // group pixels: te -> slice -> pixel list
    std::map<int, std::map<int, std::vector<int>>> groups;
    for (int p = 0; p < B; ++p)
        groups[batch.te_index[size_t(p)]][batch.slice_id[size_t(p)]].push_back(p);

    const double n_te = double(groups.size());
    std::vector<double> pixel_cotangent(size_t(B), 0.0); // dL/dpred
    std::vector<double> dsigma(present.size(), 0.0), domega(present.size(), 0.0);
    for (const auto& [te, slices] : groups) {
        const double n_sl = double(slices.size());
        for (const auto& [sid, plist] : slices) {
            const SliceHead& h = heads[size_t(local_of.at(sid))];
            const double inv_np = 1.0 / double(plist.size());
            double mean_abs = 0;
            for (int p : plist) {
                const double r = batch.target[size_t(p)] - pred[size_t(p)];
                mean_abs += std::abs(r);
                const double sgn = r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
                pixel_cotangent[size_t(p)] = -sgn * h.calib.omega * inv_np / (n_sl * n_te);
            }
            mean_abs *= inv_np;
            stats.data_loss += h.calib.omega * mean_abs / (n_sl * n_te);
            domega[size_t(local_of.at(sid))] += mean_abs / (n_sl * n_te);
        }
    }

    // calibration stabilizers: keep omega away from 0 and sigma near 1, and
    // damp the raw pose outputs so the global gauge stays pinned
    const double n_present = double(present.size());
    std::vector<double> dpose_raw(present.size() * 6, 0.0);
    for (size_t s = 0; s < present.size(); ++s) {
        const double w = heads[s].calib.omega, sg = heads[s].calib.sigma;
        if (cfg.lambda_omega > 0) {
            stats.stabilizer += -cfg.lambda_omega * std::log(w) / n_present;
            domega[s] += -cfg.lambda_omega / (w * n_present);
        }
        if (cfg.lambda_sigma > 0) {
            const double ls = std::log(sg);
            stats.stabilizer += cfg.lambda_sigma * ls * ls / n_present;
            dsigma[s] += 2.0 * cfg.lambda_sigma * ls / (sg * n_present);
        }
        if (cfg.lambda_pose > 0) {
            for (int m = 0; m < 6; ++m) {
                const double rawm = raw(int(s), m);
                stats.stabilizer += cfg.lambda_pose * rawm * rawm / n_present;
                dpose_raw[s * 6 + size_t(m)] = 2.0 * cfg.lambda_pose * rawm / n_present;
            }
        }
    }
    // the mean pose over slices is the gauge freedom of the self-supervised
    // problem; true per-slice motion is zero-mean, so pin the mean at zero
    if (cfg.lambda_gauge > 0) {
        for (int m = 0; m < 6; ++m) {
            double mu = 0;
            for (size_t s = 0; s < present.size(); ++s) mu += raw(int(s), m);
            mu /= n_present;
            stats.stabilizer += cfg.lambda_gauge * mu * mu;
            const double g = 2.0 * cfg.lambda_gauge * mu / n_present;
            for (size_t s = 0; s < present.size(); ++s) dpose_raw[s * 6 + size_t(m)] += g;
        }
    }

    // regularizer
    Mat dYreg;
    GradientTape reg_tape;
    Mat Yreg;
    if (alpha > 0 && reg_coords && sys) {
        Yreg = forward(model.sr, *reg_coords, sr_grads ? &reg_tape : nullptr);
        RegOptions opt;
        opt.eps_scale = 1e-6;
        opt.eps_floor = 1e-8;
        opt.gate_threshold = cfg.reg_gate_threshold;
        stats.reg_loss = alpha * reg_core(Yreg, *sys, opt, sr_grads ? &dYreg : nullptr);
    }

    if (!sr_grads) return stats;

    // ---- backward ----
    Mat dY(B * K, prob.channels);
    for (int p = 0; p < B; ++p) {
        const int ch = prob.slices[size_t(batch.slice_id[size_t(p)])].channel;
        const SliceHead& h = heads[size_t(local_of.at(batch.slice_id[size_t(p)]))];
        const double g = pixel_cotangent[size_t(p)] * h.calib.sigma / double(K);
        for (int j = 0; j < K; ++j) dY(p * K + j, ch) = g;
        dsigma[size_t(local_of.at(batch.slice_id[size_t(p)]))] +=
            pixel_cotangent[size_t(p)] * psf_mean[size_t(p)];
    }
    Mat dX;
    backward(model.sr, sr_tape, dY, *sr_grads, slice_grads ? &dX : nullptr);

    if (alpha > 0 && reg_coords && sys && dYreg.rows > 0) {
        for (double& v : dYreg.a) v *= alpha;
        backward(model.sr, reg_tape, dYreg, *sr_grads, nullptr);
    }

    if (!slice_grads) return stats;

    // pose cotangents: world gradient of each pixel, then chain through
    // T_psi(w) = R(w - c) + c + t
    Mat draw(int(present.size()), 8);
    const Vec3 inv_half{1.0 / norm.half.x, 1.0 / norm.half.y, 1.0 / norm.half.z};
    for (int p = 0; p < B; ++p) {
        const int lid = local_of.at(batch.slice_id[size_t(p)]);
        const SliceHead& h = heads[size_t(lid)];
        Vec3 gw{0, 0, 0};
        for (int j = 0; j < K; ++j) {
            const double* gx = dX.row(p * K + j);
            gw += Vec3{gx[0], gx[1], gx[2]};
        }
        gw = gw.cmul(inv_half); // normalize() jacobian
        double* d = draw.row(lid);
        for (int a = 0; a < 3; ++a)
            d[a] += cfg.rot_scale * gw.dot(h.rotation_d[a] * centered[size_t(p)]);
        d[3] += cfg.trans_scale * gw.x;
        d[4] += cfg.trans_scale * gw.y;
        d[5] += cfg.trans_scale * gw.z;
    }
    for (size_t s = 0; s < present.size(); ++s) {
        for (int m = 0; m < 6; ++m) draw(int(s), m) += dpose_raw[s * 6 + size_t(m)];
        draw(int(s), 6) = dsigma[s] * heads[s].dsigma_draw;
        draw(int(s), 7) = domega[s] * heads[s].domega_draw;
    }
    backward(model.slice, slice_tape, draw, *slice_grads, nullptr);
    return stats;
}

} // namespace detail

// ------------------------------------------------------------- train()

namespace detail {

inline Problem build_problem(const std::vector<SliceStack>& stacks,
                             const std::vector<double>& tes, const ReconConfig& cfg,
                             const NormInfo& norm, double scale,
                             int only_te /* -1 for all */) {
    Problem prob;
    std::vector<int> stack_of_slice;
    // stacks participating (all, or one TE's)
    std::vector<const SliceStack*> used;
    for (const auto& st : stacks) {
        int te_idx = -1;
        for (size_t i = 0; i < tes.size(); ++i)
            if (std::abs(st.te - tes[i]) < 1e-9) te_idx = int(i);
        if (te_idx < 0) throw DataError("train: stack TE not in config.tes");
        if (only_te >= 0 && te_idx != only_te) continue;
        used.push_back(&st);
    }
    if (used.empty()) throw DataError("train: no stacks for problem");
    int max_slices = 1;
    for (auto* st : used) max_slices = std::max(max_slices, st->n_slices());

    std::set<int> te_set;
    for (size_t u = 0; u < used.size(); ++u) {
        const SliceStack& st = *used[u];
        int te_idx = 0;
        for (size_t i = 0; i < tes.size(); ++i)
            if (std::abs(st.te - tes[i]) < 1e-9) te_idx = int(i);
        te_set.insert(te_idx);
        const PsfModel psf =
            psf_covariance(st.in_plane_spacing.x, st.in_plane_spacing.y, st.thickness);
        for (int s = 0; s < st.n_slices(); ++s) {
            const Slice& sl = st.slices[size_t(s)];
            if (sl.empty) continue; // no support in the volume
            SliceEntry se;
            se.stack_index = st.stack_index;
            se.slice_index = s;
            se.te_index = te_idx;
            se.channel = only_te >= 0 ? 0 : te_idx;
            se.axes = st.frame.orientation;
            se.frame = st.frame;
            se.psf_stddev = psf.stddev();
            se.enc[0] = used.size() > 1 ? 2.0 * double(u) / double(used.size() - 1) - 1.0 : 0.0;
            se.enc[1] = max_slices > 1 ? 2.0 * double(s) / double(max_slices - 1) - 1.0 : 0.0;
            se.pixels = &sl;
            prob.slices.push_back(se);
        }
    }
    prob.te_indices.assign(te_set.begin(), te_set.end());
    prob.channels = only_te >= 0 ? 1 : int(tes.size());

    // training pixels: all foreground plus a deterministic background subsample
    for (size_t sid = 0; sid < prob.slices.size(); ++sid) {
        const SliceEntry& se = prob.slices[sid];
        const int nu = se.frame.dims[0], nv = se.frame.dims[1];
        for (int v = 0; v < nv; ++v)
            for (int u = 0; u < nu; ++u) {
                const double t = se.pixels->pixels[size_t(v) * size_t(nu) + size_t(u)] / scale;
                if (t <= cfg.fg_threshold) {
                    const uint64_t h = derive_seed(
                        cfg.seed, {0x62670000ULL, uint64_t(se.stack_index),
                                   uint64_t(se.slice_index), uint64_t(v) << 16 | uint64_t(u)});
                    if (double(h >> 11) * 0x1.0p-53 >= cfg.bg_keep_fraction) continue;
                }
                prob.pixels.push_back({int(sid), uint16_t(u), uint16_t(v), t});
            }
    }
    if (prob.pixels.empty()) throw DataError("train: no usable pixels in the input stacks");
    return prob;
}

// normalized-domain box that encloses the observed foreground
inline std::pair<Vec3, Vec3> reg_sampling_box(const Problem& prob, const NormInfo& norm,
                                              double fg_threshold) {
    Vec3 lo{1, 1, 1}, hi{-1, -1, -1};
    bool any = false;
    for (const auto& px : prob.pixels) {
        if (px.target <= fg_threshold) continue;
        const SliceEntry& se = prob.slices[size_t(px.slice_id)];
        Vec3 n = norm.normalize(
            world_from_voxel(se.frame, {double(px.u), double(px.v), double(se.slice_index)}));
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], n[a]);
            hi[a] = std::max(hi[a], n[a]);
        }
        any = true;
    }
    if (!any) return {{-1, -1, -1}, {1, 1, 1}};
    for (int a = 0; a < 3; ++a) {
        lo[a] = std::clamp(lo[a] - 0.1, -1.0, 1.0);
        hi[a] = std::clamp(hi[a] + 0.1, -1.0, 1.0);
    }
    return {lo, hi};
}

inline SampleBatch assemble_batch(const Problem& prob, const std::vector<int>& order,
                                  size_t begin, size_t end, int k_psf, Rng& rng) {
    SampleBatch batch;
    batch.k_psf = k_psf;
    const size_t n = end - begin;
    batch.slice_id.reserve(n);
    batch.te_index.reserve(n);
    batch.pixel_uv.reserve(n);
    batch.target.reserve(n);
    batch.offsets.reserve(n * size_t(k_psf));
    for (size_t i = begin; i < end; ++i) {
        const PixelRef& px = prob.pixels[size_t(order[i])];
        const SliceEntry& se = prob.slices[size_t(px.slice_id)];
        batch.slice_id.push_back(px.slice_id);
        batch.te_index.push_back(se.te_index);
        batch.pixel_uv.push_back({int(px.u), int(px.v)});
        batch.target.push_back(px.target);
        // antithetic pairs cancel the locally linear part of the PSF noise
        for (int j = 0; j < k_psf; ++j) {
            if (j % 2 == 1) {
                batch.offsets.push_back(-batch.offsets.back());
            } else {
                batch.offsets.push_back({gaussian(rng, 0.0, se.psf_stddev.x),
                                         gaussian(rng, 0.0, se.psf_stddev.y),
                                         gaussian(rng, 0.0, se.psf_stddev.z)});
            }
        }
    }
    return batch;
}

struct ProblemRun {
    Problem prob;
    ModelState model;
    std::vector<EpochLoss> history;
    bool aborted = false;
    std::string abort_reason;
};

inline void train_problem(ProblemRun& run, const ReconConfig& cfg, const NormInfo& norm,
                          const T2FitSystem* sys, uint64_t problem_tag) {
    Problem& prob = run.prob;
    ModelState& model = run.model;
    const double alpha = cfg.effective_alpha();
    auto [reg_lo, reg_hi] = reg_sampling_box(prob, norm, cfg.fg_threshold);

    SirenGradients sr_grads, slice_grads;
    std::vector<int> order(prob.pixels.size());
    for (size_t i = 0; i < order.size(); ++i) order[size_t(i)] = int(i);

    std::vector<double> snapshot_sr = model.sr.params, snapshot_slice = model.slice.params;
    uint64_t step_counter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, {0x73687566ULL, problem_tag, uint64_t(epoch)}));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const bool update_slice = epoch >= cfg.warmup_epochs;
        double lr_factor = 1.0;
        if (cfg.lr_decay && cfg.epochs > 1) {
            const double t = double(epoch) / double(cfg.epochs - 1);
            lr_factor = 0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * t));
        }
        double epoch_data = 0, epoch_reg = 0;
        int steps = 0;
        for (size_t begin = 0; begin < order.size(); begin += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), begin + size_t(cfg.batch_size));
            Rng offset_rng(derive_seed(cfg.seed, {0x6f666673ULL, problem_tag, step_counter}));
            SampleBatch batch =
                assemble_batch(prob, order, begin, end, cfg.psf_samples, offset_rng);

            Mat reg_coords;
            if (alpha > 0) {
                Rng reg_rng(derive_seed(cfg.seed, {0x72656763ULL, problem_tag, step_counter}));
                reg_coords.resize(cfg.reg_points, 3);
                for (int c = 0; c < cfg.reg_points; ++c)
                    for (int a = 0; a < 3; ++a)
                        reg_coords(c, a) = uniform(reg_rng, reg_lo[a], reg_hi[a]);
            }

            sr_grads.ensure(model.sr);
            sr_grads.zero();
            slice_grads.ensure(model.slice);
            slice_grads.zero();
            StepStats stats = step_objective(prob, model, batch, alpha > 0 ? &reg_coords : nullptr,
                                             sys, cfg, norm, &sr_grads,
                                             update_slice ? &slice_grads : nullptr);
            if (!std::isfinite(stats.total())) {
                model.sr.params = snapshot_sr;
                model.slice.params = snapshot_slice;
                model.sr.bump_version();
                model.slice.bump_version();
                run.aborted = true;
                run.abort_reason = "non-finite loss at epoch " + std::to_string(epoch);
                return;
            }
            adam_step(model.sr.params, sr_grads.flat, model.opt_sr, cfg.lr_sr * lr_factor);
            model.sr.bump_version();
            if (update_slice) {
                adam_step(model.slice.params, slice_grads.flat, model.opt_slice, cfg.lr_slice * lr_factor);
                model.slice.bump_version();
            }
            epoch_data += stats.data_loss;
            epoch_reg += stats.reg_loss;
            ++steps;
            ++step_counter;
        }
        run.history.push_back({epoch_data / std::max(1, steps), epoch_reg / std::max(1, steps)});
        snapshot_sr = model.sr.params;
        snapshot_slice = model.slice.params;
    }
}

} // namespace detail

inline TrainResult train(const std::vector<SliceStack>& stacks, const ReconConfig& cfg) {
    cfg.validate();
    if (stacks.empty()) throw DataError("train: no input stacks");

    TrainResult result;
    result.norm = NormInfo::from_grid(cfg.hr_grid);

    // robust global intensity scale (99.5th percentile over non-empty slices)
    {
        std::vector<double> vals;
        for (const auto& st : stacks)
            for (const auto& sl : st.slices) {
                if (sl.empty) continue;
                vals.insert(vals.end(), sl.pixels.begin(), sl.pixels.end());
            }
        if (vals.empty()) throw DataError("train: all slices are empty");
        size_t q = size_t(0.995 * double(vals.size() - 1));
        std::nth_element(vals.begin(), vals.begin() + long(q), vals.end());
        result.intensity_scale = std::max(vals[q], 1e-12);
    }

    T2FitSystem sys;
    const bool need_sys = cfg.effective_alpha() > 0;
    if (need_sys) sys = build_system(cfg.tes);

    std::vector<detail::ProblemRun> runs;
    if (cfg.variant == Variant::sc) {
        for (size_t te = 0; te < cfg.tes.size(); ++te) {
            detail::ProblemRun run;
            run.prob = detail::build_problem(stacks, cfg.tes, cfg, result.norm,
                                             result.intensity_scale, int(te));
            run.model.sr = detail::make_sr_net(cfg, 1, derive_seed(cfg.seed, {0x73ULL, te}));
            run.model.slice = detail::make_slice_net(cfg, derive_seed(cfg.seed, {0x70ULL, te}));
            runs.push_back(std::move(run));
        }
    } else {
        detail::ProblemRun run;
        run.prob = detail::build_problem(stacks, cfg.tes, cfg, result.norm,
                                         result.intensity_scale, -1);
        run.model.sr = detail::make_sr_net(cfg, int(cfg.tes.size()), derive_seed(cfg.seed, {0x73ULL}));
        run.model.slice = detail::make_slice_net(cfg, derive_seed(cfg.seed, {0x70ULL}));
        runs.push_back(std::move(run));
    }

    for (size_t r = 0; r < runs.size(); ++r) {
        detail::train_problem(runs[r], cfg, result.norm, need_sys ? &sys : nullptr, uint64_t(r));
        if (runs[r].aborted) {
            result.aborted = true;
            result.abort_reason = runs[r].abort_reason;
        }
    }

    // merge loss histories (mean across problems per epoch)
    size_t max_epochs = 0;
    for (const auto& r : runs) max_epochs = std::max(max_epochs, r.history.size());
    for (size_t e = 0; e < max_epochs; ++e) {
        EpochLoss l;
        int n = 0;
        for (const auto& r : runs)
            if (e < r.history.size()) {
                l.data += r.history[e].data;
                l.reg += r.history[e].reg;
                ++n;
            }
        if (n > 0) {
            l.data /= n;
            l.reg /= n;
        }
        result.loss_history.push_back(l);
    }

    // render one volume per TE
    result.volumes.reserve(cfg.tes.size());
    for (size_t te = 0; te < cfg.tes.size(); ++te) {
        const detail::ProblemRun& run = cfg.variant == Variant::sc ? runs[te] : runs[0];
        const int channel = cfg.variant == Variant::sc ? 0 : int(te);
        result.volumes.push_back(render_volume(run.model.sr, cfg.hr_grid, channel, result.norm,
                                               result.intensity_scale));
    }

    // pose/calibration estimates for every slice of every problem
    for (const auto& run : runs) {
        Mat enc(int(run.prob.slices.size()), 2);
        for (size_t s = 0; s < run.prob.slices.size(); ++s) {
            enc(int(s), 0) = run.prob.slices[s].enc[0];
            enc(int(s), 1) = run.prob.slices[s].enc[1];
        }
        Mat raw = forward(run.model.slice, enc);
        for (size_t s = 0; s < run.prob.slices.size(); ++s) {
            SliceHead h = decode_slice_head(raw.row(int(s)), cfg);
            result.poses.push_back({run.prob.slices[s].stack_index, run.prob.slices[s].slice_index,
                                    h.pose, h.calib});
        }
        result.sr_nets.push_back(run.model.sr);
        result.slice_nets.push_back(run.model.slice);
    }
    std::sort(result.poses.begin(), result.poses.end(), [](const auto& a, const auto& b) {
        return std::tie(a.stack_index, a.slice_index) < std::tie(b.stack_index, b.slice_index);
    });
    return result;
}

} // namespace t2forge
