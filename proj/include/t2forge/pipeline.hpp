// Pipeline stages behind the CLI subcommands. Every stage is a pure
// function of (config, input files, seed): it reads its inputs from the
// working directory, writes its outputs there, and echoes its configuration
// into the outputs for provenance.
#pragma once

#include <filesystem>
#include <iomanip>

#include "json.hpp"

#include "t2forge/config.hpp"
#include "t2forge/metrics.hpp"
#include "t2forge/phantom.hpp"
#include "t2forge/recon.hpp"

namespace t2forge {

struct NonFiniteLoss : std::runtime_error {
    explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

namespace pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// 64-bit FNV-1a over a file's bytes; used for determinism checks
inline uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingInputError("file_hash: cannot open " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i)
            h = (h ^ uint8_t(buf[i])) * 1099511628211ULL;
        if (!is) break;
    }
    return h;
}

inline std::string te_tag(double te) {
    std::ostringstream ss;
    if (te == std::floor(te))
        ss << int64_t(te);
    else
        ss << te;
    return ss.str();
}

// ------------------------------------------------------------------ phantom

inline PhantomSpec phantom_spec_from_config(const Config& cfg) {
    PhantomSpec spec = PhantomSpec::default_spec(cfg.get_u64("phantom.seed", 42));
    auto dims = cfg.get_doubles("phantom.grid_dims", {64, 64, 64});
    if (dims.size() != 3) throw ConfigError("phantom.grid_dims needs three values");
    double spacing = cfg.get_double("phantom.spacing", 2.0);
    spec.grid = make_centered_grid({int(dims[0]), int(dims[1]), int(dims[2])},
                                   {spacing, spacing, spacing});
    spec.m0_bias_field = cfg.get_bool("phantom.bias_field", false);
    spec.m0_bias_amplitude = cfg.get_double("phantom.bias_amplitude", 0.1);
    spec.scale_jitter = cfg.get_double("phantom.scale_jitter", 0.02);
    spec.rotation_jitter_deg = cfg.get_double("phantom.rotation_jitter_deg", 3.0);
    spec.center_jitter_mm = cfg.get_double("phantom.center_jitter_mm", 2.0);

    auto names = cfg.get_words("phantom.tissues", {"wm", "gm", "dgm", "csf"});
    const PhantomSpec defaults = PhantomSpec::default_spec(0);
    std::vector<TissueSpec> tissues;
    std::vector<Shell> shells;
    for (const std::string& n : names) {
        Tissue label;
        if (n == "wm") label = Tissue::wm;
        else if (n == "gm") label = Tissue::gm;
        else if (n == "dgm") label = Tissue::dgm;
        else if (n == "csf") label = Tissue::csf;
        else
            throw ConfigError("phantom.tissues entry '" + n + "' is unknown; no phantom.t2_" + n +
                              " available");
        const TissueSpec* dflt = defaults.find_tissue(label);
        TissueSpec ts;
        ts.label = label;
        ts.t2 = cfg.get_double("phantom.t2_" + n, dflt->t2);
        ts.m0 = cfg.get_double("phantom.m0_" + n, dflt->m0);
        tissues.push_back(ts);
        for (const Shell& sh : defaults.shells)
            if (sh.label == label) {
                Shell s = sh;
                auto axes = cfg.get_doubles("phantom.shell_" + n,
                                            {sh.semi_axes.x, sh.semi_axes.y, sh.semi_axes.z});
                if (axes.size() != 3) throw ConfigError("phantom.shell_" + n + " needs three values");
                s.semi_axes = {axes[0], axes[1], axes[2]};
                shells.push_back(s);
            }
    }
    // keep the default outer-to-inner shell order
    std::vector<Shell> ordered;
    for (const Shell& d : defaults.shells)
        for (const Shell& s : shells)
            if (s.label == d.label) ordered.push_back(s);
    spec.tissues = tissues;
    spec.shells = ordered;
    return spec;
}

inline std::vector<double> tes_from_config(const Config& cfg) {
    auto tes = cfg.get_doubles("phantom.tes", {220, 500, 690});
    if (tes.size() < 2) throw ConfigError("phantom.tes needs at least two echo times");
    return tes;
}

inline void run_phantom(const Config& cfg, const fs::path& workdir) {
    fs::create_directories(workdir);
    PhantomSpec spec = phantom_spec_from_config(cfg);
    std::vector<double> tes = tes_from_config(cfg);

    Volume labels = build_label_map(spec);
    write_qvol(labels, (workdir / "labels.qvol").string());
    auto vols = synthesize_hr_volumes(labels, spec.tissues, tes, &spec);
    for (size_t i = 0; i < tes.size(); ++i)
        write_qvol(vols[i], (workdir / ("gt_te" + te_tag(tes[i]) + ".qvol")).string());
    write_qvol(tissue_parameter_map(labels, spec.tissues, true), (workdir / "gt_t2.qvol").string());
    Volume m0 = tissue_parameter_map(labels, spec.tissues, false);
    if (spec.m0_bias_field) {
        for (int k = 0; k < spec.grid.dims[2]; ++k)
            for (int j = 0; j < spec.grid.dims[1]; ++j)
                for (int i = 0; i < spec.grid.dims[0]; ++i)
                    m0.at(i, j, k) *=
                        m0_bias(spec, world_from_voxel(spec.grid, {double(i), double(j), double(k)}));
    }
    write_qvol(m0, (workdir / "gt_m0.qvol").string());

    std::ofstream meta(workdir / "phantom.meta");
    meta << "seed = " << spec.geometry_seed << "\n";
    meta << "grid_dims = " << spec.grid.dims[0] << " " << spec.grid.dims[1] << " "
         << spec.grid.dims[2] << "\n";
    meta << "spacing = " << spec.grid.spacing.x << "\n";
    std::ostringstream tess;
    for (double te : tes) tess << " " << te;
    meta << "tes =" << tess.str() << "\n";
    for (const auto& t : spec.tissues)
        meta << "t2_" << tissue_name(t.label) << " = " << t.t2 << "\n";
    meta << "bias_field = " << (spec.m0_bias_field ? "true" : "false") << "\n";
}

// ------------------------------------------------------------------ acquire

inline AcquisitionConfig acquisition_from_config(const Config& cfg) {
    AcquisitionConfig ac;
    auto inp = cfg.get_doubles("acquire.in_plane", {2, 2});
    if (inp.size() != 2) throw ConfigError("acquire.in_plane needs two values");
    ac.in_plane_spacing = {inp[0], inp[1], 0};
    ac.thickness = cfg.get_double("acquire.thickness", 6.0);
    ac.gap = cfg.get_double("acquire.gap", 0.0);
    ac.psf_samples = cfg.get_int("acquire.psf_samples", 32);
    ac.motion.rot_range_deg = cfg.get_double("acquire.motion_rot_deg", 5.0);
    ac.motion.trans_range_mm = cfg.get_double("acquire.motion_trans_mm", 3.0);
    ac.motion.burst = cfg.get_bool("acquire.motion_burst", false);
    ac.motion.burst_length = cfg.get_int("acquire.motion_burst_length", 4);
    ac.dropout.probability = cfg.get_double("acquire.dropout_probability", 0.1);
    ac.dropout.min_scale = cfg.get_double("acquire.dropout_min", 0.0);
    ac.dropout.max_scale = cfg.get_double("acquire.dropout_max", 0.5);
    ac.noise_sigma = cfg.get_double("acquire.noise_sigma", 2.0);
    ac.seed = cfg.get_u64("acquire.seed", 1);
    if (ac.psf_samples < 1) throw ConfigError("acquire.psf_samples must be >= 1");
    if (!(ac.thickness > 0)) throw ConfigError("acquire.thickness must be > 0");
    return ac;
}

inline void run_acquire(const Config& cfg, const fs::path& workdir) {
    std::vector<double> tes = tes_from_config(cfg);
    AcquisitionConfig ac = acquisition_from_config(cfg);
    int stacks_per_te = cfg.get_int("acquire.stacks_per_te", 3);

    std::vector<Volume> gts;
    for (double te : tes) {
        fs::path p = workdir / ("gt_te" + te_tag(te) + ".qvol");
        if (!fs::exists(p))
            throw MissingInputError("acquire: missing " + p.string() + " (run phantom first)");
        gts.push_back(read_qvol(p.string()));
    }
    auto stacks = simulate_study(gts, tes, stacks_per_te, ac);

    fs::path stackdir = workdir / "stacks";
    fs::create_directories(stackdir);
    std::ofstream meta(stackdir / "study.meta");
    std::ostringstream tess;
    for (double te : tes) tess << " " << te;
    meta << "tes =" << tess.str() << "\n";
    meta << "stacks_per_te = " << stacks_per_te << "\n";
    meta << "n_stacks = " << stacks.size() << "\n";
    meta << "seed = " << ac.seed << "\n";
    meta << "noise_sigma = " << ac.noise_sigma << "\n";
    meta << "motion_rot_deg = " << ac.motion.rot_range_deg << "\n";
    meta << "motion_trans_mm = " << ac.motion.trans_range_mm << "\n";
    meta << "dropout_probability = " << ac.dropout.probability << "\n";
    for (const auto& st : stacks) {
        std::ostringstream name;
        name << "stack_" << std::setw(3) << std::setfill('0') << st.stack_index;
        write_stack(st, (stackdir / name.str()).string());
        meta << "stack_" << st.stack_index << " = " << name.str() << " te " << st.te
             << " orientation " << orientation_name(st.orientation) << "\n";
    }
}

// -------------------------------------------------------------- reconstruct

struct ReconOverrides {
    std::string variant;  // empty = from config
    int stacks_per_te = 0; // 0 = use all acquired stacks
    double alpha = -1;     // <0 = from config
    int epochs = 0;        // 0 = from config
    uint64_t seed = 0;     // 0 = from config
    bool has_seed = false;
};

inline ReconConfig recon_config_from(const Config& cfg, const std::vector<double>& tes,
                                     const Grid& hr_grid, const ReconOverrides& ov) {
    ReconConfig rc;
    rc.variant = parse_variant(ov.variant.empty()
                                   ? cfg.get_string("reconstruct.variant", "mc-reg")
                                   : ov.variant);
    rc.alpha = ov.alpha >= 0 ? ov.alpha : cfg.get_double("reconstruct.alpha", 0.5);
    if (rc.variant != Variant::mc_reg) rc.alpha = 0.0;
    rc.epochs = ov.epochs > 0 ? ov.epochs : cfg.get_int("reconstruct.epochs", 50);
    rc.warmup_epochs = cfg.get_int("reconstruct.warmup_epochs", 2);
    rc.psf_samples = cfg.get_int("reconstruct.psf_samples", 4);
    rc.batch_size = cfg.get_int("reconstruct.batch_size", 4096);
    rc.lr_sr = cfg.get_double("reconstruct.lr_sr", 1e-4);
    rc.lr_slice = cfg.get_double("reconstruct.lr_slice", 1e-4);
    rc.sr_width = cfg.get_int("reconstruct.sr_width", 128);
    rc.sr_depth = cfg.get_int("reconstruct.sr_depth", 3);
    rc.slice_width = cfg.get_int("reconstruct.slice_width", 32);
    rc.omega0 = cfg.get_double("reconstruct.omega0", 30.0);
    rc.reg_points = cfg.get_int("reconstruct.reg_points", 4096);
    rc.reg_gate_threshold = cfg.get_double("reconstruct.reg_gate_threshold", 0.02);
    rc.fg_threshold = cfg.get_double("reconstruct.fg_threshold", 0.05);
    rc.bg_keep_fraction = cfg.get_double("reconstruct.bg_keep_fraction", 0.25);
    rc.lambda_omega = cfg.get_double("reconstruct.lambda_omega", 0.01);
    rc.lambda_pose = cfg.get_double("reconstruct.lambda_pose", 1e-4);
    rc.lambda_gauge = cfg.get_double("reconstruct.lambda_gauge", 0.05);
    rc.lr_decay = cfg.get_bool("reconstruct.lr_decay", true);
    rc.lambda_sigma = cfg.get_double("reconstruct.lambda_sigma", 0.01);
    rc.rot_scale = cfg.get_double("reconstruct.rot_scale", 0.3);
    rc.trans_scale = cfg.get_double("reconstruct.trans_scale", 15.0);
    rc.seed = ov.has_seed ? ov.seed : cfg.get_u64("reconstruct.seed", 7);
    rc.tes = tes;
    rc.hr_grid = hr_grid;
    rc.validate();
    return rc;
}

// Select the stacks a reconstruction uses: all acquired stacks, or the
// orientation schedule for the requested stacks/TE.
inline std::vector<SliceStack> select_stacks(std::vector<SliceStack> all,
                                             const std::vector<double>& tes, int stacks_per_te) {
    if (stacks_per_te <= 0) return all;
    std::vector<SliceStack> out;
    for (size_t i = 0; i < tes.size(); ++i) {
        for (StackOrientation o : stack_orientations(stacks_per_te, int(i))) {
            bool found = false;
            for (auto& st : all)
                if (std::abs(st.te - tes[i]) < 1e-9 && st.orientation == o) {
                    out.push_back(st);
                    found = true;
                    break;
                }
            if (!found)
                throw MissingInputError("reconstruct: study lacks a " +
                                        std::string(orientation_name(o)) + " stack for TE " +
                                        te_tag(tes[i]));
        }
    }
    return out;
}

inline TrainResult run_reconstruct(const Config& cfg, const fs::path& workdir,
                                   const ReconOverrides& ov = {}) {
    fs::path stackdir = workdir / "stacks";
    fs::path studymeta = stackdir / "study.meta";
    if (!fs::exists(studymeta))
        throw MissingInputError("reconstruct: missing " + studymeta.string() +
                                " (run acquire first)");
    std::vector<double> tes = tes_from_config(cfg);

    std::vector<SliceStack> stacks;
    for (int i = 0;; ++i) {
        std::ostringstream name;
        name << "stack_" << std::setw(3) << std::setfill('0') << i;
        if (!fs::exists(stackdir / (name.str() + ".qvol"))) break;
        stacks.push_back(read_stack((stackdir / name.str()).string()));
    }
    if (stacks.empty()) throw MissingInputError("reconstruct: no stacks in " + stackdir.string());
    stacks = select_stacks(std::move(stacks), tes, ov.stacks_per_te);

    auto hdims = cfg.get_doubles("reconstruct.hr_dims", {64, 64, 64});
    if (hdims.size() != 3) throw ConfigError("reconstruct.hr_dims needs three values");
    double hspacing = cfg.get_double("reconstruct.hr_spacing", 2.0);
    Grid hr = make_centered_grid({int(hdims[0]), int(hdims[1]), int(hdims[2])},
                                 {hspacing, hspacing, hspacing});

    ReconConfig rc = recon_config_from(cfg, tes, hr, ov);
    TrainResult result = train(stacks, rc);

    for (size_t i = 0; i < tes.size(); ++i)
        write_qvol(result.volumes[i], (workdir / ("recon_te" + te_tag(tes[i]) + ".qvol")).string());

    {
        std::ofstream poses(workdir / "poses_est.txt");
        poses << "# stack_index slice_index rx ry rz tx ty tz sigma omega\n";
        poses << std::setprecision(17);
        for (const auto& p : result.poses)
            poses << p.stack_index << " " << p.slice_index << " " << p.pose.euler.x << " "
                  << p.pose.euler.y << " " << p.pose.euler.z << " " << p.pose.translation.x << " "
                  << p.pose.translation.y << " " << p.pose.translation.z << " " << p.calib.sigma
                  << " " << p.calib.omega << "\n";
    }
    {
        std::ofstream loss(workdir / "loss_history.csv");
        loss << "epoch,data_loss,reg_loss\n";
        loss << std::setprecision(17);
        for (size_t e = 0; e < result.loss_history.size(); ++e)
            loss << e << "," << result.loss_history[e].data << "," << result.loss_history[e].reg
                 << "\n";
    }
    for (size_t n = 0; n < result.sr_nets.size(); ++n) {
        std::string suffix = rc.variant == Variant::sc ? "_te" + te_tag(tes[n]) : "";
        save_network(result.sr_nets[n], (workdir / ("sr_net" + suffix + ".sir1")).string());
        save_network(result.slice_nets[n], (workdir / ("slice_net" + suffix + ".sir1")).string());
    }
    {
        std::ofstream meta(workdir / "recon.meta");
        meta << "variant = " << variant_name(rc.variant) << "\n";
        meta << "alpha = " << rc.alpha << "\n";
        meta << "epochs = " << rc.epochs << "\n";
        meta << "seed = " << rc.seed << "\n";
        meta << "stacks_per_te = " << (ov.stacks_per_te > 0 ? ov.stacks_per_te : 0) << "\n";
        meta << "stacks_used = " << stacks.size() << "\n";
        meta << "psf_samples = " << rc.psf_samples << "\n";
        meta << "sr_width = " << rc.sr_width << "\n";
        meta << "intensity_scale = " << std::setprecision(17) << result.intensity_scale << "\n";
        meta << "aborted = " << (result.aborted ? "true" : "false") << "\n";
        if (result.aborted) meta << "abort_reason = " << result.abort_reason << "\n";
    }
    if (result.aborted)
        throw NonFiniteLoss("reconstruct: " + result.abort_reason +
                            " (last finite checkpoint written)");
    return result;
}

// ------------------------------------------------------------------- fit

inline ParameterMap run_fit(const Config& cfg, const fs::path& workdir) {
    std::vector<double> tes = tes_from_config(cfg);
    std::vector<Volume> vols;
    for (double te : tes) {
        fs::path p = workdir / ("recon_te" + te_tag(te) + ".qvol");
        if (!fs::exists(p))
            throw MissingInputError("fit: missing " + p.string() + " (run reconstruct first)");
        vols.push_back(read_qvol(p.string()));
    }
    T2FitSystem sys = build_system(tes);
    double floor_eps = cfg.get_double("fit.floor", 1e-3);
    double t2_max = cfg.get_double("fit.t2_max", kT2Max);
    ParameterMap map = fit_volume(sys, vols, floor_eps, t2_max);
    write_qvol(map.t2, (workdir / "t2_map.qvol").string());
    write_qvol(map.m0, (workdir / "m0_map.qvol").string());
    write_qvol(map.mask, (workdir / "fit_mask.qvol").string());

    // per-label statistics if the phantom labels are available
    fs::path labels_path = workdir / "labels.qvol";
    std::ofstream stats(workdir / "region_stats.txt");
    stats << "# region mean_t2 std_t2 valid_voxels total_voxels excluded_fraction\n";
    if (fs::exists(labels_path)) {
        Volume labels = read_qvol(labels_path.string());
        for (Tissue t : {Tissue::wm, Tissue::gm, Tissue::dgm, Tissue::csf}) {
            double sum = 0, sum2 = 0;
            size_t nvalid = 0, ntotal = 0;
            for (size_t i = 0; i < labels.data.size(); ++i) {
                if (uint8_t(labels.data[i]) != uint8_t(t)) continue;
                ++ntotal;
                if (map.mask.data[i] == 0.0) continue;
                ++nvalid;
                sum += map.t2.data[i];
                sum2 += map.t2.data[i] * map.t2.data[i];
            }
            if (ntotal == 0) continue;
            double mean = nvalid ? sum / double(nvalid) : 0.0;
            double var = nvalid ? std::max(0.0, sum2 / double(nvalid) - mean * mean) : 0.0;
            stats << tissue_name(t) << " " << mean << " " << std::sqrt(var) << " " << nvalid << " "
                  << ntotal << " " << (ntotal ? 1.0 - double(nvalid) / double(ntotal) : 0.0)
                  << "\n";
        }
    }
    return map;
}

// ------------------------------------------------------------------ evaluate

inline MetricReport run_evaluate(const Config& cfg, const fs::path& workdir) {
    std::vector<double> tes = tes_from_config(cfg);
    auto need = [&](const fs::path& p) {
        if (!fs::exists(p)) throw MissingInputError("evaluate: missing " + p.string());
        return read_qvol(p.string());
    };
    Volume labels = need(workdir / "labels.qvol");
    Volume gt_t2 = need(workdir / "gt_t2.qvol");
    Volume mask = brain_mask_from_labels(labels);

    MetricReport report;
    report.tes = tes;
    for (double te : tes) {
        Volume gt = need(workdir / ("gt_te" + te_tag(te) + ".qvol"));
        Volume rec = need(workdir / ("recon_te" + te_tag(te) + ".qvol"));
        report.ssim.push_back(ssim3d_against_reference(rec, gt, &mask));
    }
    ParameterMap map;
    map.t2 = need(workdir / "t2_map.qvol");
    map.m0 = need(workdir / "m0_map.qvol");
    map.mask = need(workdir / "fit_mask.qvol");
    for (Tissue t : {Tissue::wm, Tissue::gm, Tissue::dgm, Tissue::csf}) {
        size_t n = 0, n_valid = 0;
        for (size_t i = 0; i < labels.data.size(); ++i)
            if (uint8_t(labels.data[i]) == uint8_t(t)) {
                ++n;
                if (map.mask.data[i] != 0.0) ++n_valid;
            }
        if (n == 0) continue;
        report.voxels[tissue_name(t)] = n;
        // a tissue with no valid fit voxels has no defined MAE; leave it out
        if (n_valid > 0) report.mae[tissue_name(t)] = t2_mae(map, gt_t2, labels, t);
    }

    // config echo from upstream stage metadata
    auto read_meta = [&](const fs::path& p) {
        std::map<std::string, std::string> kv;
        std::ifstream is(p);
        std::string line;
        while (std::getline(is, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                size_t b = s.find_first_not_of(" \t");
                size_t e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return kv;
    };
    auto recon_meta = read_meta(workdir / "recon.meta");
    auto study_meta = read_meta(workdir / "stacks" / "study.meta");
    auto phantom_meta = read_meta(workdir / "phantom.meta");
    report.variant = recon_meta.count("variant") ? recon_meta["variant"] : "?";
    report.alpha = recon_meta.count("alpha") ? std::stod(recon_meta["alpha"]) : 0.0;
    report.seed = recon_meta.count("seed") ? std::stoull(recon_meta["seed"]) : 0;
    if (recon_meta.count("stacks_per_te") && recon_meta["stacks_per_te"] != "0")
        report.stacks_per_te = std::stoi(recon_meta["stacks_per_te"]);
    else if (study_meta.count("stacks_per_te"))
        report.stacks_per_te = std::stoi(study_meta["stacks_per_te"]);

    json j;
    j["variant"] = report.variant;
    j["stacks_per_te"] = report.stacks_per_te;
    j["alpha"] = report.alpha;
    j["seeds"] = {{"phantom", phantom_meta.count("seed") ? std::stoull(phantom_meta["seed"]) : 0},
                  {"acquire", study_meta.count("seed") ? std::stoull(study_meta["seed"]) : 0},
                  {"reconstruct", report.seed}};
    j["tes"] = tes;
    json ssim_j, mae_j, vox_j;
    for (size_t i = 0; i < tes.size(); ++i) ssim_j[te_tag(tes[i])] = report.ssim[i];
    for (const auto& [k, v] : report.mae) mae_j[k] = v;
    for (const auto& [k, v] : report.voxels) vox_j[k] = v;
    j["ssim"] = ssim_j;
    j["mae_t2_ms"] = mae_j;
    j["label_voxels"] = vox_j;
    std::ofstream os(workdir / "metrics.json");
    os << j.dump(2) << "\n";
    return report;
}

// ------------------------------------------------------------------ ablation

struct AblationCell {
    std::string variant;
    int stacks_per_te = 3;
    uint64_t seed = 1;
    double alpha = 0.5;
    bool ok = false;
    std::string error;
    MetricReport report;
};

struct AblationPreset {
    std::string name;
    std::vector<std::string> variants;
    std::vector<int> stacks_per_te;
    std::vector<uint64_t> seeds;
    double alpha = 0.5;          // for mc-reg cells
    std::vector<std::string> notes;
};

inline AblationPreset ablation_preset(const std::string& name) {
    AblationPreset p;
    p.name = name;
    if (name == "table2-desk") {
        p.variants = {"sc", "mc", "mc-reg"};
        p.stacks_per_te = {3};
        p.seeds = {1, 2, 3, 4, 5};
        p.alpha = 0.5;
        return p;
    }
    if (name == "table3-desk") {
        p.variants = {"mc", "mc-reg"};
        p.stacks_per_te = {1};
        p.seeds = {1, 2, 3, 4, 5};
        p.alpha = 10.0; // sparse-input setting
        p.notes = {"sc: not run at 1 stack/TE (single-orientation input; "
                   "single-contrast reconstruction fails)"};
        return p;
    }
    throw ConfigError("ablation: unknown preset " + name);
}

inline std::vector<AblationCell> run_ablation(const Config& base, const fs::path& workdir,
                                              const std::string& preset_name) {
    AblationPreset preset = ablation_preset(preset_name);
    if (preset.variants.empty() || preset.seeds.empty())
        throw ConfigError("ablation: empty preset");
    fs::create_directories(workdir);
    std::vector<AblationCell> cells;
    for (uint64_t seed : preset.seeds) {
        for (int spt : preset.stacks_per_te) {
            // phantom + acquisition shared across variants for this seed
            fs::path seed_dir = workdir / ("seed" + std::to_string(seed) + "_s" + std::to_string(spt));
            Config cfg = base;
            cfg.set("phantom.seed", std::to_string(seed));
            cfg.set("acquire.seed", std::to_string(seed));
            cfg.set("reconstruct.seed", std::to_string(seed));
            bool acquired = false;
            for (const std::string& variant : preset.variants) {
                AblationCell cell;
                cell.variant = variant;
                cell.stacks_per_te = spt;
                cell.seed = seed;
                cell.alpha = variant == "mc-reg" ? preset.alpha : 0.0;
                fs::path cell_dir = seed_dir / variant;
                try {
                    if (!acquired) {
                        run_phantom(cfg, seed_dir);
                        run_acquire(cfg, seed_dir);
                        acquired = true;
                    }
                    fs::create_directories(cell_dir);
                    // stage inputs are shared via the seed directory
                    for (const char* f : {"labels.qvol", "gt_t2.qvol", "gt_m0.qvol", "phantom.meta"})
                        fs::copy_file(seed_dir / f, cell_dir / f,
                                      fs::copy_options::overwrite_existing);
                    std::vector<double> tes = tes_from_config(cfg);
                    for (double te : tes)
                        fs::copy_file(seed_dir / ("gt_te" + te_tag(te) + ".qvol"),
                                      cell_dir / ("gt_te" + te_tag(te) + ".qvol"),
                                      fs::copy_options::overwrite_existing);
                    fs::create_directories(cell_dir / "stacks");
                    for (const auto& entry : fs::directory_iterator(seed_dir / "stacks"))
                        fs::copy_file(entry.path(), cell_dir / "stacks" / entry.path().filename(),
                                      fs::copy_options::overwrite_existing);
                    ReconOverrides ov;
                    ov.variant = variant;
                    ov.stacks_per_te = spt;
                    ov.alpha = cell.alpha;
                    run_reconstruct(cfg, cell_dir, ov);
                    run_fit(cfg, cell_dir);
                    cell.report = run_evaluate(cfg, cell_dir);
                    cell.ok = true;
                } catch (const std::exception& e) {
                    cell.error = e.what();
                }
                cells.push_back(cell);
            }
        }
    }

    // aggregate report
    json rows = json::array();
    for (const auto& c : cells) {
        json r;
        r["variant"] = c.variant;
        r["stacks_per_te"] = c.stacks_per_te;
        r["seed"] = c.seed;
        r["alpha"] = c.alpha;
        r["ok"] = c.ok;
        if (!c.ok) r["error"] = c.error;
        else {
            json ssim_j;
            for (size_t i = 0; i < c.report.tes.size(); ++i)
                ssim_j[te_tag(c.report.tes[i])] = c.report.ssim[i];
            r["ssim"] = ssim_j;
            r["mae_wm"] = c.report.mae.count("wm") ? c.report.mae.at("wm") : -1.0;
            r["mae_gm"] = c.report.mae.count("gm") ? c.report.mae.at("gm") : -1.0;
        }
        rows.push_back(r);
    }
    json out;
    out["preset"] = preset.name;
    out["notes"] = preset.notes;
    out["rows"] = rows;

    // per-variant aggregates and a text table
    std::ofstream table(workdir / "ablation_table.txt");
    table << "# preset " << preset.name << "\n";
    table << "# variant stacks mae_wm(mean+-std) mae_gm(mean+-std) ssim_per_te(mean)\n";
    json aggregates = json::array();
    for (int spt : preset.stacks_per_te)
        for (const std::string& v : preset.variants) {
            std::vector<double> wm, gm;
            std::vector<std::vector<double>> ssim;
            for (const auto& c : cells) {
                if (!c.ok || c.variant != v || c.stacks_per_te != spt) continue;
                if (c.report.mae.count("wm")) wm.push_back(c.report.mae.at("wm"));
                if (c.report.mae.count("gm")) gm.push_back(c.report.mae.at("gm"));
                ssim.push_back(c.report.ssim);
            }
            auto mean_std = [](const std::vector<double>& xs) {
                if (xs.empty()) return std::pair<double, double>{0, 0};
                double m = 0;
                for (double x : xs) m += x;
                m /= double(xs.size());
                double s = 0;
                for (double x : xs) s += (x - m) * (x - m);
                return std::pair<double, double>{m, std::sqrt(s / double(xs.size()))};
            };
            auto [wm_m, wm_s] = mean_std(wm);
            auto [gm_m, gm_s] = mean_std(gm);
            table << v << " " << spt << " " << wm_m << "+-" << wm_s << " " << gm_m << "+-" << gm_s;
            json agg;
            agg["variant"] = v;
            agg["stacks_per_te"] = spt;
            agg["mae_wm_mean"] = wm_m;
            agg["mae_wm_std"] = wm_s;
            agg["mae_gm_mean"] = gm_m;
            agg["mae_gm_std"] = gm_s;
            if (!ssim.empty()) {
                json ssim_means = json::array();
                for (size_t te = 0; te < ssim.front().size(); ++te) {
                    double m = 0;
                    for (const auto& s : ssim) m += s[te];
                    m /= double(ssim.size());
                    table << " " << m;
                    ssim_means.push_back(m);
                }
                agg["ssim_mean_per_te"] = ssim_means;
            }
            table << "\n";
            aggregates.push_back(agg);
        }
    for (const auto& n : preset.notes) table << "# " << n << "\n";
    out["aggregates"] = aggregates;
    std::ofstream os(workdir / "ablation_report.json");
    os << out.dump(2) << "\n";
    return cells;
}

} // namespace pipeline
} // namespace t2forge
