#include "doctest.h"

#include <cstdlib>
#include <filesystem>

#include "t2forge/pipeline.hpp"

using namespace t2forge;
namespace fs = std::filesystem;

namespace {

// tiny configuration so the full chain runs in seconds
Config tiny_config() {
    Config cfg;
    cfg.set("phantom.grid_dims", "24 24 24");
    cfg.set("phantom.spacing", "5");
    cfg.set("phantom.seed", "3");
    cfg.set("acquire.in_plane", "5 5");
    cfg.set("acquire.thickness", "10");
    cfg.set("acquire.psf_samples", "8");
    cfg.set("acquire.motion_rot_deg", "2");
    cfg.set("acquire.motion_trans_mm", "1");
    cfg.set("acquire.noise_sigma", "0.5");
    cfg.set("acquire.dropout_probability", "0");
    cfg.set("acquire.seed", "3");
    cfg.set("reconstruct.epochs", "3");
    cfg.set("reconstruct.warmup_epochs", "1");
    cfg.set("reconstruct.batch_size", "1024");
    cfg.set("reconstruct.psf_samples", "2");
    cfg.set("reconstruct.sr_width", "24");
    cfg.set("reconstruct.sr_depth", "2");
    cfg.set("reconstruct.slice_width", "12");
    cfg.set("reconstruct.hr_dims", "24 24 24");
    cfg.set("reconstruct.hr_spacing", "5");
    cfg.set("reconstruct.seed", "3");
    return cfg;
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "t2forge_pipeline" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

const char* cli_path() { return T2FORGE_CLI_PATH; }

int run_cli(const std::string& args) {
    std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

} // namespace

TEST_CASE("full pipeline chain produces every stage artifact") {
    Config cfg = tiny_config();
    fs::path wd = fresh_dir("chain");
    pipeline::run_phantom(cfg, wd);
    for (const char* f : {"labels.qvol", "gt_te220.qvol", "gt_te500.qvol", "gt_te690.qvol",
                          "gt_t2.qvol", "gt_m0.qvol", "phantom.meta"})
        CHECK(fs::exists(wd / f));

    pipeline::run_acquire(cfg, wd);
    CHECK(fs::exists(wd / "stacks" / "study.meta"));
    CHECK(fs::exists(wd / "stacks" / "stack_000.qvol"));
    CHECK(fs::exists(wd / "stacks" / "stack_008.qvol")); // 3 TEs x 3 stacks

    pipeline::ReconOverrides ov;
    ov.variant = "mc";
    pipeline::run_reconstruct(cfg, wd, ov);
    for (const char* f : {"recon_te220.qvol", "recon_te500.qvol", "recon_te690.qvol",
                          "poses_est.txt", "loss_history.csv", "sr_net.sir1", "slice_net.sir1",
                          "recon.meta"})
        CHECK(fs::exists(wd / f));

    pipeline::run_fit(cfg, wd);
    for (const char* f : {"t2_map.qvol", "m0_map.qvol", "fit_mask.qvol", "region_stats.txt"})
        CHECK(fs::exists(wd / f));

    MetricReport report = pipeline::run_evaluate(cfg, wd);
    CHECK(fs::exists(wd / "metrics.json"));
    CHECK(report.ssim.size() == 3);
    for (double s : report.ssim) {
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
    }
    CHECK(report.variant == "mc");
    CHECK(report.mae.count("wm") == 1);

    // poses file covers every non-empty slice with sane calibration values
    std::ifstream poses(wd / "poses_est.txt");
    std::string line;
    int rows = 0;
    while (std::getline(poses, line))
        if (!line.empty() && line[0] != '#') ++rows;
    CHECK(rows > 10);
}

TEST_CASE("stages are deterministic: reruns give identical file hashes") {
    Config cfg = tiny_config();
    fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
    for (const fs::path& wd : {a, b}) {
        pipeline::run_phantom(cfg, wd);
        pipeline::run_acquire(cfg, wd);
        pipeline::ReconOverrides ov;
        ov.variant = "mc-reg";
        ov.alpha = 0.5;
        pipeline::run_reconstruct(cfg, wd, ov);
        pipeline::run_fit(cfg, wd);
    }
    for (const char* f : {"labels.qvol", "gt_te500.qvol", "stacks/stack_004.qvol",
                          "recon_te220.qvol", "sr_net.sir1", "t2_map.qvol", "poses_est.txt"})
        CHECK(pipeline::file_hash((a / f).string()) == pipeline::file_hash((b / f).string()));
}

TEST_CASE("reconstruct honors the stacks-per-te subset schedule") {
    Config cfg = tiny_config();
    fs::path wd = fresh_dir("subset");
    pipeline::run_phantom(cfg, wd);
    pipeline::run_acquire(cfg, wd);
    pipeline::ReconOverrides ov;
    ov.variant = "mc";
    ov.stacks_per_te = 1;
    pipeline::run_reconstruct(cfg, wd, ov);
    std::ifstream meta(wd / "recon.meta");
    std::string line;
    bool found = false;
    while (std::getline(meta, line))
        if (line == "stacks_used = 3") found = true;
    CHECK(found);
}

TEST_CASE("missing stage inputs raise MissingInputError") {
    Config cfg = tiny_config();
    fs::path wd = fresh_dir("missing");
    CHECK_THROWS_AS(pipeline::run_acquire(cfg, wd), MissingInputError);
    CHECK_THROWS_AS(pipeline::run_reconstruct(cfg, wd, {}), MissingInputError);
    CHECK_THROWS_AS(pipeline::run_fit(cfg, wd), MissingInputError);
    CHECK_THROWS_AS(pipeline::run_evaluate(cfg, wd), MissingInputError);
}

TEST_CASE("cli: exit codes for config errors, missing inputs, success") {
    fs::path wd = fresh_dir("cli");
    fs::path cfg_path = wd / "cfg.ini";
    {
        std::ofstream os(cfg_path);
        os << "[phantom]\ngrid_dims = 20 20 20\nspacing = 6\n";
        os << "[acquire]\nin_plane = 6 6\nthickness = 12\npsf_samples = 4\nnoise_sigma = 0\n";
        os << "dropout_probability = 0\nmotion_rot_deg = 0\nmotion_trans_mm = 0\n";
        os << "[reconstruct]\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 512\npsf_samples = 1\n";
        os << "sr_width = 16\nsr_depth = 2\nslice_width = 8\nhr_dims = 20 20 20\nhr_spacing = 6\n";
    }
    std::string base = "--config " + cfg_path.string() + " --workdir " + wd.string();

    // missing inputs before upstream stages ran
    CHECK(run_cli(base + " reconstruct") == 3);

    CHECK(run_cli(base + " phantom") == 0);
    CHECK(run_cli(base + " acquire") == 0);
    CHECK(run_cli(base + " reconstruct --variant mc --seed 5") == 0);
    CHECK(run_cli(base + " fit") == 0);
    CHECK(run_cli(base + " evaluate") == 0);
    CHECK(fs::exists(wd / "metrics.json"));

    // config error: unknown tissue entry, named in the message
    fs::path bad_cfg = wd / "bad.ini";
    {
        std::ofstream os(bad_cfg);
        os << "[phantom]\ntissues = wm gm dgm csf blob\n";
    }
    CHECK(run_cli("--config " + bad_cfg.string() + " --workdir " + wd.string() + " phantom") == 2);
    // unreadable config path is a config error too
    CHECK(run_cli("--config /nonexistent.ini --workdir " + wd.string() + " phantom") == 2);
}

TEST_CASE("cli: mc-reg with alpha 0 reproduces mc bitwise") {
    fs::path wd = fresh_dir("cli_reduction");
    Config cfg = tiny_config();
    pipeline::run_phantom(cfg, wd);
    pipeline::run_acquire(cfg, wd);

    fs::path cfg_path = wd / "cfg.ini";
    {
        std::ofstream os(cfg_path);
        os << "[reconstruct]\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 1024\npsf_samples = 2\n";
        os << "sr_width = 24\nsr_depth = 2\nslice_width = 12\nhr_dims = 24 24 24\nhr_spacing = 5\n";
    }
    std::string base = "--config " + cfg_path.string() + " --workdir " + wd.string();
    REQUIRE(run_cli(base + " reconstruct --variant mc --seed 9") == 0);
    auto mc_hash = pipeline::file_hash((wd / "recon_te220.qvol").string());
    auto mc_net = pipeline::file_hash((wd / "sr_net.sir1").string());
    REQUIRE(run_cli(base + " reconstruct --variant mc-reg --alpha 0 --seed 9") == 0);
    CHECK(pipeline::file_hash((wd / "recon_te220.qvol").string()) == mc_hash);
    CHECK(pipeline::file_hash((wd / "sr_net.sir1").string()) == mc_net);
}

TEST_CASE("ablation presets validate and unknown presets fail") {
    CHECK_THROWS_AS(pipeline::ablation_preset("nope"), ConfigError);
    auto t2 = pipeline::ablation_preset("table2-desk");
    CHECK(t2.variants.size() == 3);
    CHECK(t2.seeds.size() == 5);
    CHECK(t2.stacks_per_te == std::vector<int>{3});
    auto t3 = pipeline::ablation_preset("table3-desk");
    CHECK(t3.variants == std::vector<std::string>{"mc", "mc-reg"});
    CHECK(t3.alpha == 10.0);
    CHECK_FALSE(t3.notes.empty());
}

TEST_CASE("ablation driver aggregates cells and writes reports") {
    // exercise the sweep machinery itself on a micro preset via the internal
    // entry point: a 1-seed table2-desk sweep at tiny scale
    Config cfg = tiny_config();
    cfg.set("reconstruct.epochs", "2");
    fs::path wd = fresh_dir("ablation");
    // shrink the preset by monkey-patching through run_ablation's contract:
    // run the full preset but at tiny scale it is fast enough for one seed;
    // use table3-desk (2 variants x 1 stack x 5 seeds) with 2 epochs
    auto cells = pipeline::run_ablation(cfg, wd, "table3-desk");
    CHECK(cells.size() == 10);
    int ok = 0;
    for (const auto& c : cells) ok += c.ok ? 1 : 0;
    CHECK(ok == 10);
    CHECK(fs::exists(wd / "ablation_report.json"));
    CHECK(fs::exists(wd / "ablation_table.txt"));
    // every cell row carries its config echo
    std::ifstream is(wd / "ablation_report.json");
    nlohmann::json j;
    is >> j;
    CHECK(j["rows"].size() == 10);
    for (const auto& r : j["rows"]) {
        CHECK(r.contains("seed"));
        CHECK(r.contains("variant"));
        CHECK(r["stacks_per_te"] == 1);
    }
}
