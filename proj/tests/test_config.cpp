#include "doctest.h"

#include <sstream>

#include "t2forge/config.hpp"
#include "t2forge/pipeline.hpp"

using namespace t2forge;

TEST_CASE("config parsing: sections, comments, lists") {
    std::istringstream ss(R"(
# pipeline settings
[phantom]
seed = 9
tes = 220 500 690   # echo times in ms

[reconstruct]
variant = mc-reg
alpha = 0.5
)");
    Config cfg = Config::parse(ss);
    CHECK(cfg.get_u64("phantom.seed", 0) == 9);
    CHECK(cfg.get_doubles("phantom.tes", {}) == std::vector<double>{220, 500, 690});
    CHECK(cfg.get_string("reconstruct.variant", "") == "mc-reg");
    CHECK(cfg.get_double("reconstruct.alpha", 0) == 0.5);
    CHECK(cfg.get_double("reconstruct.absent", 12.5) == 12.5);
    CHECK_FALSE(cfg.has("reconstruct.absent"));
}

TEST_CASE("config parsing rejects malformed lines and values") {
    std::istringstream bad1("[phantom\nseed = 1\n");
    CHECK_THROWS_AS(Config::parse(bad1), ConfigError);
    std::istringstream bad2("just some words\n");
    CHECK_THROWS_AS(Config::parse(bad2), ConfigError);
    std::istringstream ok("x = notanumber\ny = 1.5\n");
    Config cfg = Config::parse(ok);
    CHECK_THROWS_AS(cfg.get_double("x", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_int("y", 0), ConfigError);
    CHECK_THROWS_AS(Config::load("/nonexistent/qqq.ini"), ConfigError);
}

TEST_CASE("phantom config: defaults and overrides") {
    Config cfg;
    PhantomSpec spec = pipeline::phantom_spec_from_config(cfg);
    CHECK(spec.grid.dims == std::array<int, 3>{64, 64, 64});
    CHECK(spec.tissues.size() == 4);
    CHECK(spec.find_tissue(Tissue::wm)->t2 == 339.0);

    cfg.set("phantom.t2_wm", "350");
    cfg.set("phantom.grid_dims", "32 32 32");
    cfg.set("phantom.spacing", "4");
    spec = pipeline::phantom_spec_from_config(cfg);
    CHECK(spec.find_tissue(Tissue::wm)->t2 == 350.0);
    CHECK(spec.grid.dims[0] == 32);
    CHECK(spec.grid.spacing.x == 4.0);
}

TEST_CASE("unknown tissue entries are reported by key name") {
    Config cfg;
    cfg.set("phantom.tissues", "wm gm dgm csf blob");
    try {
        pipeline::phantom_spec_from_config(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("t2_blob") != std::string::npos);
    }
}

TEST_CASE("te lists are validated") {
    Config cfg;
    cfg.set("phantom.tes", "500");
    CHECK_THROWS_AS(pipeline::tes_from_config(cfg), ConfigError);
}

TEST_CASE("recon overrides take precedence over config keys") {
    Config cfg;
    cfg.set("reconstruct.variant", "sc");
    cfg.set("reconstruct.epochs", "9");
    Grid hr = make_centered_grid({16, 16, 16}, {2, 2, 2});
    pipeline::ReconOverrides ov;
    ov.variant = "mc-reg";
    ov.alpha = 2.0;
    ov.epochs = 4;
    ov.seed = 123;
    ov.has_seed = true;
    ReconConfig rc = pipeline::recon_config_from(cfg, {220, 500, 690}, hr, ov);
    CHECK(rc.variant == Variant::mc_reg);
    CHECK(rc.alpha == 2.0);
    CHECK(rc.epochs == 4);
    CHECK(rc.seed == 123);

    // non-reg variants force alpha to zero
    pipeline::ReconOverrides ov2;
    ov2.variant = "mc";
    ReconConfig rc2 = pipeline::recon_config_from(cfg, {220, 500, 690}, hr, ov2);
    CHECK(rc2.variant == Variant::mc);
    CHECK(rc2.alpha == 0.0);
}
