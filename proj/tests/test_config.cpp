#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "morphenkf/config.hpp"

using namespace morphenkf;

TEST(Config, ParsesKeysCommentsAndWhitespace) {
    RunConfig c;
    apply_config_text(c,
                      "# comment\n"
                      "\n"
                      "grid.nx = 64   # trailing comment\n"
                      "  reg.C1=12.5\n"
                      "enkf.assimilate_fuel = true\n"
                      "run.out = some/dir\r\n"
                      "run.seed = 18446744073709551615\n");
    EXPECT_EQ(c.nx, 64u);
    EXPECT_EQ(c.filter.reg.c1, 12.5);
    EXPECT_TRUE(c.filter.assimilate_fuel);
    EXPECT_EQ(c.out, "some/dir");
    EXPECT_EQ(c.seed, 18446744073709551615ULL);
}

TEST(Config, ErrorsCarrySourceAndLine) {
    RunConfig c;
    try {
        apply_config_text(c, "grid.nx = 10\n\nno.such.key = 3\n", "x.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(std::string(e.what()), "x.cfg:3: config: unknown key 'no.such.key'");
    }
    EXPECT_THROW(apply_config_text(c, "grid.nx 10\n"), ConfigError);
    EXPECT_THROW(apply_config_text(c, "grid.nx =\n"), ConfigError);
    EXPECT_THROW(apply_config_text(c, "grid.nx = 10x\n"), ConfigError);
    EXPECT_THROW(apply_config_text(c, "grid.nx = -3\n"), ConfigError);
    EXPECT_THROW(apply_config_text(c, "enkf.assimilate_fuel = yes\n"), ConfigError);
}

TEST(Config, NanAndAutoMeanUnset) {
    RunConfig c;
    apply_config_text(c, "diag.probe_x = auto\nspinup.ignition_x = 40\nspinup.ignition_y = nan\n");
    EXPECT_TRUE(std::isnan(c.probe.x));
    EXPECT_EQ(c.ignition_point(), (Point{125.0, 125.0}));
    apply_config_text(c, "spinup.ignition_y = 60\n");
    EXPECT_EQ(c.ignition_point(), (Point{40.0, 60.0}));
}

TEST(Config, DumpRoundTrips) {
    RunConfig c;
    apply_config_text(c, "reg.C2 = 0.1\nfire.wind_x = 0.3\nrun.out = abc\nensemble.members = 7\n");
    const std::string text = config_text(c);
    RunConfig d;
    apply_config_text(d, text);
    EXPECT_EQ(config_text(d), text);
    EXPECT_EQ(d.filter.reg.c2, 0.1);
    EXPECT_EQ(d.members, 7);
    EXPECT_NE(text.find("reg.C2 = 0.10000000000000001\n"), std::string::npos);
}

TEST(Config, ValidationRejectsBadValues) {
    RunConfig c;
    EXPECT_NO_THROW(c.validate());
    c.members = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.filter.sigma_t = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.ignition = {900.0, 10.0};
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.fire.dt = 60.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, ShippedConfigsLoadAndValidate) {
    for (const char* name : {"desk.cfg", "full.cfg"}) {
        const auto c = load_config(std::filesystem::path(MORPHENKF_CONFIGS) / name);
        EXPECT_NO_THROW(c.validate()) << name;
        EXPECT_EQ(c.cycles, 5) << name;
    }
    EXPECT_THROW(load_config("/nonexistent/file.cfg"), ConfigError);
}
