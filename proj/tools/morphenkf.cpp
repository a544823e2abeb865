// Command-line driver: run, demo-morph, register, diagnose.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "morphenkf/experiment.hpp"

namespace mk = morphenkf;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> cycles;
    std::optional<int> members;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "configuration file (key = value lines)");
    cmd->add_option("--set", c.sets, "override a configuration key, e.g. --set reg.M=3");
    cmd->add_option("--seed", c.seed, "base random seed");
    cmd->add_option("--out", c.out, "output directory or file");
}

mk::RunConfig resolve(const Common& c) {
    mk::RunConfig cfg = c.config.empty() ? mk::RunConfig{} : mk::load_config(c.config);
    std::string overrides;
    for (const auto& s : c.sets) overrides += s + "\n";
    mk::apply_config_text(cfg, overrides, "--set");
    if (c.seed) cfg.seed = *c.seed;
    if (c.out) cfg.out = *c.out;
    if (c.cycles) cfg.cycles = *c.cycles;
    if (c.members) cfg.members = *c.members;
    return cfg;
}

int cmd_run(const Common& c) {
    const auto cfg = resolve(c);
    const auto summary = mk::run_experiment(cfg, &std::cout);
    std::cout << "completed " << summary.cycles.size() << " cycles, output in " << cfg.out << '\n';
    return 0;
}

int cmd_demo(const Common& c, const std::string& u_file, const std::string& v_file, int steps) {
    const auto cfg = resolve(c);
    const auto u = mk::io::load_field(u_file), v = mk::io::load_field(v_file);
    mk::RegistrationReport report;
    const auto frames = mk::demo_morph(u, v, steps, cfg.filter.reg, &report);
    const mk::fs::path out(c.out ? *c.out : "morph");
    for (std::size_t i = 0; i < frames.size(); ++i)
        mk::io::save_field(out / (mk::detail::numbered("morph_", i) + ".mkf"), frames[i]);
    mk::detail::write_text(out / "registration.txt", report.to_text());
    std::cout << report.to_text() << "wrote " << frames.size() << " frames to " << out.string() << '\n';
    return 0;
}

int cmd_register(const Common& c, const std::string& u_file, const std::string& v_file, const std::string& init) {
    const auto cfg = resolve(c);
    const auto u = mk::io::load_field(u_file), v = mk::io::load_field(v_file);
    std::optional<mk::Warp> t0;
    if (!init.empty()) t0 = mk::io::load_warp(init, u.geometry().domain);
    const auto res = mk::register_fields(u, v, t0, cfg.filter.reg);
    const std::string out = c.out ? *c.out : "warp.mkw";
    mk::io::save_warp(out, res.warp);
    std::cout << res.report.to_text() << "wrote " << out << '\n';
    return 0;
}

int cmd_diagnose(const Common& c, const std::string& dir) {
    const mk::fs::path out = c.out ? mk::fs::path(*c.out) : mk::fs::path(dir) / "diagnostics";
    const auto s = mk::diagnose_checkpoint(dir, out);
    std::cout << "members=" << s.members << " median_p_w=" << s.median_p_w << " median_p_r_w=" << s.median_p_rw
              << " degenerate_w=" << s.degenerate_w << " degenerate_r_w=" << s.degenerate_rw << '\n'
              << "wrote p-value maps to " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Morphing EnKF experiments"};
    app.require_subcommand(1);

    Common run_opts, demo_opts, reg_opts, diag_opts;
    auto* run = app.add_subcommand("run", "twin experiment with the fire model");
    add_common(run, run_opts);
    run->add_option("--cycles", run_opts.cycles, "number of analysis cycles");
    run->add_option("--members", run_opts.members, "ensemble size");

    std::string demo_u, demo_v;
    int steps = 5;
    auto* demo = app.add_subcommand("demo-morph", "register two fields and write intermediate states");
    add_common(demo, demo_opts);
    demo->add_option("u", demo_u, "first field (MKF1)")->required();
    demo->add_option("v", demo_v, "second field (MKF1)")->required();
    demo->add_option("--steps", steps, "number of frames including both ends");

    std::string reg_u, reg_v, reg_init;
    auto* reg = app.add_subcommand("register", "find T with v ~ u o (I+T) and write it as MKW1");
    add_common(reg, reg_opts);
    reg->add_option("u", reg_u, "reference field (MKF1)")->required();
    reg->add_option("v", reg_v, "target field (MKF1)")->required();
    reg->add_option("--init", reg_init, "initial warp (MKW1)");

    std::string diag_dir;
    auto* diag = app.add_subcommand("diagnose", "Anderson-Darling p-value maps of a checkpoint");
    add_common(diag, diag_opts);
    diag->add_option("checkpoint", diag_dir, "checkpoint directory with manifest.txt")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(run_opts);
        if (*demo) return cmd_demo(demo_opts, demo_u, demo_v, steps);
        if (*reg) return cmd_register(reg_opts, reg_u, reg_v, reg_init);
        if (*diag) return cmd_diagnose(diag_opts, diag_dir);
    } catch (const mk::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const mk::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
