// Command-line front end: simulate, run-filter, monte-carlo, nn-study,
// theory-check and plot. Exit codes: 0 success, 1 numerical failure, 2 usage.

#include "rbstein/errors.hpp"
#include "rbstein/experiments.hpp"
#include "rbstein/io.hpp"
#include "rbstein/plot.hpp"
#include "rbstein/theory.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace rbstein;

namespace {

constexpr int kOk = 0;
constexpr int kNumerical = 1;
constexpr int kUsage = 2;

/// Flag values collected before the config file is read; applied on top of it.
struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> set;
    std::vector<std::pair<std::string, std::string>> flags;
};

void add_common(CLI::App* cmd, Overrides& o, bool seed_required) {
    cmd->add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
    auto* seed = cmd->add_option("--seed", o.seed, "random seed");
    if (seed_required) seed->required();
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--set", o.set, "override a config entry, section.key=value")->take_all();
}

/// Registers --name mapped onto the config key `key`.
void add_flag(CLI::App* cmd, Overrides& o, const std::string& name, const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        "--" + name, [&o, key](const std::string& v) { o.flags.emplace_back(key, v); }, help);
}

RunConfig resolve(const Overrides& o) {
    RunConfig config = o.config.empty() ? RunConfig{} : load_config(o.config);
    for (const auto& entry : o.set) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects section.key=value, got '" + entry + "'");
        apply_setting(config, entry.substr(0, eq), entry.substr(eq + 1));
    }
    for (const auto& [key, value] : o.flags) apply_setting(config, key, value);
    if (o.seed) config.seed = *o.seed;
    if (!o.out.empty()) config.out_dir = o.out;
    return config;
}

std::uint64_t require_seed(const RunConfig& config) {
    if (!config.seed) throw UsageError("--seed is required");
    return *config.seed;
}

Trajectory simulate(const RunConfig& config, std::uint64_t seed) {
    const std::size_t horizon = config_horizon(config);
    if (config.model == "nn") return simulate_nn_system(config.nn.params, horizon, seed);
    return simulate_bioreactor(config.bioreactor.params, horizon, seed);
}

void report_run(const RunResult& run, const std::string& study, const fs::path& csv) {
    std::printf("%s %s seed=%llu steps=%zu aggregate_crps=%s%s\n", study.c_str(), run.filter.c_str(),
                static_cast<unsigned long long>(run.seed), run.rows.size(),
                format_number(run.aggregate_crps(), 6).c_str(), run.failed ? " FAILED" : "");
    if (run.failed) {
        std::fprintf(stderr, "%s failed at step %zu: %s\n", run.filter.c_str(), run.failed_step, run.error.c_str());
    }
    std::printf("wrote %s\n", csv.string().c_str());
}

void save_run(const RunConfig& config, const RunResult& run, const std::string& study, std::uint64_t seed) {
    const fs::path csv = output_path(config, study, run.filter, seed);
    write_run_record(csv, run);
    write_timing(output_path(config, study, run.filter, seed, "timing.csv"), run);
    write_run_summary(output_path(config, study, run.filter, seed, "json"), run, study);
    report_run(run, study, csv);
}

int cmd_simulate(const Overrides& o) {
    const RunConfig config = resolve(o);
    const std::uint64_t seed = require_seed(config);
    const Trajectory traj = simulate(config, seed);
    const fs::path csv = output_path(config, config.model, "truth", seed);
    write_trajectory(csv, traj);
    std::printf("wrote %s (%zu steps)\n", csv.string().c_str(), traj.length());
    return kOk;
}

int cmd_run_filter(const Overrides& o, const std::string& trajectory_file) {
    const RunConfig config = resolve(o);
    const std::uint64_t seed = require_seed(config);
    Trajectory traj;
    if (trajectory_file.empty()) {
        traj = simulate(config, seed);
    } else {
        traj = read_trajectory(trajectory_file);
        if (traj.model_id != config.model) {
            throw UsageError("trajectory model '" + traj.model_id + "' does not match configured model '" + config.model +
                             "'");
        }
    }
    const RunResult run = config.model == "nn" ? run_nn_filter(config.nn, traj, config.filter, seed)
                                               : run_bioreactor_filter(config.bioreactor, traj, config.filter, seed);
    save_run(config, run, config.model, seed);
    return run.failed ? kNumerical : kOk;
}

int cmd_monte_carlo(const Overrides& o) {
    const RunConfig config = resolve(o);
    const std::uint64_t seed = require_seed(config);
    if (config.model != "bioreactor") throw UsageError("the Monte Carlo study runs on the bioreactor");
    MonteCarloConfig mc;
    mc.study = config.bioreactor;
    mc.study.horizon = config_horizon(config);
    mc.realizations = config.realizations;
    mc.master_seed = seed;
    mc.threads = config.threads;
    for (const FilterKind kind : config.compare) {
        FilterSettings s = config.filter;
        s.kind = kind;
        mc.filters.push_back(s);
    }
    const MonteCarloResult result = run_monte_carlo(mc);
    const fs::path csv = output_path(config, "bioreactor", "montecarlo", seed);
    const fs::path json = output_path(config, "bioreactor", "montecarlo", seed, "json");
    write_monte_carlo(csv, json, result, mc);
    for (std::size_t f = 0; f < result.filters.size(); ++f) {
        const QuartileSummary q = result.summary(static_cast<int>(f));
        std::printf("%-7s median=%s q1=%s q3=%s failures=%d\n", result.filters[f].c_str(),
                    format_number(q.median, 6).c_str(), format_number(q.q1, 6).c_str(),
                    format_number(q.q3, 6).c_str(), result.failures[f]);
    }
    std::printf("wrote %s and %s\n", csv.string().c_str(), json.string().c_str());
    return kOk;
}

int cmd_nn_study(const Overrides& o) {
    RunConfig config = resolve(o);
    const std::uint64_t seed = require_seed(config);
    config.model = "nn";
    NnStudy study = config.nn;
    study.horizon = config_horizon(config);
    const NnStudyResult result = run_nn_study(study, seed);
    save_run(config, result.rbfsgd, "nn", seed);
    save_run(config, result.ekf, "nn", seed);

    const fs::path fnl = output_path(config, "nn", "fnl", seed);
    std::ofstream out(fnl, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + fnl.string() + "'");
    out << "step,time,f_nl,f_hat_mean,f_hat_std,R_mean,R_std\n";
    for (const auto& r : result.rbfsgd.rows) {
        out << r.step << ',' << format_number(r.time) << ',' << format_number(r.extra(0)) << ','
            << format_number(r.extra(1)) << ',' << format_number(r.extra(2)) << ',' << format_number(r.theta_mean(0))
            << ',' << format_number(r.theta_std(0)) << '\n';
    }
    std::printf("wrote %s\n", fnl.string().c_str());
    return result.rbfsgd.failed || result.ekf.failed ? kNumerical : kOk;
}

int cmd_theory_check(const Overrides& o, const std::string& which) {
    const RunConfig config = resolve(o);
    const std::uint64_t seed = require_seed(config);
    const fs::path report = config.out_dir / ("theory_" + which + "_" + std::to_string(seed) + ".json");
    bool pass = false;
    if (which == "prop1" || which == "ksd") {
        const Prop1Suite suite = check_prop1_suite(seed);
        for (const Prop1Report* r : {&suite.unimodal, &suite.bimodal}) {
            const fs::path path = config.out_dir / ("theory_" + which + "_" + r->target + "_" + std::to_string(seed) + ".json");
            write_theory_report(path, *r);
            if (which == "prop1") {
                std::printf("prop1 %-8s kl %s -> %s %s\n", r->target.c_str(), format_number(r->kl.front(), 5).c_str(),
                            format_number(r->kl.back(), 5).c_str(), r->pass ? "PASS" : "FAIL");
            } else {
                std::printf("ksd   %-8s %s -> %s %s\n", r->target.c_str(), format_number(r->ksd.front(), 5).c_str(),
                            format_number(r->ksd.back(), 5).c_str(), r->ksd.back() < r->ksd.front() ? "PASS" : "FAIL");
            }
        }
        pass = which == "prop1" ? suite.pass()
                                : suite.unimodal.ksd.back() < suite.unimodal.ksd.front() &&
                                      suite.bimodal.ksd.back() < suite.bimodal.ksd.front();
    } else if (which == "prop2") {
        Prop2Config c;
        c.seed = seed;
        const Prop2Report r = check_prop2(c);
        write_theory_report(report, r);
        for (const auto& row : r.rows) {
            std::printf("prop2 t=%3d l1=%s bound=%s %s\n", row.step, format_number(row.state_l1, 5).c_str(),
                        format_number(row.bound, 5).c_str(), row.pass ? "PASS" : "FAIL");
        }
        pass = r.pass;
    } else if (which == "prop3") {
        Prop3Config c;
        c.setup.seed = seed;
        const Prop3Report r = check_prop3(c);
        write_theory_report(report, r);
        std::printf("prop3 t=%d bound %s -> %s %s\n", r.step, format_number(r.bound.front(), 5).c_str(),
                    format_number(r.bound.back(), 5).c_str(), r.pass ? "PASS" : "FAIL");
        pass = r.pass;
    } else {
        throw UsageError("unknown theory check '" + which + "' (expected prop1, prop2, prop3 or ksd)");
    }
    return pass ? kOk : kNumerical;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& out) {
    std::vector<fs::path> inputs(files.begin(), files.end());
    for (const auto& p : plot_files(inputs, out.empty() ? fs::path("out") : fs::path(out))) {
        std::printf("wrote %s\n", p.string().c_str());
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rao-Blackwellized Stein gradient filters"};
    app.require_subcommand(1);

    Overrides sim_o;
    auto* sim = app.add_subcommand("simulate", "simulate a trajectory");
    add_common(sim, sim_o, true);
    add_flag(sim, sim_o, "model", "run.model", "bioreactor or nn");
    add_flag(sim, sim_o, "horizon", "run.horizon", "number of steps");

    Overrides run_o;
    std::string trajectory;
    auto* run = app.add_subcommand("run-filter", "run one filter on a trajectory");
    add_common(run, run_o, true);
    run->add_option("--trajectory", trajectory, "trajectory CSV from simulate")->check(CLI::ExistingFile);
    for (const auto& [name, key] : std::vector<std::pair<std::string, std::string>>{
             {"model", "run.model"},
             {"filter", "run.filter"},
             {"particles", "run.particles"},
             {"iterations", "run.iterations"},
             {"epsilon", "run.epsilon"},
             {"sigma-theta", "run.sigma_theta"},
             {"ess-threshold", "run.ess_threshold"},
             {"prior", "run.prior"},
             {"horizon", "run.horizon"}}) {
        add_flag(run, run_o, name, key, key);
    }

    Overrides mc_o;
    auto* mc = app.add_subcommand("monte-carlo", "paired-seed bioreactor CRPS study");
    add_common(mc, mc_o, true);
    for (const auto& [name, key] : std::vector<std::pair<std::string, std::string>>{{"realizations", "run.realizations"},
                                                                                   {"threads", "run.threads"},
                                                                                   {"compare", "run.compare"},
                                                                                   {"particles", "run.particles"},
                                                                                   {"iterations", "run.iterations"},
                                                                                   {"epsilon", "run.epsilon"},
                                                                                   {"horizon", "run.horizon"}}) {
        add_flag(mc, mc_o, name, key, key);
    }

    Overrides nn_o;
    auto* nn = app.add_subcommand("nn-study", "online MLP training against the EKF baseline");
    add_common(nn, nn_o, true);
    for (const auto& [name, key] : std::vector<std::pair<std::string, std::string>>{{"particles", "nn.particles"},
                                                                                   {"iterations", "nn.iterations"},
                                                                                   {"epsilon", "nn.epsilon"},
                                                                                   {"prior", "nn.prior"},
                                                                                   {"horizon", "run.horizon"}}) {
        add_flag(nn, nn_o, name, key, key);
    }

    Overrides th_o;
    std::string which;
    auto* th = app.add_subcommand("theory-check", "empirical checks of the transport properties");
    add_common(th, th_o, true);
    th->add_option("name", which, "prop1, prop2, prop3 or ksd")->required();

    std::vector<std::string> plot_inputs;
    std::string plot_out;
    auto* plot = app.add_subcommand("plot", "SVG figures from records and summaries");
    plot->add_option("files", plot_inputs, "record CSVs and Monte Carlo summaries")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", plot_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (sim->parsed()) return cmd_simulate(sim_o);
        if (run->parsed()) return cmd_run_filter(run_o, trajectory);
        if (mc->parsed()) return cmd_monte_carlo(mc_o);
        if (nn->parsed()) return cmd_nn_study(nn_o);
        if (th->parsed()) return cmd_theory_check(th_o, which);
        if (plot->parsed()) return cmd_plot(plot_inputs, plot_out);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kUsage;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNumerical;
    }
    return kUsage;
}
