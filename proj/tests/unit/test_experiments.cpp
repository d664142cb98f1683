#include "../support/oracles.hpp"
#include "rbstein/errors.hpp"
#include "rbstein/io.hpp"
#include "rbstein/metrics.hpp"
#include "rbstein/plot.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

using namespace rbstein;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = RBSTEIN_GOLDEN_DIR;

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "rbstein_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

BioreactorStudy model_default_study() {
    BioreactorStudy s;
    s.params = BioreactorParams{};
    return s;
}

}  // namespace

// --- configuration ---------------------------------------------------------------

TEST(Config, ParsesSectionsAndKeys) {
    const RunConfig c = parse(
        "[run]\nmodel = nn\nfilter = rbpf\nparticles = 7\nepsilon = 0.25\nseed = 11\ncompare = rbpf,rbfsgd\n"
        "[bioreactor]\nx0 = 0.5, 6, 0\nsigma_eta = 0\n[nn]\niterations = 3\n");
    EXPECT_EQ(c.model, "nn");
    EXPECT_EQ(c.filter.kind, FilterKind::Rbpf);
    EXPECT_EQ(c.filter.particles, 7);
    EXPECT_EQ(c.filter.epsilon, 0.25);
    EXPECT_EQ(c.seed, 11u);
    ASSERT_EQ(c.compare.size(), 2u);
    EXPECT_EQ(c.compare[1], FilterKind::Rbfsgd);
    EXPECT_EQ(c.bioreactor.params.x0, Eigen::Vector3d(0.5, 6.0, 0.0));
    EXPECT_EQ(c.bioreactor.params.sigma_eta, 0.0);
    EXPECT_EQ(c.nn.filter.iterations, 3);
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(parse("[run]\nparticels = 5\n"), UsageError);
    EXPECT_THROW(parse("[run]\nparticles = five\n"), UsageError);
    EXPECT_THROW(parse("[run]\nparticles = 0\n"), UsageError);
    EXPECT_THROW(parse("[run]\nepsilon = -1\n"), UsageError);
    EXPECT_THROW(parse("[run]\nmodel = pendulum\n"), UsageError);
    EXPECT_THROW(parse("[run]\nfilter = ukf\n"), UsageError);
    EXPECT_THROW(parse("particles = 5\n"), UsageError);
    EXPECT_THROW(parse("[bioreactor]\nx0 = 1,2\n"), UsageError);
    EXPECT_THROW(load_config("/nonexistent/rbstein.ini"), UsageError);
}

TEST(Config, ShippedConfigsLoad) {
    for (const char* name : {"bioreactor.ini", "nn.ini", "montecarlo.ini"}) {
        EXPECT_NO_THROW(load_config(fs::path(RBSTEIN_CONFIG_DIR) / name)) << name;
    }
}

TEST(Config, OutputNaming) {
    RunConfig c;
    c.out_dir = "results";
    EXPECT_EQ(output_path(c, "bioreactor", "rbpf", 7), fs::path("results/bioreactor_rbpf_7.csv"));
    EXPECT_EQ(output_path(c, "montecarlo", "summary", 3, "json"), fs::path("results/montecarlo_summary_3.json"));
}

// --- trajectories and goldens ----------------------------------------------------------

TEST(TrajectoryFile, RoundTripIsExact) {
    const fs::path dir = scratch("roundtrip");
    const Trajectory a = simulate_nn_system(NnSystemParams{}, 40, 3);
    write_trajectory(dir / "t.csv", a);
    const Trajectory b = read_trajectory(dir / "t.csv");
    EXPECT_EQ(b.model_id, a.model_id);
    EXPECT_EQ(b.seed, a.seed);
    EXPECT_EQ(b.ts, a.ts);
    EXPECT_EQ(b.initial_state, a.initial_state);
    ASSERT_EQ(b.length(), a.length());
    for (std::size_t k = 0; k < a.length(); ++k) {
        EXPECT_EQ(b.times[k], a.times[k]);
        EXPECT_EQ(b.states[k], a.states[k]);
        EXPECT_EQ(b.measurements[k], a.measurements[k]);
        EXPECT_EQ(b.inputs[k], a.inputs[k]);
        EXPECT_EQ(b.true_params[k], a.true_params[k]);
    }
    fs::remove(meta_path(dir / "t.csv"));
    EXPECT_THROW(read_trajectory(dir / "t.csv"), UsageError);
}

TEST(Golden, DefaultBioreactorTrajectoryMatchesFrozenFile) {
    const fs::path dir = scratch("golden_truth");
    write_trajectory(dir / "bioreactor_truth_1.csv", simulate_bioreactor(BioreactorParams{}, 200, 1));
    EXPECT_EQ(oracle::read_file(dir / "bioreactor_truth_1.csv"), oracle::read_file(kGolden / "bioreactor_truth_1.csv"));
    EXPECT_EQ(oracle::read_file(dir / "bioreactor_truth_1.meta.json"),
              oracle::read_file(kGolden / "bioreactor_truth_1.meta.json"));
}

TEST(Golden, ZeroNoiseIgnoresSeed) {
    BioreactorParams p;
    p.q = 0.0;
    p.r = 0.0;
    p.sigma_eta = 0.0;
    const Trajectory a = simulate_bioreactor(p, 100, 1);
    const Trajectory b = simulate_bioreactor(p, 100, 987654);
    for (std::size_t k = 0; k < a.length(); ++k) {
        EXPECT_EQ(a.states[k], b.states[k]);
        EXPECT_EQ(a.measurements[k], b.measurements[k]);
    }
}

TEST(Golden, FilterRecordMatchesFrozenFile) {
    const fs::path dir = scratch("golden_record");
    const Trajectory traj = read_trajectory(kGolden / "bioreactor_truth_1.csv");
    FilterSettings s;
    s.kind = FilterKind::Rbfsgd;
    write_run_record(dir / "r.csv", run_bioreactor_filter(model_default_study(), traj, s, 1));
    EXPECT_EQ(oracle::read_file(dir / "r.csv"), oracle::read_file(kGolden / "bioreactor_rbfsgd_1.csv"));
}

TEST(Golden, PlotsAreByteStable) {
    const fs::path dir = scratch("golden_plot");
    const auto written = plot_files({kGolden / "bioreactor_rbfsgd_1.csv"}, dir);
    ASSERT_EQ(written.size(), 2u);
    for (const char* name : {"bioreactor_rbfsgd_1_states.svg", "bioreactor_rbfsgd_1_parameters.svg"}) {
        EXPECT_EQ(oracle::read_file(dir / name), oracle::read_file(kGolden / name)) << name;
    }
}

// --- filter runs -------------------------------------------------------------------------

TEST(RunFilter, EkfCrpsMatchesKalmanPredictive) {
    Matrix a(2, 2);
    a << 0.95, 0.1, 0.0, 0.9;
    Matrix c(1, 2);
    c << 1.0, 0.5;
    const Matrix q = 0.02 * Matrix::Identity(2, 2);
    const Matrix r = Matrix::Constant(1, 1, 0.1);
    const StateSpaceModel m = make_linear_model(a, Matrix(2, 0), c, q, r);
    const Trajectory traj = simulate_model(m, Vector::Zero(1), (Vector(2) << 1.0, -0.5).finished(),
                                           [](std::size_t) { return Vector(0); }, 1.0, 60, 21);

    FilterSettings s;
    s.kind = FilterKind::Ekf;
    FilterInit init{Matrix::Zero(1, 1), {Vector::Zero(2), Matrix::Identity(2, 2)}};
    RunOptions opt;
    opt.tracked_states = {0, 1};
    const RunResult run = run_filter(traj, m, s, init, 1, opt);
    ASSERT_FALSE(run.failed);

    oracle::Kalman kf{a, Matrix(2, 0), c, q, r, Vector::Zero(2), Matrix::Identity(2, 2)};
    for (std::size_t k = 0; k < traj.length(); ++k) {
        const Vector mp = a * kf.mean;
        const Matrix pp = a * kf.cov * a.transpose() + q;
        const double y_mean = (c * mp)(0);
        const double y_var = (c * pp * c.transpose())(0, 0) + r(0, 0);
        kf.step(traj.measurements[k], Vector(0));
        const StepRow& row = run.rows[k];
        EXPECT_NEAR(row.measurement_crps, crps_gaussian(y_mean, std::sqrt(y_var), traj.measurements[k](0)), 1e-8);
        for (int i = 0; i < 2; ++i) {
            EXPECT_NEAR(row.state_crps(i), crps_gaussian(kf.mean(i), std::sqrt(kf.cov(i, i)), traj.states[k](i)), 1e-8);
        }
    }
}

TEST(RunFilter, RbfsgdTracksEtaTransition) {
    const BioreactorStudy study;
    const Trajectory traj = simulate_bioreactor(study.params, study.horizon, 1);
    const RunResult run = run_bioreactor_filter(study, traj, FilterSettings{}, 1);
    ASSERT_FALSE(run.failed);
    // The expected efficiency passes 0.8 at step beta / alpha = 100.
    std::size_t crossing = 0;
    for (const auto& row : run.rows) {
        if (row.theta_mean(0) < 0.8) {
            crossing = row.step;
            break;
        }
    }
    EXPECT_NEAR(eta_mean(100.0, study.params), 0.8, 1e-12);
    EXPECT_GT(crossing, 70u);
    EXPECT_LT(crossing, 150u);
}

TEST(RunFilter, RerunIsByteIdentical) {
    const fs::path dir = scratch("rerun");
    const BioreactorStudy study;
    const Trajectory traj = simulate_bioreactor(study.params, 80, 5);
    for (FilterKind kind : {FilterKind::Ekf, FilterKind::Rbpf, FilterKind::Rbsgd, FilterKind::Rbfsgd}) {
        FilterSettings s;
        s.kind = kind;
        write_run_record(dir / "a.csv", run_bioreactor_filter(study, traj, s, 5));
        write_run_record(dir / "b.csv", run_bioreactor_filter(study, traj, s, 5));
        EXPECT_EQ(oracle::read_file(dir / "a.csv"), oracle::read_file(dir / "b.csv")) << filter_name(kind);
    }
}

TEST(RunFilter, DivergenceKeepsPartialRecord) {
    BioreactorStudy study;
    const Trajectory traj = simulate_bioreactor(study.params, 30, 2);
    Trajectory broken = traj;
    broken.measurements[10](0) = std::numeric_limits<double>::quiet_NaN();
    FilterSettings s;
    s.kind = FilterKind::Rbpf;
    const RunResult run = run_bioreactor_filter(study, broken, s, 2);
    EXPECT_TRUE(run.failed);
    EXPECT_EQ(run.failed_step, 11u);
    EXPECT_EQ(run.rows.size(), 10u);
    EXPECT_FALSE(run.error.empty());
}

TEST(NnStudy, ZeroStepKeepsMlpAtInitialization) {
    NnStudy study;
    study.horizon = 25;
    study.filter.epsilon = 0.0;
    study.filter.iterations = 2;
    const Trajectory traj = simulate_nn_system(study.params, study.horizon, 4);
    const RunResult run = run_nn_filter(study, traj, study.filter, 4);
    ASSERT_FALSE(run.failed);
    const FilterInit init = nn_init(study, study.filter.particles, 4);
    for (const auto& row : run.rows) {
        const Eigen::Vector3d x = traj.states[row.step - 1].head<3>();
        double mean = 0.0;
        for (int i = 0; i < study.filter.particles; ++i) {
            mean += mlp_forward(std::span<const double>(init.thetas.col(i).data(), MlpWeights::kCount), x);
        }
        mean /= study.filter.particles;
        EXPECT_NEAR(row.extra(1), mean, 1e-12) << row.step;
        EXPECT_NEAR(row.theta_mean(0), run.rows.front().theta_mean(0), 1e-15);
    }
}

// --- Monte Carlo ---------------------------------------------------------------------------

TEST(Quantile, LinearInterpolation) {
    const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
    EXPECT_EQ(quantile(v, 0.0), 1.0);
    EXPECT_EQ(quantile(v, 1.0), 4.0);
    EXPECT_DOUBLE_EQ(quantile(v, 0.25), 1.75);
    EXPECT_DOUBLE_EQ(quantile(v, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile(v, 0.75), 3.25);
    EXPECT_EQ(quantile({7.0}, 0.3), 7.0);
    EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}

TEST(Quantile, MatchesRankFormulaOnRandomData) {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(static_cast<std::size_t>(2 + trial));
        for (double& x : v) x = u(rng);
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        const double p = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const double h = (static_cast<double>(v.size()) - 1) * p;
        const auto j = static_cast<std::size_t>(h);
        const double expected = j + 1 < sorted.size() ? sorted[j] + (h - j) * (sorted[j + 1] - sorted[j]) : sorted[j];
        EXPECT_NEAR(quantile(v, p), expected, 1e-14);
    }
}

TEST(MonteCarlo, WinRateSkipsFailedRuns) {
    MonteCarloResult r;
    r.crps.resize(5, 2);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.crps << 1.0, 2.0, 3.0, 1.0, 0.5, 0.6, nan, 0.1, 2.0, 2.0;
    EXPECT_DOUBLE_EQ(r.win_rate(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(r.win_rate(1, 0), 0.25);
    const QuartileSummary q = r.summary(0);
    EXPECT_EQ(q.min, 0.5);
    EXPECT_EQ(q.max, 3.0);
}

TEST(MonteCarlo, SmokeRunIsDeterministic) {
    const fs::path dir = scratch("montecarlo");
    MonteCarloConfig cfg;
    cfg.study.horizon = 40;
    cfg.realizations = 2;
    cfg.master_seed = 9;
    for (FilterKind kind : {FilterKind::Rbpf, FilterKind::Rbsgd, FilterKind::Rbfsgd}) {
        FilterSettings s;
        s.kind = kind;
        cfg.filters.push_back(s);
    }
    const MonteCarloResult a = run_monte_carlo(cfg);
    ASSERT_EQ(a.crps.rows(), 2);
    ASSERT_EQ(a.crps.cols(), 3);
    EXPECT_TRUE(a.crps.allFinite());
    EXPECT_NE(a.seeds[0], a.seeds[1]);
    write_monte_carlo(dir / "a.csv", dir / "a.json", a, cfg);
    cfg.threads = 2;
    write_monte_carlo(dir / "b.csv", dir / "b.json", run_monte_carlo(cfg), cfg);
    EXPECT_EQ(oracle::read_file(dir / "a.csv"), oracle::read_file(dir / "b.csv"));

    // Boxplots read their quartiles from the summary file.
    std::vector<BoxStats> boxes;
    for (int f = 0; f < 3; ++f) boxes.push_back({a.filters[static_cast<std::size_t>(f)], a.summary(f)});
    EXPECT_EQ(boxplot_figure(dir / "a.json"), render_boxplots("Monte Carlo CRPS", boxes));
}

// --- plots --------------------------------------------------------------------------------

TEST(Plot, EmptyRecordWritesNothing) {
    const fs::path dir = scratch("plot_empty");
    {
        std::ofstream(dir / "empty.csv") << "step,time\n";
    }
    EXPECT_THROW(plot_files({dir / "empty.csv"}, dir / "fig"), UsageError);
    EXPECT_FALSE(fs::exists(dir / "fig") && !fs::is_empty(dir / "fig"));
    EXPECT_THROW(plot_files({}, dir / "fig"), UsageError);
}

TEST(Plot, BandsUseMixtureMomentsFromRecord) {
    const CsvTable record = read_csv(kGolden / "bioreactor_rbfsgd_1.csv");
    ASSERT_TRUE(record.has("x1_mean"));
    ASSERT_TRUE(record.has("x1_std"));
    const std::string svg = state_figure({{"rbfsgd", record}});
    EXPECT_NE(svg.find("<svg"), std::string::npos);
    EXPECT_NE(svg.find("rbfsgd"), std::string::npos);
}
