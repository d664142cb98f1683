#include "rbstein/experiments.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"
#include "rbstein/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

namespace rbstein {

FilterKind parse_filter(const std::string& name) {
    if (name == "ekf") return FilterKind::Ekf;
    if (name == "rbpf") return FilterKind::Rbpf;
    if (name == "rbsgd") return FilterKind::Rbsgd;
    if (name == "rbfsgd") return FilterKind::Rbfsgd;
    throw UsageError("unknown filter '" + name + "' (expected ekf, rbpf, rbsgd or rbfsgd)");
}

std::string filter_name(FilterKind kind) {
    switch (kind) {
        case FilterKind::Ekf: return "ekf";
        case FilterKind::Rbpf: return "rbpf";
        case FilterKind::Rbsgd: return "rbsgd";
        case FilterKind::Rbfsgd: return "rbfsgd";
    }
    return "unknown";
}

Vector RunResult::mean_state_crps() const {
    if (rows.empty()) return Vector();
    Vector sum = Vector::Zero(rows.front().state_crps.size());
    for (const auto& r : rows) sum += r.state_crps;
    return sum / static_cast<double>(rows.size());
}

double RunResult::mean_measurement_crps() const {
    if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const auto& r : rows) sum += r.measurement_crps;
    return sum / static_cast<double>(rows.size());
}

double RunResult::aggregate_crps() const {
    if (rows.empty() || tracked_states.empty()) return std::numeric_limits<double>::quiet_NaN();
    const Vector per = mean_state_crps();
    double sum = 0.0;
    for (const int c : tracked_states) sum += per(c);
    return sum / static_cast<double>(tracked_states.size());
}

namespace {

GaussianMixture1D predictive_measurement(const std::vector<UpdateDiagnostics>& diags, const Vector& weights,
                                         const Vector& y) {
    const auto n = static_cast<Eigen::Index>(diags.size());
    Vector means(n);
    Vector variances(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& d = diags[static_cast<std::size_t>(i)];
        means(i) = d.predicted_measurement(y)(0);
        variances(i) = d.innovation_cov(0, 0);
    }
    return make_mixture(means, variances, weights);
}

StepRow summarize(const ParticleEnsemble& ens, const StateSpaceModel& model, const Trajectory& traj, std::size_t t,
                  const std::vector<UpdateDiagnostics>& diags, const Vector& predictive_weights,
                  const RunOptions& options) {
    StepRow row;
    row.step = t;
    row.time = traj.times[t - 1];
    row.true_state = traj.states[t - 1];
    row.true_theta = traj.true_params[t - 1];
    const int nx = static_cast<int>(row.true_state.size());
    row.state_mean.resize(nx);
    row.state_std.resize(nx);
    row.state_crps.resize(nx);
    for (int c = 0; c < nx; ++c) {
        const GaussianMixture1D mix = state_marginal(ens, c);
        row.state_mean(c) = mix.mean();
        row.state_std(c) = std::sqrt(std::max(mix.variance(), 0.0));
        row.state_crps(c) = crps_mixture(mix, row.true_state(c));
    }
    const Vector& y = traj.measurements[t - 1];
    row.measurement_crps = crps_mixture(predictive_measurement(diags, predictive_weights, y), y(0));

    const auto k = static_cast<Eigen::Index>(options.tracked_theta.size());
    row.theta_mean = Vector::Zero(k);
    row.theta_std = Vector::Zero(k);
    Matrix constrained(k, ens.size());
    for (int i = 0; i < ens.size(); ++i) {
        const Vector full = model.transform.size() == ens.dim() ? model.transform.constrain(ens.theta(i)) : ens.theta(i);
        for (Eigen::Index s = 0; s < k; ++s) constrained(s, i) = full(options.tracked_theta[static_cast<std::size_t>(s)]);
    }
    row.theta_mean = constrained * ens.weights;
    for (Eigen::Index s = 0; s < k; ++s) {
        const double var = ens.weights.dot((constrained.row(s).array() - row.theta_mean(s)).square().matrix().transpose());
        row.theta_std(s) = std::sqrt(std::max(var, 0.0));
    }
    row.ess = ess(ens.weights);
    if (options.extra) row.extra = options.extra(t, ens);
    return row;
}

}  // namespace

RunResult run_filter(const Trajectory& traj, const StateSpaceModel& model, const FilterSettings& settings,
                     const FilterInit& init, std::uint64_t seed, const RunOptions& options) {
    RunResult result;
    result.filter = filter_name(settings.kind);
    result.seed = seed;
    result.extra_names = options.extra_names;
    result.theta_names = options.theta_names;
    for (std::size_t k = result.theta_names.size(); k < options.tracked_theta.size(); ++k) {
        result.theta_names.push_back("theta" + std::to_string(k + 1));
    }
    result.tracked_states = options.tracked_states;

    const Matrix thetas = settings.kind == FilterKind::Ekf ? Matrix(init.thetas.rowwise().mean())
                                                           : Matrix(init.thetas.leftCols(settings.particles));
    ParticleEnsemble ens = make_ensemble(thetas, init.belief, seed);

    RbpfConfig rbpf;
    rbpf.sigma_theta = settings.sigma_theta * Matrix::Identity(ens.dim(), ens.dim());
    rbpf.ess_threshold = settings.ess_threshold;
    RbsgdConfig rbsgd;
    rbsgd.epsilon = settings.epsilon;
    rbsgd.iterations = settings.iterations;
    rbsgd.prior_mode = settings.prior_mode;
    rbsgd.adam = settings.svgd_adam;
    RbfsgdConfig rbfsgd;
    rbfsgd.epsilon = settings.epsilon;
    rbfsgd.iterations = settings.iterations;
    rbfsgd.prior_mode = settings.prior_mode;
    rbfsgd.adam = settings.fisher_adam;
    rbfsgd.refresh_fisher = settings.refresh_fisher;
    rbfsgd.reset_adam_each_step = settings.reset_adam_each_step;

    for (std::size_t t = 1; t <= traj.length(); ++t) {
        const Vector& y = traj.measurements[t - 1];
        const Vector& u = traj.inputs[t - 1];
        const auto start = std::chrono::steady_clock::now();
        try {
            std::vector<UpdateDiagnostics> diags;
            Vector predictive_weights = ens.weights;
            bool resampled = false;
            switch (settings.kind) {
                case FilterKind::Ekf: {
                    StepReport rep = kalman_bank_step(ens, y, u, model);
                    diags = std::move(rep.diagnostics);
                    break;
                }
                case FilterKind::Rbpf: {
                    StepReport rep = rbpf_step(ens, y, u, model, rbpf);
                    diags = std::move(rep.diagnostics);
                    predictive_weights = rep.predictive_weights;
                    resampled = rep.resampled;
                    break;
                }
                case FilterKind::Rbsgd:
                    diags = rbsgd_step(ens, y, u, model, rbsgd).diagnostics;
                    break;
                case FilterKind::Rbfsgd:
                    diags = rbfsgd_step(ens, y, u, model, rbfsgd).diagnostics;
                    break;
            }
            StepRow row = summarize(ens, model, traj, t, diags, predictive_weights, options);
            row.resampled = resampled;
            result.rows.push_back(std::move(row));
        } catch (const NumericalError& e) {
            result.failed = true;
            result.failed_step = t;
            result.error = e.what();
            break;
        }
        result.step_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Scenarios

FilterInit bioreactor_init(const BioreactorStudy& study, int particles, std::uint64_t seed) {
    auto rng = derived_stream(seed, 0x1A17, 0);
    std::normal_distribution<double> normal(study.theta_init_mean, study.theta_init_sd);
    FilterInit init;
    init.thetas.resize(1, particles);
    for (int i = 0; i < particles; ++i) init.thetas(0, i) = normal(rng);
    init.belief.mean = study.params.x0;
    init.belief.cov = study.p0 * Matrix::Identity(3, 3);
    return init;
}

RunOptions bioreactor_run_options() {
    RunOptions options;
    options.tracked_states = {0, 1};
    options.tracked_theta = {0};
    options.theta_names = {"eta"};
    return options;
}

FilterInit nn_init(const NnStudy& study, int particles, std::uint64_t seed) {
    auto rng = derived_stream(seed, 0x1A17, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    FilterInit init;
    const int n = MlpWeights::kCount + 1;
    init.thetas.resize(n, particles);
    for (int i = 0; i < particles; ++i) {
        for (int k = 0; k < MlpWeights::kCount; ++k) init.thetas(k, i) = study.weight_init_sd * normal(rng);
        init.thetas(n - 1, i) = std::log(study.r_init) + study.log_r_init_sd * normal(rng);
    }
    init.belief.mean = study.params.x0;
    init.belief.cov = study.p0 * Matrix::Identity(3, 3);
    return init;
}

StateSpaceModel nn_baseline_model(const NnStudy& study) {
    return make_nn_baseline_model(study.params, study.baseline_extra_q3);
}

RunResult run_bioreactor_filter(const BioreactorStudy& study, const Trajectory& traj, const FilterSettings& settings,
                                std::uint64_t seed) {
    const FilterInit init = bioreactor_init(study, std::max(settings.particles, 1), seed);
    return run_filter(traj, make_bioreactor_model(study.params), settings, init, seed, bioreactor_run_options());
}

RunResult run_nn_filter(const NnStudy& study, const Trajectory& traj, const FilterSettings& settings,
                        std::uint64_t seed) {
    const FilterInit init = nn_init(study, std::max(settings.particles, 1), seed);
    RunOptions options;
    options.tracked_states = {0, 1, 2};
    options.theta_names = {"R"};
    if (settings.kind == FilterKind::Ekf) {
        FilterInit baseline_init;
        baseline_init.thetas = init.thetas.bottomRows(1);
        baseline_init.belief = init.belief;
        options.tracked_theta = {0};
        return run_filter(traj, nn_baseline_model(study), settings, baseline_init, seed, options);
    }
    options.tracked_theta = {MlpWeights::kCount};
    options.extra_names = {"f_nl", "f_hat_mean", "f_hat_std"};
    options.extra = [&traj](std::size_t t, const ParticleEnsemble& ens) {
        const Eigen::Vector3d x = traj.states[t - 1].head<3>();
        Vector predictions(ens.size());
        for (int i = 0; i < ens.size(); ++i) {
            predictions(i) = mlp_forward(std::span<const double>(ens.thetas.col(i).data(), MlpWeights::kCount), x);
        }
        const double mean = ens.weights.dot(predictions);
        const double var = ens.weights.dot((predictions.array() - mean).square().matrix());
        Vector out(3);
        out << nn_nonlinearity(traj.states[t - 1]), mean, std::sqrt(std::max(var, 0.0));
        return out;
    };
    return run_filter(traj, make_nn_model(study.params), settings, init, seed, options);
}

NnStudyResult run_nn_study(const NnStudy& study, std::uint64_t seed) {
    const Trajectory traj = simulate_nn_system(study.params, study.horizon, seed);
    NnStudyResult out;
    FilterSettings settings = study.filter;
    settings.kind = FilterKind::Rbfsgd;
    out.rbfsgd = run_nn_filter(study, traj, settings, seed);
    FilterSettings ekf;
    ekf.kind = FilterKind::Ekf;
    ekf.particles = settings.particles;
    out.ekf = run_nn_filter(study, traj, ekf, seed);
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo

double quantile(std::vector<double> values, double p) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

QuartileSummary quartiles(const std::vector<double>& values) {
    return {quantile(values, 0.0), quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75),
            quantile(values, 1.0)};
}

double MonteCarloResult::win_rate(int a, int b) const {
    int wins = 0;
    int paired = 0;
    for (Eigen::Index r = 0; r < crps.rows(); ++r) {
        if (!std::isfinite(crps(r, a)) || !std::isfinite(crps(r, b))) continue;
        ++paired;
        if (crps(r, a) < crps(r, b)) ++wins;
    }
    return paired == 0 ? 0.0 : static_cast<double>(wins) / paired;
}

QuartileSummary MonteCarloResult::summary(int filter) const {
    std::vector<double> values;
    for (Eigen::Index r = 0; r < crps.rows(); ++r) {
        if (std::isfinite(crps(r, filter))) values.push_back(crps(r, filter));
    }
    return quartiles(values);
}

MonteCarloResult run_monte_carlo(const MonteCarloConfig& config) {
    if (config.realizations < 2) throw UsageError("Monte Carlo needs at least two realizations");
    const auto runs = static_cast<std::size_t>(config.realizations);
    const auto nf = static_cast<Eigen::Index>(config.filters.size());
    MonteCarloResult result;
    for (const auto& f : config.filters) result.filters.push_back(filter_name(f.kind));
    result.crps = Matrix::Constant(static_cast<Eigen::Index>(runs), nf, std::numeric_limits<double>::quiet_NaN());
    result.failures.assign(config.filters.size(), 0);
    result.records.resize(config.keep_records ? runs : 0);
    for (std::size_t r = 0; r < runs; ++r) result.seeds.push_back(config.master_seed + r);

    const StateSpaceModel model = make_bioreactor_model(config.study.params);
    std::mutex collector;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t r = next++; r < runs; r = next++) {
            const std::uint64_t seed = result.seeds[r];
            std::vector<RunResult> local;
            std::vector<double> scores(config.filters.size(), std::numeric_limits<double>::quiet_NaN());
            try {
                const Trajectory traj = simulate_bioreactor(config.study.params, config.study.horizon, seed);
                int max_particles = 1;
                for (const auto& f : config.filters) max_particles = std::max(max_particles, f.particles);
                const FilterInit init = bioreactor_init(config.study, max_particles, seed);
                for (std::size_t f = 0; f < config.filters.size(); ++f) {
                    RunResult run = run_filter(traj, model, config.filters[f], init, seed, bioreactor_run_options());
                    if (!run.failed) scores[f] = run.aggregate_crps();
                    local.push_back(std::move(run));
                }
            } catch (const NumericalError&) {
                // simulation failure: every filter counts as failed for this seed
            }
            const std::lock_guard<std::mutex> lock(collector);
            for (std::size_t f = 0; f < scores.size(); ++f) {
                result.crps(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = scores[f];
                if (!std::isfinite(scores[f])) ++result.failures[f];
            }
            if (config.keep_records) result.records[r] = std::move(local);
        }
    };
    const int threads = std::max(1, config.threads);
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return result;
}

}  // namespace rbstein
