#pragma once

#include "rbstein/fisher.hpp"
#include "rbstein/rbpf.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rbstein {

enum class FilterKind { Ekf, Rbpf, Rbsgd, Rbfsgd };

FilterKind parse_filter(const std::string& name);  // throws UsageError
std::string filter_name(FilterKind kind);

struct FilterSettings {
    FilterKind kind = FilterKind::Rbfsgd;
    int particles = 5;
    int iterations = 1;
    double epsilon = 1e-3;
    double sigma_theta = 1e-4;    // diagonal of the RBPF random-walk covariance
    double ess_threshold = -1.0;  // negative: N/2
    PriorMode prior_mode = PriorMode::MomentFit;
    bool svgd_adam = false;
    FisherAdamOptions fisher_adam;
    bool refresh_fisher = false;
    bool reset_adam_each_step = false;
};

/// Shared starting point so that every filter in a comparison begins from the
/// same parameter particles, state mean and covariance.
struct FilterInit {
    Matrix thetas;  // n_theta x N; the EKF uses the column mean
    GaussianBelief belief;
};

struct StepRow {
    std::size_t step = 0;
    double time = 0.0;
    Vector true_state;
    Vector true_theta;   // constrained, tracked slots only
    Vector state_mean;   // mixture mean per coordinate
    Vector state_std;    // mixture std (law of total variance)
    Vector theta_mean;   // constrained, tracked slots
    Vector theta_std;
    Vector state_crps;   // filtered marginal CRPS per state coordinate
    double measurement_crps = 0.0;  // one-step predictive CRPS of y
    double ess = 0.0;
    bool resampled = false;
    Vector extra;        // study-specific columns
};

struct RunResult {
    std::string filter;
    std::uint64_t seed = 0;
    std::vector<StepRow> rows;
    std::vector<double> step_seconds;
    std::vector<std::string> extra_names;
    std::vector<std::string> theta_names;
    std::vector<int> tracked_states;  // coordinates entering the aggregate CRPS
    bool failed = false;
    std::size_t failed_step = 0;
    std::string error;

    Vector mean_state_crps() const;
    double mean_measurement_crps() const;
    /// Time average of the mean CRPS over the tracked state coordinates.
    double aggregate_crps() const;
};

/// Per-step hook for study-specific columns, called after every filter step.
using ExtraColumns = std::function<Vector(std::size_t step, const ParticleEnsemble& ens)>;

struct RunOptions {
    std::vector<int> tracked_states;
    std::vector<int> tracked_theta;  // slots reported in the record (constrained)
    std::vector<std::string> theta_names;  // defaults to theta1, theta2, ...
    std::vector<std::string> extra_names;
    ExtraColumns extra;
};

/// Streams a trajectory through one filter. Numerical failures are caught and
/// reported with the step index; rows up to the failure are kept.
RunResult run_filter(const Trajectory& traj, const StateSpaceModel& model, const FilterSettings& settings,
                     const FilterInit& init, std::uint64_t seed, const RunOptions& options);

// ---------------------------------------------------------------------------
// Scenarios

/// Study start with growth still active through the eta transition; the model
/// default (1, 5, 0) exhausts the substrate after about 25 steps.
inline BioreactorParams bioreactor_study_params() {
    BioreactorParams p;
    p.x0 = Eigen::Vector3d(0.05, 20.0, 0.0);
    return p;
}

struct BioreactorStudy {
    BioreactorParams params = bioreactor_study_params();
    std::size_t horizon = 200;
    double theta_init_mean = 1.0;
    double theta_init_sd = 0.05;
    double p0 = 1e-4;
};

FilterInit bioreactor_init(const BioreactorStudy& study, int particles, std::uint64_t seed);
RunOptions bioreactor_run_options();
RunResult run_bioreactor_filter(const BioreactorStudy& study, const Trajectory& traj, const FilterSettings& settings,
                                std::uint64_t seed);

struct NnStudy {
    NnSystemParams params;
    std::size_t horizon = 1000;
    double weight_init_sd = 0.1;
    double r_init = 0.5;
    double log_r_init_sd = 0.1;
    double p0 = 1e-2;
    /// Variance added to the third state of the baseline EKF to absorb f_nl.
    double baseline_extra_q3 = 2.5e-5;
    /// F_svgd is refreshed every inner iteration: with 10 particles against 42
    /// slots the once-per-step factor cannot precondition later directions.
    FilterSettings filter{.kind = FilterKind::Rbfsgd, .particles = 10, .iterations = 15, .epsilon = 2e-2,
                          .prior_mode = PriorMode::LikelihoodOnly, .fisher_adam = {}, .refresh_fisher = true};
};

FilterInit nn_init(const NnStudy& study, int particles, std::uint64_t seed);

/// The EKF runs the linear-part baseline; particle filters run the
/// MLP-augmented model and record f_nl and the MLP prediction along the truth.
RunResult run_nn_filter(const NnStudy& study, const Trajectory& traj, const FilterSettings& settings,
                        std::uint64_t seed);

struct NnStudyResult {
    RunResult rbfsgd;
    RunResult ekf;
};

/// RBFSGD on the MLP-augmented model plus the linear-part EKF baseline on the
/// same realization. The RBFSGD record carries f_nl, the MLP prediction and R.
NnStudyResult run_nn_study(const NnStudy& study, std::uint64_t seed);

/// Linear-part model with the EKF baseline's inflated process noise.
StateSpaceModel nn_baseline_model(const NnStudy& study);

// ---------------------------------------------------------------------------
// Monte Carlo

struct MonteCarloConfig {
    BioreactorStudy study;
    std::vector<FilterSettings> filters;
    int realizations = 50;
    std::uint64_t master_seed = 1;
    int threads = 1;
    bool keep_records = false;
};

struct QuartileSummary {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

/// Linear-interpolation quantiles (type 7).
double quantile(std::vector<double> values, double p);
QuartileSummary quartiles(const std::vector<double>& values);

struct MonteCarloResult {
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> filters;
    Matrix crps;  // realizations x filters; NaN for failed runs
    std::vector<int> failures;
    std::vector<std::vector<RunResult>> records;  // only with keep_records

    /// Share of realizations (both finite) where filter a scores strictly below b.
    double win_rate(int a, int b) const;
    QuartileSummary summary(int filter) const;
};

MonteCarloResult run_monte_carlo(const MonteCarloConfig& config);

}  // namespace rbstein
