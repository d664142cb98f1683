#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rbstein {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Parameter particles live in an unconstrained space; log-variance slots are
// exponentiated before they reach a covariance.
enum class SlotTransform { Identity, LogVariance };

class ThetaTransform {
public:
    ThetaTransform() = default;
    explicit ThetaTransform(std::vector<SlotTransform> slots) : slots_(std::move(slots)) {}

    static ThetaTransform identity(int n) { return ThetaTransform(std::vector<SlotTransform>(n, SlotTransform::Identity)); }

    int size() const { return static_cast<int>(slots_.size()); }
    SlotTransform slot(int i) const { return slots_.at(static_cast<std::size_t>(i)); }

    Vector constrain(const Vector& unconstrained) const;
    Vector unconstrain(const Vector& constrained) const;

private:
    std::vector<SlotTransform> slots_;
};

using TransitionFn = std::function<Vector(const Vector& x, const Vector& u, const Vector& theta)>;
using MeasurementFn = std::function<Vector(const Vector& x, const Vector& theta)>;
using CovarianceFn = std::function<Matrix(const Vector& theta)>;

struct Linearization {
    Vector value;
    Matrix jacobian;
};

using LinearizedTransitionFn = std::function<Linearization(const Vector& x, const Vector& u, const Vector& theta)>;
using LinearizedMeasurementFn = std::function<Linearization(const Vector& x, const Vector& theta)>;

// x' = f(x, u, theta) + q,  y = h(x, theta) + r,  q ~ N(0, Q(theta)), r ~ N(0, R(theta)).
// The linearized_* members are optional; when empty the EKF falls back to
// central finite differences.
struct StateSpaceModel {
    std::string id;
    int nx = 0;
    int ny = 0;
    int nu = 0;
    int ntheta = 0;
    TransitionFn transition;
    MeasurementFn measurement;
    CovarianceFn process_cov;
    CovarianceFn measurement_cov;
    LinearizedTransitionFn linearized_transition;
    LinearizedMeasurementFn linearized_measurement;
    ThetaTransform transform;
};

// ---------------------------------------------------------------------------
// Runge-Kutta discretization

using VectorField = std::function<Vector(const Vector& x, const Vector& u, const Vector& theta)>;
using VectorFieldJacobian = std::function<Matrix(const Vector& x, const Vector& u, const Vector& theta)>;

/// Classical four-stage RK4 step with the input and parameters held constant
/// over the interval. Throws NonFiniteDynamics naming the failing stage (1..4).
Vector rk4_step(const VectorField& deriv, const Vector& x, const Vector& u, const Vector& theta, double ts);

/// RK4 step together with its exact Jacobian wrt x, obtained by propagating the
/// tangent map through the four stages.
Linearization rk4_step_linearized(const VectorField& deriv, const VectorFieldJacobian& deriv_jacobian, const Vector& x,
                                  const Vector& u, const Vector& theta, double ts);

// ---------------------------------------------------------------------------
// Batch bioreactor with Haldane kinetics

struct BioreactorParams {
    double mu_max = 0.4;
    double k_s = 0.1;
    double k_i = 10.0;
    double y_xs = 0.5;
    double y_px = 0.6;
    double eta0 = 1.0;
    double eta_f = 0.6;
    double alpha = 0.05;
    double beta = 5.0;
    double q = 1e-6;  // process noise variance per state
    double r = 1e-6;  // measurement noise variance
    double ts = 0.2;  // hours
    double sigma_eta = 0.01;
    Eigen::Vector3d x0{1.0, 5.0, 0.0};
};

double haldane_growth(double substrate, double eta, const BioreactorParams& p);

/// (dX, dS, dP) for state (X, S, P).
Vector bioreactor_derivative(const Vector& x, double eta, const BioreactorParams& p);
Matrix bioreactor_derivative_jacobian(const Vector& x, double eta, const BioreactorParams& p);

/// Expected mixing efficiency at step index t: sigmoid blend of eta0 and eta_f.
double eta_mean(double t, double eta0, double eta_f, double alpha, double beta);
inline double eta_mean(double t, const BioreactorParams& p) { return eta_mean(t, p.eta0, p.eta_f, p.alpha, p.beta); }

/// theta = (eta), identity transform; measures P.
StateSpaceModel make_bioreactor_model(const BioreactorParams& p);

// ---------------------------------------------------------------------------
// Three-state system with an unknown nonlinearity, and the MLP used to learn it

double nn_nonlinearity(const Vector& x);
Vector nn_true_derivative(const Vector& x, double u);

// Layer sizes (3, 4, 4, 1), tanh hidden activations, linear output. Flat layout
// per layer: weight matrix (out x in, row-major) followed by the bias vector.
struct MlpWeights {
    static constexpr int kInputs = 3;
    static constexpr int kHidden = 4;
    static constexpr int kCount = (3 * 4 + 4) + (4 * 4 + 4) + (4 * 1 + 1);
    std::vector<double> values;
};

double mlp_forward(std::span<const double> weights, const Eigen::Vector3d& x);
/// Output and gradient of the output wrt the network input.
std::pair<double, Eigen::Vector3d> mlp_forward_input_gradient(std::span<const double> weights, const Eigen::Vector3d& x);
inline double mlp_forward(const MlpWeights& w, const Eigen::Vector3d& x) { return mlp_forward(w.values, x); }

struct NnSystemParams {
    double ts = 0.01;  // seconds
    double q = 1e-4;
    double r = 0.1;
    Eigen::Vector3d x0 = Eigen::Vector3d::Zero();
    double input_amp1 = 1.0;
    double input_freq1 = 0.5;
    double input_amp2 = 0.5;
    double input_freq2 = 1.3;
};

/// Multi-sine excitation at step k.
double nn_input(std::size_t k, const NnSystemParams& p);

/// MLP-augmented model: theta = (41 MLP weights, log R). Q is known.
StateSpaceModel make_nn_model(const NnSystemParams& p);

/// Linear part only; the nonlinearity is absorbed into an inflated process
/// noise on the third state. theta = (log R).
StateSpaceModel make_nn_baseline_model(const NnSystemParams& p, double extra_q3);

// ---------------------------------------------------------------------------
// Linear-Gaussian models (oracle checks and theory validation)

/// x' = A x + B u, y = C x; theta is a placeholder slot with no effect.
StateSpaceModel make_linear_model(const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& q, const Matrix& r);

/// Scalar x' = theta x + q, y = x + r.
StateSpaceModel make_scalar_ar_model(double q, double r);

// ---------------------------------------------------------------------------
// Simulation

// Row k (k = 1..T) holds x_k, y_k = h(x_k) + r_k, and the input and true
// parameter that drove the transition x_{k-1} -> x_k.
struct Trajectory {
    std::string model_id;
    double ts = 0.0;
    std::uint64_t seed = 0;
    Vector initial_state;
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<Vector> measurements;
    std::vector<Vector> inputs;
    std::vector<Vector> true_params;

    std::size_t length() const { return states.size(); }
};

/// Generic rollout of a model at a fixed theta.
Trajectory simulate_model(const StateSpaceModel& model, const Vector& theta, const Vector& x0,
                          const std::function<Vector(std::size_t)>& input, double ts, std::size_t horizon,
                          std::uint64_t seed);

Trajectory simulate_bioreactor(const BioreactorParams& p, std::size_t horizon, std::uint64_t seed);
Trajectory simulate_nn_system(const NnSystemParams& p, std::size_t horizon, std::uint64_t seed);
/// Scalar AR(1) truth for theory checks; true_params holds the constant theta.
Trajectory simulate_scalar_ar(double theta, double q, double r, double x0, std::size_t horizon, std::uint64_t seed);

}  // namespace rbstein
