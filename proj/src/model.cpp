#include "rbstein/model.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"

#include <cmath>
#include <random>

namespace rbstein {

Vector ThetaTransform::constrain(const Vector& unconstrained) const {
    if (unconstrained.size() != size()) throw ShapeError("theta length does not match transform");
    Vector out = unconstrained;
    for (int i = 0; i < size(); ++i) {
        if (slots_[static_cast<std::size_t>(i)] == SlotTransform::LogVariance) out(i) = std::exp(unconstrained(i));
    }
    return out;
}

Vector ThetaTransform::unconstrain(const Vector& constrained) const {
    if (constrained.size() != size()) throw ShapeError("theta length does not match transform");
    Vector out = constrained;
    for (int i = 0; i < size(); ++i) {
        if (slots_[static_cast<std::size_t>(i)] == SlotTransform::LogVariance) {
            if (!(constrained(i) > 0.0)) throw DomainError("variance slot must be positive");
            out(i) = std::log(constrained(i));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

Vector checked_stage(const VectorField& deriv, const Vector& x, const Vector& u, const Vector& theta, int stage) {
    Vector k = deriv(x, u, theta);
    if (!k.allFinite()) throw NonFiniteDynamics(stage);
    return k;
}

}  // namespace

Vector rk4_step(const VectorField& deriv, const Vector& x, const Vector& u, const Vector& theta, double ts) {
    if (!(ts > 0.0)) throw DomainError("RK4 step must be positive");
    const Vector k1 = checked_stage(deriv, x, u, theta, 1);
    const Vector k2 = checked_stage(deriv, x + 0.5 * ts * k1, u, theta, 2);
    const Vector k3 = checked_stage(deriv, x + 0.5 * ts * k2, u, theta, 3);
    const Vector k4 = checked_stage(deriv, x + ts * k3, u, theta, 4);
    return x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Linearization rk4_step_linearized(const VectorField& deriv, const VectorFieldJacobian& deriv_jacobian, const Vector& x,
                                  const Vector& u, const Vector& theta, double ts) {
    if (!(ts > 0.0)) throw DomainError("RK4 step must be positive");
    const auto n = x.size();
    const Matrix eye = Matrix::Identity(n, n);

    const Vector x1 = x;
    const Vector k1 = checked_stage(deriv, x1, u, theta, 1);
    const Matrix d1 = deriv_jacobian(x1, u, theta);

    const Vector x2 = x + 0.5 * ts * k1;
    const Vector k2 = checked_stage(deriv, x2, u, theta, 2);
    const Matrix d2 = deriv_jacobian(x2, u, theta) * (eye + 0.5 * ts * d1);

    const Vector x3 = x + 0.5 * ts * k2;
    const Vector k3 = checked_stage(deriv, x3, u, theta, 3);
    const Matrix d3 = deriv_jacobian(x3, u, theta) * (eye + 0.5 * ts * d2);

    const Vector x4 = x + ts * k3;
    const Vector k4 = checked_stage(deriv, x4, u, theta, 4);
    const Matrix d4 = deriv_jacobian(x4, u, theta) * (eye + ts * d3);

    return {x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), eye + (ts / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4)};
}

// ---------------------------------------------------------------------------
// Bioreactor

double haldane_growth(double substrate, double eta, const BioreactorParams& p) {
    if (substrate < 0.0) throw DomainError("substrate concentration must be non-negative");
    if (!(p.k_s > 0.0) || !(p.k_i > 0.0)) throw DomainError("Haldane constants must be positive");
    return p.mu_max * substrate / (p.k_s + substrate + substrate * substrate / p.k_i) * eta;
}

namespace {

// Noise can push the substrate estimate slightly below zero; growth stops there.
double clamped_substrate(double s) { return s > 0.0 ? s : 0.0; }

double haldane_slope(double substrate, double eta, const BioreactorParams& p) {
    if (substrate <= 0.0) return 0.0;
    const double denom = p.k_s + substrate + substrate * substrate / p.k_i;
    return p.mu_max * eta * (p.k_s - substrate * substrate / p.k_i) / (denom * denom);
}

}  // namespace

Vector bioreactor_derivative(const Vector& x, double eta, const BioreactorParams& p) {
    const double mu = haldane_growth(clamped_substrate(x(1)), eta, p);
    const double growth = mu * x(0);
    Vector dx(3);
    dx << growth, -growth / p.y_xs, p.y_px * growth;
    return dx;
}

Matrix bioreactor_derivative_jacobian(const Vector& x, double eta, const BioreactorParams& p) {
    const double mu = haldane_growth(clamped_substrate(x(1)), eta, p);
    const double slope = haldane_slope(x(1), eta, p);
    Matrix j = Matrix::Zero(3, 3);
    j(0, 0) = mu;
    j(0, 1) = slope * x(0);
    j(1, 0) = -mu / p.y_xs;
    j(1, 1) = -slope * x(0) / p.y_xs;
    j(2, 0) = p.y_px * mu;
    j(2, 1) = p.y_px * slope * x(0);
    return j;
}

double eta_mean(double t, double eta0, double eta_f, double alpha, double beta) {
    const double s = 1.0 / (1.0 + std::exp(-(alpha * t - beta)));
    return (1.0 - s) * eta0 + s * eta_f;
}

StateSpaceModel make_bioreactor_model(const BioreactorParams& p) {
    StateSpaceModel m;
    m.id = "bioreactor";
    m.nx = 3;
    m.ny = 1;
    m.nu = 0;
    m.ntheta = 1;
    m.transform = ThetaTransform::identity(1);

    VectorField field = [p](const Vector& x, const Vector&, const Vector& theta) {
        return bioreactor_derivative(x, theta(0), p);
    };
    VectorFieldJacobian field_jac = [p](const Vector& x, const Vector&, const Vector& theta) {
        return bioreactor_derivative_jacobian(x, theta(0), p);
    };
    const double ts = p.ts;
    m.transition = [field, ts](const Vector& x, const Vector& u, const Vector& theta) {
        return rk4_step(field, x, u, theta, ts);
    };
    m.linearized_transition = [field, field_jac, ts](const Vector& x, const Vector& u, const Vector& theta) {
        return rk4_step_linearized(field, field_jac, x, u, theta, ts);
    };
    m.measurement = [](const Vector& x, const Vector&) { return Vector::Constant(1, x(2)); };
    m.linearized_measurement = [](const Vector& x, const Vector&) {
        Matrix h = Matrix::Zero(1, 3);
        h(0, 2) = 1.0;
        return Linearization{Vector::Constant(1, x(2)), h};
    };
    const double q = p.q;
    const double r = p.r;
    m.process_cov = [q](const Vector&) { return Matrix(q * Matrix::Identity(3, 3)); };
    m.measurement_cov = [r](const Vector&) { return Matrix(Matrix::Constant(1, 1, r)); };
    return m;
}

// ---------------------------------------------------------------------------
// Nonlinear three-state system and MLP

double nn_nonlinearity(const Vector& x) {
    return x(0) * std::exp(x(2)) + 0.2 * std::sin(x(1) * x(2)) + x(2) + x(1);
}

Vector nn_true_derivative(const Vector& x, double u) {
    Vector dx(3);
    dx << x(1), x(2), -2.0 * x(0) - 3.0 * x(1) - 4.0 * x(2) + u + nn_nonlinearity(x);
    return dx;
}

namespace {

using Mat43 = Eigen::Matrix<double, 4, 3, Eigen::RowMajor>;
using Mat44 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;
using Row4 = Eigen::Matrix<double, 1, 4>;

void check_weight_count(std::span<const double> weights) {
    if (weights.size() != static_cast<std::size_t>(MlpWeights::kCount)) {
        throw ShapeError("MLP expects " + std::to_string(MlpWeights::kCount) + " weights, got " +
                         std::to_string(weights.size()));
    }
}

}  // namespace

double mlp_forward(std::span<const double> weights, const Eigen::Vector3d& x) {
    check_weight_count(weights);
    const double* w = weights.data();
    const Eigen::Vector4d a1 = (Eigen::Map<const Mat43>(w) * x + Eigen::Map<const Eigen::Vector4d>(w + 12)).array().tanh();
    const Eigen::Vector4d a2 =
        (Eigen::Map<const Mat44>(w + 16) * a1 + Eigen::Map<const Eigen::Vector4d>(w + 32)).array().tanh();
    return Eigen::Map<const Row4>(w + 36).dot(a2) + w[40];
}

std::pair<double, Eigen::Vector3d> mlp_forward_input_gradient(std::span<const double> weights,
                                                               const Eigen::Vector3d& x) {
    check_weight_count(weights);
    const double* w = weights.data();
    const Eigen::Map<const Mat43> w1(w);
    const Eigen::Map<const Eigen::Vector4d> b1(w + 12);
    const Eigen::Map<const Mat44> w2(w + 16);
    const Eigen::Map<const Eigen::Vector4d> b2(w + 32);
    const Eigen::Map<const Row4> w3(w + 36);
    const double b3 = w[40];

    const Eigen::Vector4d a1 = (w1 * x + b1).array().tanh();
    const Eigen::Vector4d a2 = (w2 * a1 + b2).array().tanh();
    const double out = w3.dot(a2) + b3;

    // Backpropagate d(out)/dx.
    const Eigen::Vector4d g2 = w3.transpose().cwiseProduct((1.0 - a2.array().square()).matrix());
    const Eigen::Vector4d g1 = (w2.transpose() * g2).cwiseProduct((1.0 - a1.array().square()).matrix());
    return {out, w1.transpose() * g1};
}

double nn_input(std::size_t k, const NnSystemParams& p) {
    const double t = static_cast<double>(k) * p.ts;
    return p.input_amp1 * std::sin(p.input_freq1 * t) + p.input_amp2 * std::sin(p.input_freq2 * t);
}

namespace {

constexpr int kNnLogR = MlpWeights::kCount;

Matrix nn_linear_jacobian() {
    Matrix j = Matrix::Zero(3, 3);
    j(0, 1) = 1.0;
    j(1, 2) = 1.0;
    j(2, 0) = -2.0;
    j(2, 1) = -3.0;
    j(2, 2) = -4.0;
    return j;
}

Vector nn_linear_part(const Vector& x, double u) {
    Vector dx(3);
    dx << x(1), x(2), -2.0 * x(0) - 3.0 * x(1) - 4.0 * x(2) + u;
    return dx;
}

Eigen::Matrix3d nn_linear_jacobian3() {
    Eigen::Matrix3d j;
    j << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -2.0, -3.0, -4.0;
    return j;
}

// Fixed-size linearized RK4 for the MLP-augmented field; each stage evaluates
// the network once for both the derivative and its Jacobian.
Linearization nn_rk4_linearized(const Vector& x0, double u, std::span<const double> weights, double ts) {
    const Eigen::Matrix3d a = nn_linear_jacobian3();
    const Eigen::Matrix3d eye = Eigen::Matrix3d::Identity();
    auto stage = [&](const Eigen::Vector3d& x, int index, Eigen::Vector3d& k, Eigen::Matrix3d& j) {
        const auto [out, grad] = mlp_forward_input_gradient(weights, x);
        k = a * x;
        k(2) += u + out;
        if (!k.allFinite()) throw NonFiniteDynamics(index);
        j = a;
        j.row(2) += grad.transpose();
    };
    const Eigen::Vector3d x = x0.head<3>();
    Eigen::Vector3d k1, k2, k3, k4;
    Eigen::Matrix3d j1, j2, j3, j4;
    stage(x, 1, k1, j1);
    const Eigen::Matrix3d d1 = j1;
    stage(x + 0.5 * ts * k1, 2, k2, j2);
    const Eigen::Matrix3d d2 = j2 * (eye + 0.5 * ts * d1);
    stage(x + 0.5 * ts * k2, 3, k3, j3);
    const Eigen::Matrix3d d3 = j3 * (eye + 0.5 * ts * d2);
    stage(x + ts * k3, 4, k4, j4);
    const Eigen::Matrix3d d4 = j4 * (eye + ts * d3);
    return {Vector(x + (ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)),
            Matrix(eye + (ts / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4))};
}

void set_position_measurement(StateSpaceModel& m) {
    m.measurement = [](const Vector& x, const Vector&) { return Vector::Constant(1, x(0)); };
    m.linearized_measurement = [](const Vector& x, const Vector&) {
        Matrix h = Matrix::Zero(1, 3);
        h(0, 0) = 1.0;
        return Linearization{Vector::Constant(1, x(0)), h};
    };
}

}  // namespace

StateSpaceModel make_nn_model(const NnSystemParams& p) {
    StateSpaceModel m;
    m.id = "nn";
    m.nx = 3;
    m.ny = 1;
    m.nu = 1;
    m.ntheta = MlpWeights::kCount + 1;
    std::vector<SlotTransform> slots(static_cast<std::size_t>(m.ntheta), SlotTransform::Identity);
    slots.back() = SlotTransform::LogVariance;
    m.transform = ThetaTransform(std::move(slots));

    VectorField field = [](const Vector& x, const Vector& u, const Vector& theta) {
        Vector dx = nn_linear_part(x, u(0));
        dx(2) += mlp_forward(std::span<const double>(theta.data(), MlpWeights::kCount), x.head<3>());
        return dx;
    };
    const double ts = p.ts;
    m.transition = [field, ts](const Vector& x, const Vector& u, const Vector& theta) {
        return rk4_step(field, x, u, theta, ts);
    };
    m.linearized_transition = [ts](const Vector& x, const Vector& u, const Vector& theta) {
        if (theta.size() < MlpWeights::kCount) throw ShapeError("theta is shorter than the MLP weight vector");
        return nn_rk4_linearized(x, u(0), std::span<const double>(theta.data(), MlpWeights::kCount), ts);
    };
    set_position_measurement(m);
    const double q = p.q;
    m.process_cov = [q](const Vector&) { return Matrix(q * Matrix::Identity(3, 3)); };
    m.measurement_cov = [](const Vector& theta) { return Matrix(Matrix::Constant(1, 1, std::exp(theta(kNnLogR)))); };
    return m;
}

StateSpaceModel make_nn_baseline_model(const NnSystemParams& p, double extra_q3) {
    StateSpaceModel m;
    m.id = "nn-baseline";
    m.nx = 3;
    m.ny = 1;
    m.nu = 1;
    m.ntheta = 1;
    m.transform = ThetaTransform({SlotTransform::LogVariance});

    VectorField field = [](const Vector& x, const Vector& u, const Vector&) { return nn_linear_part(x, u(0)); };
    VectorFieldJacobian field_jac = [](const Vector&, const Vector&, const Vector&) { return nn_linear_jacobian(); };
    const double ts = p.ts;
    m.transition = [field, ts](const Vector& x, const Vector& u, const Vector& theta) {
        return rk4_step(field, x, u, theta, ts);
    };
    m.linearized_transition = [field, field_jac, ts](const Vector& x, const Vector& u, const Vector& theta) {
        return rk4_step_linearized(field, field_jac, x, u, theta, ts);
    };
    set_position_measurement(m);
    Matrix q = p.q * Matrix::Identity(3, 3);
    q(2, 2) += extra_q3;
    m.process_cov = [q](const Vector&) { return q; };
    m.measurement_cov = [](const Vector& theta) { return Matrix(Matrix::Constant(1, 1, std::exp(theta(0)))); };
    return m;
}

// ---------------------------------------------------------------------------
// Linear-Gaussian

StateSpaceModel make_linear_model(const Matrix& a, const Matrix& b, const Matrix& c, const Matrix& q, const Matrix& r) {
    StateSpaceModel m;
    m.id = "linear";
    m.nx = static_cast<int>(a.rows());
    m.ny = static_cast<int>(c.rows());
    m.nu = static_cast<int>(b.cols());
    m.ntheta = 1;
    m.transform = ThetaTransform::identity(1);
    m.transition = [a, b](const Vector& x, const Vector& u, const Vector&) -> Vector {
        Vector out = a * x;
        if (b.cols() > 0) out += b * u;
        return out;
    };
    m.linearized_transition = [a, b](const Vector& x, const Vector& u, const Vector&) {
        Vector out = a * x;
        if (b.cols() > 0) out += b * u;
        return Linearization{out, a};
    };
    m.measurement = [c](const Vector& x, const Vector&) -> Vector { return c * x; };
    m.linearized_measurement = [c](const Vector& x, const Vector&) { return Linearization{c * x, c}; };
    m.process_cov = [q](const Vector&) { return q; };
    m.measurement_cov = [r](const Vector&) { return r; };
    return m;
}

StateSpaceModel make_scalar_ar_model(double q, double r) {
    StateSpaceModel m;
    m.id = "scalar-ar";
    m.nx = 1;
    m.ny = 1;
    m.nu = 0;
    m.ntheta = 1;
    m.transform = ThetaTransform::identity(1);
    m.transition = [](const Vector& x, const Vector&, const Vector& theta) -> Vector { return theta(0) * x; };
    m.linearized_transition = [](const Vector& x, const Vector&, const Vector& theta) {
        return Linearization{theta(0) * x, Matrix::Constant(1, 1, theta(0))};
    };
    m.measurement = [](const Vector& x, const Vector&) -> Vector { return x; };
    m.linearized_measurement = [](const Vector& x, const Vector&) { return Linearization{x, Matrix::Identity(1, 1)}; };
    m.process_cov = [q](const Vector&) { return Matrix(Matrix::Constant(1, 1, q)); };
    m.measurement_cov = [r](const Vector&) { return Matrix(Matrix::Constant(1, 1, r)); };
    return m;
}

// ---------------------------------------------------------------------------
// Simulation

Trajectory simulate_model(const StateSpaceModel& model, const Vector& theta, const Vector& x0,
                          const std::function<Vector(std::size_t)>& input, double ts, std::size_t horizon,
                          std::uint64_t seed) {
    if (horizon < 1) throw DomainError("horizon must be at least 1");
    std::mt19937_64 rng(seed);
    const Matrix q_root = psd_sqrt(model.process_cov(theta));
    const Matrix r_root = psd_sqrt(model.measurement_cov(theta));

    Trajectory traj;
    traj.model_id = model.id;
    traj.ts = ts;
    traj.seed = seed;
    traj.initial_state = x0;
    Vector x = x0;
    for (std::size_t k = 1; k <= horizon; ++k) {
        const Vector u = input(k - 1);
        x = model.transition(x, u, theta) + sample_gaussian(q_root, rng);
        if (!x.allFinite()) throw SimulationDiverged(k);
        const Vector y = model.measurement(x, theta) + sample_gaussian(r_root, rng);
        traj.times.push_back(static_cast<double>(k) * ts);
        traj.states.push_back(x);
        traj.measurements.push_back(y);
        traj.inputs.push_back(u);
        traj.true_params.push_back(model.transform.constrain(theta));
    }
    return traj;
}

Trajectory simulate_bioreactor(const BioreactorParams& p, std::size_t horizon, std::uint64_t seed) {
    if (horizon < 1) throw DomainError("horizon must be at least 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const VectorField field = [&p](const Vector& x, const Vector&, const Vector& theta) {
        return bioreactor_derivative(x, theta(0), p);
    };
    const Matrix q_root = psd_sqrt(p.q * Matrix::Identity(3, 3));
    const double r_root = std::sqrt(p.r);

    Trajectory traj;
    traj.model_id = "bioreactor";
    traj.ts = p.ts;
    traj.seed = seed;
    traj.initial_state = p.x0;
    Vector x = p.x0;
    const Vector no_input(0);
    for (std::size_t k = 1; k <= horizon; ++k) {
        const double eta = eta_mean(static_cast<double>(k - 1), p) + p.sigma_eta * normal(rng);
        const Vector theta = Vector::Constant(1, eta);
        x = rk4_step(field, x, no_input, theta, p.ts) + sample_gaussian(q_root, rng);
        if (!x.allFinite()) throw SimulationDiverged(k);
        const double y = x(2) + r_root * normal(rng);
        traj.times.push_back(static_cast<double>(k) * p.ts);
        traj.states.push_back(x);
        traj.measurements.push_back(Vector::Constant(1, y));
        traj.inputs.push_back(no_input);
        traj.true_params.push_back(theta);
    }
    return traj;
}

Trajectory simulate_nn_system(const NnSystemParams& p, std::size_t horizon, std::uint64_t seed) {
    if (horizon < 1) throw DomainError("horizon must be at least 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const VectorField field = [](const Vector& x, const Vector& u, const Vector&) { return nn_true_derivative(x, u(0)); };
    const Matrix q_root = psd_sqrt(p.q * Matrix::Identity(3, 3));
    const double r_root = std::sqrt(p.r);

    Trajectory traj;
    traj.model_id = "nn";
    traj.ts = p.ts;
    traj.seed = seed;
    traj.initial_state = p.x0;
    Vector x = p.x0;
    const Vector theta = Vector::Constant(1, p.r);
    for (std::size_t k = 1; k <= horizon; ++k) {
        const Vector u = Vector::Constant(1, nn_input(k - 1, p));
        x = rk4_step(field, x, u, theta, p.ts) + sample_gaussian(q_root, rng);
        if (!x.allFinite()) throw SimulationDiverged(k);
        const double y = x(0) + r_root * normal(rng);
        traj.times.push_back(static_cast<double>(k) * p.ts);
        traj.states.push_back(x);
        traj.measurements.push_back(Vector::Constant(1, y));
        traj.inputs.push_back(u);
        traj.true_params.push_back(theta);
    }
    return traj;
}

Trajectory simulate_scalar_ar(double theta, double q, double r, double x0, std::size_t horizon, std::uint64_t seed) {
    const StateSpaceModel model = make_scalar_ar_model(q, r);
    return simulate_model(model, Vector::Constant(1, theta), Vector::Constant(1, x0),
                          [](std::size_t) { return Vector(0); }, 1.0, horizon, seed);
}

}  // namespace rbstein
