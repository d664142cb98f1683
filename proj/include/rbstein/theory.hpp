#pragma once

#include "rbstein/svgd.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rbstein {

struct Grid1D {
    double lower = 0.0;
    double upper = 1.0;
    int points = 2;
    Vector values;

    static Grid1D make(double lower, double upper, int points);
    double spacing() const { return (upper - lower) / (points - 1); }
    double node(int i) const { return lower + spacing() * i; }
    Vector nodes() const;
    /// Trapezoid quadrature of arbitrary node values on this grid.
    double integrate(const Vector& f) const;
    double mass() const { return integrate(values); }
    void normalize();
};

struct Grid2D {
    Grid1D x;
    Grid1D y;
    Matrix values;  // values(i, j) at (x_i, y_j)

    double integrate(const Matrix& f) const;
    /// Integrates out the second axis.
    Vector marginal_x() const;
};

/// Trapezoid weights (spacing included) for a grid.
Vector trapezoid_weights(const Grid1D& grid);

/// Gaussian KDE on the grid, renormalized to unit trapezoid mass.
Vector kde_density(const Grid1D& grid, const Vector& particles, double bandwidth);
/// 1.06 * sd * N^{-1/5}; falls back to 1e-3 for a degenerate sample.
double silverman_bandwidth(const Vector& particles);

/// KL(q || p) by trapezoid quadrature; p is floored at 1e-300.
double grid_kl(const Grid1D& grid, const Vector& q, const Vector& p);
/// Integral of |p - q|.
double grid_l1(const Grid1D& grid, const Vector& p, const Vector& q);

/// Stein kernel of the RBF kernel exp(-|a-b|^2/h) for the given scores.
double stein_kernel(const Vector& a, const Vector& b, const Vector& score_a, const Vector& score_b, double h);
/// V-statistic (1/N^2) sum_ij u_p(theta_i, theta_j).
double ksd(const Matrix& particles, const ScoreFn& score, double h);

/// Unnormalized 1D target given by its log-density and score.
struct Target1D {
    std::string name;
    std::function<double(double)> log_density;
    std::function<double(double)> score;
};
Target1D gaussian_target(double mean, double sd);
/// Equal mixture of N(-offset, sd^2) and N(offset, sd^2).
Target1D bimodal_target(double offset, double sd);
/// Normalized target density on the grid.
Vector target_density(const Grid1D& grid, const Target1D& target);

struct Prop1Config {
    int particles = 200;
    double epsilon = 1e-2;
    int iterations = 200;
    double init_mean = 5.0;
    double init_sd = 1.0;
    double tolerance = 1e-3;
    int check_after = 5;
    double grid_lower = -10.0;
    double grid_upper = 12.0;
    int grid_points = 2001;
    std::uint64_t seed = 1;
};

struct Prop1Report {
    std::string target;
    std::vector<double> kl;   // KL(q_m || pi), m = 0..M
    std::vector<double> ksd;  // KSD of the particle set, m = 0..M
    bool non_increasing = false;
    bool halved = false;
    double left_fraction = 0.0;  // share of particles below zero at the end
    bool pass = false;
};

Prop1Report check_prop1(const Target1D& target, const Prop1Config& config);

/// Standard pair: N(0, 1) from an N(5, 1) start, and the +-2 mixture with
/// component sd 0.5 from an N(0, 1) start.
struct Prop1Suite {
    Prop1Report unimodal;
    Prop1Report bimodal;
    bool pass() const { return unimodal.pass && bimodal.pass; }
};
Prop1Suite check_prop1_suite(std::uint64_t seed, const Prop1Config& base = {});

/// Exact Kalman filter of x' = theta x + q, y = x + r for one theta.
struct ScalarKalmanPath {
    std::vector<double> cumulative_loglik;  // after step t (index t-1)
    std::vector<double> mean;
    std::vector<double> var;
};
ScalarKalmanPath scalar_kalman(double theta, const std::vector<double>& y, double q, double r, double m0, double p0);

struct Prop2Config {
    double theta_true = 0.8;
    double q = 0.5;
    double r = 0.1;
    double x0 = 1.0;
    double m0 = 0.0;
    double p0 = 1.0;
    double prior_mean = 0.5;
    double prior_sd = 0.3;
    int horizon = 100;
    int check_every = 10;
    int particles = 100;
    double epsilon = 1e-2;
    int iterations = 5;
    double theta_lower = -1.5;
    double theta_upper = 2.5;
    int grid_points = 2001;
    double slack = 1e-3;
    /// Shift of the initial particle cloud in prior standard deviations.
    double init_offset = 0.0;
    std::uint64_t seed = 7;
};

struct Prop2Row {
    int step = 0;
    double state_l1 = 0.0;    // ||p(x|y) - filter mixture||_1
    double bound = 0.0;       // sqrt(2 KL(q_t || pi_t))
    double kde_state_l1 = 0.0;  // ||p(x|y) - integral p(x|theta) q_t(theta)||_1
    double param_l1 = 0.0;    // ||pi_t - q_t||_1
    bool pass = false;
};

struct Prop2Report {
    std::vector<Prop2Row> rows;
    bool pass = false;
};

Prop2Report check_prop2(const Prop2Config& config);

struct Prop3Config {
    Prop2Config setup;
    int check_step = 50;
    int iterations = 20;
    /// Step size as a multiple of the posterior variance of pi_t.
    double epsilon_scale = 0.2;
    double offset_sd = 3.0;
    double noise_floor = 5e-3;
};

struct Prop3Report {
    int step = 0;
    double epsilon = 0.0;
    std::vector<double> bound;  // sqrt(2 KL(q_{t,m} || pi_t)), m = 0..M
    bool pass = false;
};

Prop3Report check_prop3(const Prop3Config& config);

/// Pass rule for the bound sequence: strictly decreasing until the first
/// decrement smaller than the floor, never rising by more than the floor
/// afterwards, and ending below the start by at least the floor.
bool monotone_until_floor(const std::vector<double>& sequence, double floor);

}  // namespace rbstein
