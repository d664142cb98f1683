#include "rbstein/theory.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"
#include "rbstein/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace rbstein {

Grid1D Grid1D::make(double lower, double upper, int points) {
    if (points < 2 || !(upper > lower)) throw DomainError("grid needs at least two points over a non-empty interval");
    Grid1D g;
    g.lower = lower;
    g.upper = upper;
    g.points = points;
    g.values = Vector::Zero(points);
    return g;
}

Vector Grid1D::nodes() const { return Vector::LinSpaced(points, lower, upper); }

Vector trapezoid_weights(const Grid1D& grid) {
    Vector w = Vector::Constant(grid.points, grid.spacing());
    w(0) *= 0.5;
    w(grid.points - 1) *= 0.5;
    return w;
}

double Grid1D::integrate(const Vector& f) const { return trapezoid_weights(*this).dot(f); }

void Grid1D::normalize() {
    const double m = mass();
    if (m > 0.0) values /= m;
}

double Grid2D::integrate(const Matrix& f) const {
    return trapezoid_weights(x).dot(f * trapezoid_weights(y));
}

Vector Grid2D::marginal_x() const { return values * trapezoid_weights(y); }

double silverman_bandwidth(const Vector& particles) {
    const auto n = static_cast<double>(particles.size());
    const double mean = particles.mean();
    const double var = n > 1 ? (particles.array() - mean).square().sum() / (n - 1.0) : 0.0;
    const double bw = 1.06 * std::sqrt(var) * std::pow(n, -0.2);
    return bw > 0.0 ? bw : 1e-3;
}

Vector kde_density(const Grid1D& grid, const Vector& particles, double bandwidth) {
    if (!(bandwidth > 0.0)) throw DomainError("KDE bandwidth must be positive");
    const Vector nodes = grid.nodes();
    Vector density = Vector::Zero(grid.points);
    for (Eigen::Index j = 0; j < particles.size(); ++j) {
        density += ((nodes.array() - particles(j)) / bandwidth).square().unaryExpr([](double z) {
            return std::exp(-0.5 * z);
        }).matrix();
    }
    const double mass = grid.integrate(density);
    if (mass > 0.0) density /= mass;
    return density;
}

double grid_kl(const Grid1D& grid, const Vector& q, const Vector& p) {
    Vector integrand(grid.points);
    for (int i = 0; i < grid.points; ++i) {
        integrand(i) = q(i) > 0.0 ? q(i) * (std::log(q(i)) - std::log(std::max(p(i), 1e-300))) : 0.0;
    }
    return grid.integrate(integrand);
}

double grid_l1(const Grid1D& grid, const Vector& p, const Vector& q) { return grid.integrate((p - q).cwiseAbs()); }

double stein_kernel(const Vector& a, const Vector& b, const Vector& score_a, const Vector& score_b, double h) {
    const Vector d = a - b;
    const double r2 = d.squaredNorm();
    const double k = std::exp(-r2 / h);
    const Vector grad_a = (-2.0 / h) * k * d;
    const Vector grad_b = (2.0 / h) * k * d;
    const auto dim = static_cast<double>(a.size());
    const double trace = k * (2.0 * dim / h - 4.0 * r2 / (h * h));
    return k * score_a.dot(score_b) + score_a.dot(grad_b) + score_b.dot(grad_a) + trace;
}

double ksd(const Matrix& particles, const ScoreFn& score, double h) {
    const Matrix s = score(particles);
    const auto n = particles.cols();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            total += stein_kernel(particles.col(i), particles.col(j), s.col(i), s.col(j), h);
        }
    }
    return total / static_cast<double>(n * n);
}

Target1D gaussian_target(double mean, double sd) {
    return {"gaussian",
            [=](double x) { return -0.5 * (x - mean) * (x - mean) / (sd * sd); },
            [=](double x) { return -(x - mean) / (sd * sd); }};
}

Target1D bimodal_target(double offset, double sd) {
    auto log_density = [=](double x) {
        const double a = -0.5 * std::pow((x + offset) / sd, 2);
        const double b = -0.5 * std::pow((x - offset) / sd, 2);
        const double m = std::max(a, b);
        return m + std::log(0.5 * std::exp(a - m) + 0.5 * std::exp(b - m));
    };
    auto score = [=](double x) {
        const double a = -0.5 * std::pow((x + offset) / sd, 2);
        const double b = -0.5 * std::pow((x - offset) / sd, 2);
        const double m = std::max(a, b);
        const double wa = std::exp(a - m);
        const double wb = std::exp(b - m);
        return (wa * (-(x + offset)) + wb * (-(x - offset))) / ((wa + wb) * sd * sd);
    };
    return {"bimodal", log_density, score};
}

Vector target_density(const Grid1D& grid, const Target1D& target) {
    Vector logs(grid.points);
    for (int i = 0; i < grid.points; ++i) logs(i) = target.log_density(grid.node(i));
    Vector density = (logs.array() - logs.maxCoeff()).exp().matrix();
    return density / grid.integrate(density);
}

namespace {

Vector sample_normal(int n, double mean, double sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(mean, sd);
    Vector out(n);
    for (int i = 0; i < n; ++i) out(i) = normal(rng);
    return out;
}

double bound_of(double kl) { return std::sqrt(2.0 * std::max(kl, 0.0)); }

}  // namespace

Prop1Report check_prop1(const Target1D& target, const Prop1Config& config) {
    const Grid1D grid = Grid1D::make(config.grid_lower, config.grid_upper, config.grid_points);
    const Vector pi = target_density(grid, target);
    Matrix particles = sample_normal(config.particles, config.init_mean, config.init_sd, config.seed).transpose();
    const ScoreFn score = [&](const Matrix& p) { return Matrix(p.unaryExpr(target.score)); };

    Prop1Report report;
    report.target = target.name;
    auto record = [&](const Matrix& p) {
        const Vector row = p.row(0).transpose();
        report.kl.push_back(grid_kl(grid, kde_density(grid, row, silverman_bandwidth(row)), pi));
        report.ksd.push_back(ksd(p, score, median_bandwidth(p)));
    };
    record(particles);
    SvgdOptions options;
    options.epsilon = config.epsilon;
    options.iterations = config.iterations;
    options.observer = [&](int, const Matrix& p) { record(p); };
    try {
        svgd_iterate(particles, score, options);
    } catch (const ParticleDiverged&) {
        report.kl.push_back(std::numeric_limits<double>::infinity());
    }

    report.non_increasing = true;
    for (std::size_t m = static_cast<std::size_t>(config.check_after); m + 1 < report.kl.size(); ++m) {
        if (!(report.kl[m + 1] <= report.kl[m] + config.tolerance)) report.non_increasing = false;
    }
    report.halved = std::isfinite(report.kl.back()) && report.kl.back() < 0.5 * report.kl.front();
    if (particles.allFinite()) {
        report.left_fraction = static_cast<double>((particles.array() < 0.0).count()) / config.particles;
    }
    report.pass = report.non_increasing && report.halved;
    return report;
}

Prop1Suite check_prop1_suite(std::uint64_t seed, const Prop1Config& base) {
    Prop1Config uni = base;
    uni.seed = seed;
    Prop1Config bi = uni;
    bi.init_mean = 0.0;
    return {check_prop1(gaussian_target(0.0, 1.0), uni), check_prop1(bimodal_target(2.0, 0.5), bi)};
}

ScalarKalmanPath scalar_kalman(double theta, const std::vector<double>& y, double q, double r, double m0, double p0) {
    ScalarKalmanPath path;
    path.cumulative_loglik.reserve(y.size());
    path.mean.reserve(y.size());
    path.var.reserve(y.size());
    double m = m0;
    double p = p0;
    double total = 0.0;
    for (const double obs : y) {
        const double mp = theta * m;
        const double pp = theta * theta * p + q;
        const double s = pp + r;
        const double e = obs - mp;
        total += -0.5 * (std::log(2.0 * std::numbers::pi * s) + e * e / s);
        const double k = pp / s;
        m = mp + k * e;
        p = (1.0 - k) * pp;
        path.cumulative_loglik.push_back(total);
        path.mean.push_back(m);
        path.var.push_back(p);
    }
    return path;
}

namespace {

// Exact joint posterior of the scalar AR problem on a theta grid.
struct GridOracle {
    Grid1D theta;
    std::vector<ScalarKalmanPath> paths;
    Vector log_prior;

    Vector posterior(int step) const {
        Vector logs(theta.points);
        for (int k = 0; k < theta.points; ++k) {
            logs(k) = log_prior(k) + paths[static_cast<std::size_t>(k)].cumulative_loglik[static_cast<std::size_t>(step - 1)];
        }
        Vector density = (logs.array() - logs.maxCoeff()).exp().matrix();
        return density / theta.integrate(density);
    }

    // integral of N(x; m_theta, v_theta) * weight(theta) d theta on the x grid
    Vector state_density(const Grid1D& xg, const Vector& weight, int step) const {
        const Vector w = trapezoid_weights(theta).cwiseProduct(weight);
        const Vector xs = xg.nodes();
        Vector out = Vector::Zero(xg.points);
        for (int k = 0; k < theta.points; ++k) {
            if (w(k) < 1e-300) continue;
            const auto& path = paths[static_cast<std::size_t>(k)];
            const double m = path.mean[static_cast<std::size_t>(step - 1)];
            const double sd = std::sqrt(path.var[static_cast<std::size_t>(step - 1)]);
            out += (w(k) / sd) * ((xs.array() - m) / sd).unaryExpr([](double z) { return normal_pdf(z); }).matrix();
        }
        return out;
    }
};

struct Prop2Setup {
    std::vector<double> y;
    GridOracle oracle;
    StateSpaceModel model;
};

Prop2Setup make_setup(const Prop2Config& c) {
    Prop2Setup s;
    const Trajectory traj = simulate_scalar_ar(c.theta_true, c.q, c.r, c.x0, static_cast<std::size_t>(c.horizon), c.seed);
    for (const auto& m : traj.measurements) s.y.push_back(m(0));
    s.oracle.theta = Grid1D::make(c.theta_lower, c.theta_upper, c.grid_points);
    s.oracle.log_prior.resize(c.grid_points);
    s.oracle.paths.reserve(static_cast<std::size_t>(c.grid_points));
    for (int k = 0; k < c.grid_points; ++k) {
        const double th = s.oracle.theta.node(k);
        s.oracle.log_prior(k) = -0.5 * std::pow((th - c.prior_mean) / c.prior_sd, 2);
        s.oracle.paths.push_back(scalar_kalman(th, s.y, c.q, c.r, c.m0, c.p0));
    }
    s.model = make_scalar_ar_model(c.q, c.r);
    return s;
}

ParticleEnsemble initial_ensemble(const Prop2Config& c) {
    const Vector thetas =
        sample_normal(c.particles, c.prior_mean + c.init_offset * c.prior_sd, c.prior_sd, c.seed + 1);
    GaussianBelief b0{Vector::Constant(1, c.m0), Matrix::Constant(1, 1, c.p0)};
    return make_ensemble(thetas.transpose(), b0, c.seed);
}

std::pair<double, double> mean_sd(const Grid1D& grid, const Vector& density) {
    const Vector nodes = grid.nodes();
    const double mean = grid.integrate(density.cwiseProduct(nodes));
    const double var = grid.integrate(density.cwiseProduct((nodes.array() - mean).square().matrix()));
    return {mean, std::sqrt(var)};
}

}  // namespace

Prop2Report check_prop2(const Prop2Config& c) {
    const Prop2Setup setup = make_setup(c);
    ParticleEnsemble ens = initial_ensemble(c);
    RbsgdConfig filter;
    filter.epsilon = c.epsilon;
    filter.iterations = c.iterations;

    Prop2Report report;
    report.pass = true;
    for (int t = 1; t <= c.horizon; ++t) {
        rbsgd_step(ens, Vector::Constant(1, setup.y[static_cast<std::size_t>(t - 1)]), Vector::Zero(0), setup.model, filter);
        if (t % c.check_every != 0) continue;

        const Grid1D& tg = setup.oracle.theta;
        const Vector pi = setup.oracle.posterior(t);
        const Vector particles = ens.thetas.row(0).transpose();
        const Vector q = kde_density(tg, particles, silverman_bandwidth(particles));

        const GaussianMixture1D mix = state_marginal(ens, 0);
        const Vector exact_weight = pi;
        const double x_mean = mix.mean();
        const double x_sd = std::sqrt(mix.variance());
        double lo = x_mean - 12.0 * x_sd;
        double hi = x_mean + 12.0 * x_sd;
        for (int k = 0; k < tg.points; k += 50) {
            const auto& path = setup.oracle.paths[static_cast<std::size_t>(k)];
            if (pi(k) * tg.spacing() < 1e-12) continue;
            const double m = path.mean[static_cast<std::size_t>(t - 1)];
            const double sd = std::sqrt(path.var[static_cast<std::size_t>(t - 1)]);
            lo = std::min(lo, m - 12.0 * sd);
            hi = std::max(hi, m + 12.0 * sd);
        }
        const Grid1D xg = Grid1D::make(lo, hi, 4001);
        const Vector exact_state = setup.oracle.state_density(xg, exact_weight, t);
        Vector filter_state(xg.points);
        for (int i = 0; i < xg.points; ++i) filter_state(i) = mix.pdf(xg.node(i));
        const Vector kde_state = setup.oracle.state_density(xg, q, t);

        Prop2Row row;
        row.step = t;
        row.state_l1 = grid_l1(xg, exact_state, filter_state);
        row.bound = bound_of(grid_kl(tg, q, pi));
        row.kde_state_l1 = grid_l1(xg, exact_state, kde_state);
        row.param_l1 = grid_l1(tg, pi, q);
        row.pass = row.state_l1 <= row.bound + c.slack && row.kde_state_l1 <= row.param_l1 + c.slack;
        report.pass = report.pass && row.pass;
        report.rows.push_back(row);
    }
    return report;
}

Prop3Report check_prop3(const Prop3Config& c) {
    const Prop2Setup setup = make_setup(c.setup);
    const int t = c.check_step;
    const Grid1D& tg = setup.oracle.theta;
    const Vector pi = setup.oracle.posterior(t);
    const auto [mean, sd] = mean_sd(tg, pi);

    const std::vector<double> y(setup.y.begin(), setup.y.begin() + t);
    const auto& sc = c.setup;
    auto log_post = [&](const Vector& th) {
        const ScalarKalmanPath path = scalar_kalman(th(0), y, sc.q, sc.r, sc.m0, sc.p0);
        return -0.5 * std::pow((th(0) - sc.prior_mean) / sc.prior_sd, 2) + path.cumulative_loglik.back();
    };
    const ScoreFn score = [&](const Matrix& p) {
        Matrix s(1, p.cols());
        for (Eigen::Index i = 0; i < p.cols(); ++i) s.col(i) = fd_gradient(log_post, p.col(i));
        return s;
    };

    Prop3Report report;
    report.step = t;
    report.epsilon = c.epsilon_scale * sd * sd;
    Matrix particles = sample_normal(sc.particles, mean + c.offset_sd * sd, sd, sc.seed + 2).transpose();
    auto record = [&](const Matrix& p) {
        const Vector row = p.row(0).transpose();
        report.bound.push_back(bound_of(grid_kl(tg, kde_density(tg, row, silverman_bandwidth(row)), pi)));
    };
    record(particles);
    if (report.epsilon > 0.0) {
        SvgdOptions options;
        options.epsilon = report.epsilon;
        options.iterations = c.iterations;
        options.observer = [&](int, const Matrix& p) { record(p); };
        svgd_iterate(particles, score, options);
    } else {
        for (int m = 0; m < c.iterations; ++m) record(particles);
    }
    report.pass = monotone_until_floor(report.bound, c.noise_floor);
    return report;
}

bool monotone_until_floor(const std::vector<double>& sequence, double floor) {
    if (sequence.size() < 2) return false;
    std::size_t m = 0;
    while (m + 1 < sequence.size() && sequence[m] - sequence[m + 1] >= floor) ++m;
    for (std::size_t k = m; k + 1 < sequence.size(); ++k) {
        if (sequence[k + 1] > sequence[k] + floor) return false;
    }
    return sequence.back() < sequence.front() - floor;
}

}  // namespace rbstein
