#include "rbstein/io.hpp"

#include "rbstein/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace rbstein {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string format_number(double value, int precision) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, value);
    return buf;
}

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(trim(item));
    return parts;
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw UsageError("'" + key + "' expects a number, got '" + value + "'");
    }
}

long long to_integer(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw UsageError("'" + key + "' expects an integer, got '" + value + "'");
    }
}

int to_positive_int(const std::string& key, const std::string& value) {
    const long long v = to_integer(key, value);
    if (v < 1) throw UsageError("'" + key + "' must be at least 1");
    return static_cast<int>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
    std::string v = value;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw UsageError("'" + key + "' expects a boolean, got '" + value + "'");
}

Eigen::Vector3d to_vector3(const std::string& key, const std::string& value) {
    const auto parts = split(value, ',');
    if (parts.size() != 3) throw UsageError("'" + key + "' expects three comma-separated numbers");
    return {to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2])};
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <class Field>
Setter number(Field field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = to_double(k, v); };
}

template <class Field>
Setter nonnegative(Field field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) {
        const double x = to_double(k, v);
        if (x < 0.0) throw UsageError("'" + k + "' must be non-negative");
        field(c) = x;
    };
}

template <class Field>
Setter positive(Field field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) {
        const double x = to_double(k, v);
        if (!(x > 0.0)) throw UsageError("'" + k + "' must be positive");
        field(c) = x;
    };
}

template <class Field>
Setter count(Field field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = to_positive_int(k, v); };
}

template <class Field>
Setter flag(Field field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = to_bool(k, v); };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        // [run]
        t["run.model"] = [](RunConfig& c, const std::string&, const std::string& v) {
            if (v != "bioreactor" && v != "nn") throw UsageError("unknown model '" + v + "' (expected bioreactor or nn)");
            c.model = v;
        };
        t["run.filter"] = [](RunConfig& c, const std::string&, const std::string& v) { c.filter.kind = parse_filter(v); };
        t["run.particles"] = count([](RunConfig& c) -> int& { return c.filter.particles; });
        t["run.iterations"] = count([](RunConfig& c) -> int& { return c.filter.iterations; });
        t["run.epsilon"] = nonnegative([](RunConfig& c) -> double& { return c.filter.epsilon; });
        t["run.sigma_theta"] = nonnegative([](RunConfig& c) -> double& { return c.filter.sigma_theta; });
        t["run.ess_threshold"] = number([](RunConfig& c) -> double& { return c.filter.ess_threshold; });
        t["run.prior"] = [](RunConfig& c, const std::string&, const std::string& v) {
            c.filter.prior_mode = parse_prior_mode(v);
        };
        t["run.svgd_adam"] = flag([](RunConfig& c) -> bool& { return c.filter.svgd_adam; });
        t["run.refresh_fisher"] = flag([](RunConfig& c) -> bool& { return c.filter.refresh_fisher; });
        t["run.reset_adam"] = flag([](RunConfig& c) -> bool& { return c.filter.reset_adam_each_step; });
        t["run.beta1"] = number([](RunConfig& c) -> double& { return c.filter.fisher_adam.beta1; });
        t["run.beta2"] = number([](RunConfig& c) -> double& { return c.filter.fisher_adam.beta2; });
        t["run.horizon"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.horizon = static_cast<std::size_t>(to_positive_int(k, v));
        };
        t["run.seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            const long long s = to_integer(k, v);
            if (s < 0) throw UsageError("'" + k + "' must be non-negative");
            c.seed = static_cast<std::uint64_t>(s);
        };
        t["run.out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; };
        t["run.realizations"] = count([](RunConfig& c) -> int& { return c.realizations; });
        t["run.threads"] = count([](RunConfig& c) -> int& { return c.threads; });
        t["run.compare"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            std::vector<FilterKind> kinds;
            for (const auto& name : split(v, ',')) kinds.push_back(parse_filter(name));
            if (kinds.empty()) throw UsageError("'" + k + "' lists no filters");
            c.compare = kinds;
        };
        // [bioreactor]
        t["bioreactor.mu_max"] = positive([](RunConfig& c) -> double& { return c.bioreactor.params.mu_max; });
        t["bioreactor.k_s"] = positive([](RunConfig& c) -> double& { return c.bioreactor.params.k_s; });
        t["bioreactor.k_i"] = positive([](RunConfig& c) -> double& { return c.bioreactor.params.k_i; });
        t["bioreactor.y_xs"] = positive([](RunConfig& c) -> double& { return c.bioreactor.params.y_xs; });
        t["bioreactor.y_px"] = positive([](RunConfig& c) -> double& { return c.bioreactor.params.y_px; });
        t["bioreactor.eta0"] = number([](RunConfig& c) -> double& { return c.bioreactor.params.eta0; });
        t["bioreactor.eta_f"] = number([](RunConfig& c) -> double& { return c.bioreactor.params.eta_f; });
        t["bioreactor.alpha"] = number([](RunConfig& c) -> double& { return c.bioreactor.params.alpha; });
        t["bioreactor.beta"] = number([](RunConfig& c) -> double& { return c.bioreactor.params.beta; });
        t["bioreactor.q"] = nonnegative([](RunConfig& c) -> double& { return c.bioreactor.params.q; });
        t["bioreactor.r"] = nonnegative([](RunConfig& c) -> double& { return c.bioreactor.params.r; });
        t["bioreactor.ts"] = positive([](RunConfig& c) -> double& { return c.bioreactor.params.ts; });
        t["bioreactor.sigma_eta"] = nonnegative([](RunConfig& c) -> double& { return c.bioreactor.params.sigma_eta; });
        t["bioreactor.x0"] = [](RunConfig& c, const std::string& k, const std::string& v) {
            c.bioreactor.params.x0 = to_vector3(k, v);
        };
        t["bioreactor.theta_init_mean"] = number([](RunConfig& c) -> double& { return c.bioreactor.theta_init_mean; });
        t["bioreactor.theta_init_sd"] = nonnegative([](RunConfig& c) -> double& { return c.bioreactor.theta_init_sd; });
        t["bioreactor.p0"] = positive([](RunConfig& c) -> double& { return c.bioreactor.p0; });
        // [nn]
        t["nn.ts"] = positive([](RunConfig& c) -> double& { return c.nn.params.ts; });
        t["nn.q"] = nonnegative([](RunConfig& c) -> double& { return c.nn.params.q; });
        t["nn.r"] = nonnegative([](RunConfig& c) -> double& { return c.nn.params.r; });
        t["nn.x0"] = [](RunConfig& c, const std::string& k, const std::string& v) { c.nn.params.x0 = to_vector3(k, v); };
        t["nn.input_amp1"] = number([](RunConfig& c) -> double& { return c.nn.params.input_amp1; });
        t["nn.input_freq1"] = number([](RunConfig& c) -> double& { return c.nn.params.input_freq1; });
        t["nn.input_amp2"] = number([](RunConfig& c) -> double& { return c.nn.params.input_amp2; });
        t["nn.input_freq2"] = number([](RunConfig& c) -> double& { return c.nn.params.input_freq2; });
        t["nn.weight_init_sd"] = nonnegative([](RunConfig& c) -> double& { return c.nn.weight_init_sd; });
        t["nn.r_init"] = positive([](RunConfig& c) -> double& { return c.nn.r_init; });
        t["nn.log_r_init_sd"] = nonnegative([](RunConfig& c) -> double& { return c.nn.log_r_init_sd; });
        t["nn.p0"] = positive([](RunConfig& c) -> double& { return c.nn.p0; });
        t["nn.baseline_extra_q3"] = nonnegative([](RunConfig& c) -> double& { return c.nn.baseline_extra_q3; });
        t["nn.particles"] = count([](RunConfig& c) -> int& { return c.nn.filter.particles; });
        t["nn.iterations"] = count([](RunConfig& c) -> int& { return c.nn.filter.iterations; });
        t["nn.epsilon"] = nonnegative([](RunConfig& c) -> double& { return c.nn.filter.epsilon; });
        t["nn.prior"] = [](RunConfig& c, const std::string&, const std::string& v) {
            c.nn.filter.prior_mode = parse_prior_mode(v);
        };
        t["nn.refresh_fisher"] = flag([](RunConfig& c) -> bool& { return c.nn.filter.refresh_fisher; });
        t["nn.reset_adam"] = flag([](RunConfig& c) -> bool& { return c.nn.filter.reset_adam_each_step; });
        return t;
    }();
    return table;
}

}  // namespace

PriorMode parse_prior_mode(const std::string& name) {
    if (name == "moment-fit") return PriorMode::MomentFit;
    if (name == "previous-score") return PriorMode::PreviousScore;
    if (name == "likelihood-only") return PriorMode::LikelihoodOnly;
    throw UsageError("unknown prior mode '" + name + "' (expected moment-fit, previous-score or likelihood-only)");
}

std::string prior_mode_name(PriorMode mode) {
    switch (mode) {
        case PriorMode::MomentFit: return "moment-fit";
        case PriorMode::PreviousScore: return "previous-score";
        case PriorMode::LikelihoodOnly: return "likelihood-only";
    }
    return "unknown";
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError("unknown config key '" + key + "'");
    it->second(config, key, trim(value));
}

RunConfig parse_config(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw UsageError(std::string("malformed config: ") + e.what());
    }
    RunConfig config;
    for (const auto& [section, body] : tree) {
        if (!body.data().empty()) throw UsageError("config key '" + section + "' is outside a section");
        for (const auto& [key, value] : body) apply_setting(config, section + "." + key, value.data());
    }
    return config;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config '" + path.string() + "'");
    return parse_config(in);
}

std::size_t config_horizon(const RunConfig& config) {
    if (config.horizon > 0) return config.horizon;
    return config.model == "nn" ? config.nn.horizon : config.bioreactor.horizon;
}

fs::path output_path(const RunConfig& config, const std::string& study, const std::string& tag, std::uint64_t seed,
                     const std::string& extension) {
    return config.out_dir / (study + "_" + tag + "_" + std::to_string(seed) + "." + extension);
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw std::runtime_error("cannot create directory '" + path.parent_path().string() + "'");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    return out;
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out = open_output(path);
    out << doc.dump(2) << '\n';
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vector_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(number_or_null(v(i)));
    return arr;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << cells[i];
    }
    out << '\n';
}

}  // namespace

fs::path meta_path(const fs::path& csv) {
    fs::path p = csv;
    p.replace_extension(".meta.json");
    return p;
}

void write_trajectory(const fs::path& csv, const Trajectory& traj) {
    if (traj.length() == 0) throw UsageError("trajectory is empty");
    const auto nx = traj.states.front().size();
    const auto ny = traj.measurements.front().size();
    const auto nu = traj.inputs.front().size();
    const auto np = traj.true_params.front().size();
    std::ofstream out = open_output(csv);
    std::vector<std::string> header{"t"};
    for (Eigen::Index i = 0; i < nx; ++i) header.push_back("x" + std::to_string(i + 1));
    for (Eigen::Index i = 0; i < ny; ++i) header.push_back("y" + std::to_string(i + 1));
    for (Eigen::Index i = 0; i < nu; ++i) header.push_back("u" + std::to_string(i + 1));
    for (Eigen::Index i = 0; i < np; ++i) header.push_back("theta" + std::to_string(i + 1));
    write_row(out, header);
    for (std::size_t k = 0; k < traj.length(); ++k) {
        std::vector<std::string> row{format_number(traj.times[k], 17)};
        for (const Vector* v : {&traj.states[k], &traj.measurements[k], &traj.inputs[k], &traj.true_params[k]}) {
            for (Eigen::Index i = 0; i < v->size(); ++i) row.push_back(format_number((*v)(i), 17));
        }
        write_row(out, row);
    }
    json meta;
    meta["model_id"] = traj.model_id;
    meta["seed"] = traj.seed;
    meta["ts"] = traj.ts;
    meta["horizon"] = traj.length();
    meta["initial_state"] = vector_json(traj.initial_state);
    meta["columns"] = {{"x", nx}, {"y", ny}, {"u", nu}, {"theta", np}};
    write_json(meta_path(csv), meta);
}

Trajectory read_trajectory(const fs::path& csv) {
    std::ifstream meta_in(meta_path(csv));
    if (!meta_in) throw UsageError("missing trajectory metadata '" + meta_path(csv).string() + "'");
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed trajectory metadata: ") + e.what());
    }
    const CsvTable table = read_csv(csv);
    Trajectory traj;
    try {
        traj.model_id = meta.at("model_id").get<std::string>();
        traj.seed = meta.at("seed").get<std::uint64_t>();
        traj.ts = meta.at("ts").get<double>();
        const auto& cols = meta.at("columns");
        const int nx = cols.at("x").get<int>();
        const int ny = cols.at("y").get<int>();
        const int nu = cols.at("u").get<int>();
        const int np = cols.at("theta").get<int>();
        const auto& x0 = meta.at("initial_state");
        traj.initial_state.resize(static_cast<Eigen::Index>(x0.size()));
        for (std::size_t i = 0; i < x0.size(); ++i) traj.initial_state(static_cast<Eigen::Index>(i)) = x0[i].get<double>();
        if (static_cast<int>(table.header.size()) != 1 + nx + ny + nu + np) {
            throw UsageError("trajectory columns do not match its metadata");
        }
        for (const auto& row : table.rows) {
            int c = 0;
            traj.times.push_back(row[static_cast<std::size_t>(c++)]);
            auto take = [&](int n) {
                Vector v(n);
                for (int i = 0; i < n; ++i) v(i) = row[static_cast<std::size_t>(c++)];
                return v;
            };
            traj.states.push_back(take(nx));
            traj.measurements.push_back(take(ny));
            traj.inputs.push_back(take(nu));
            traj.true_params.push_back(take(np));
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("malformed trajectory metadata: ") + e.what());
    }
    if (traj.length() == 0) throw UsageError("trajectory '" + csv.string() + "' has no rows");
    return traj;
}

void write_run_record(const fs::path& csv, const RunResult& run) {
    std::ofstream out = open_output(csv);
    if (run.rows.empty()) {
        write_row(out, {"step", "time"});
        return;
    }
    const auto nx = run.rows.front().true_state.size();
    const auto& names = run.theta_names;
    std::vector<std::string> header{"step", "time"};
    for (Eigen::Index c = 0; c < nx; ++c) header.push_back("x" + std::to_string(c + 1) + "_true");
    for (const auto& n : names) header.push_back(n + "_true");
    for (Eigen::Index c = 0; c < nx; ++c) {
        header.push_back("x" + std::to_string(c + 1) + "_mean");
        header.push_back("x" + std::to_string(c + 1) + "_std");
    }
    for (const auto& n : names) {
        header.push_back(n + "_mean");
        header.push_back(n + "_std");
    }
    for (Eigen::Index c = 0; c < nx; ++c) header.push_back("x" + std::to_string(c + 1) + "_crps");
    header.insert(header.end(), {"y_crps", "ess", "resampled"});
    header.insert(header.end(), run.extra_names.begin(), run.extra_names.end());
    write_row(out, header);

    for (const auto& r : run.rows) {
        std::vector<std::string> row{std::to_string(r.step), format_number(r.time)};
        for (Eigen::Index c = 0; c < nx; ++c) row.push_back(format_number(r.true_state(c)));
        for (std::size_t k = 0; k < names.size(); ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            row.push_back(i < r.true_theta.size() ? format_number(r.true_theta(i)) : "nan");
        }
        for (Eigen::Index c = 0; c < nx; ++c) {
            row.push_back(format_number(r.state_mean(c)));
            row.push_back(format_number(r.state_std(c)));
        }
        for (std::size_t k = 0; k < names.size(); ++k) {
            row.push_back(format_number(r.theta_mean(static_cast<Eigen::Index>(k))));
            row.push_back(format_number(r.theta_std(static_cast<Eigen::Index>(k))));
        }
        for (Eigen::Index c = 0; c < nx; ++c) row.push_back(format_number(r.state_crps(c)));
        row.push_back(format_number(r.measurement_crps));
        row.push_back(format_number(r.ess));
        row.push_back(r.resampled ? "1" : "0");
        for (Eigen::Index e = 0; e < r.extra.size(); ++e) row.push_back(format_number(r.extra(e)));
        write_row(out, row);
    }
}

void write_timing(const fs::path& csv, const RunResult& run) {
    std::ofstream out = open_output(csv);
    write_row(out, {"step", "seconds"});
    for (std::size_t k = 0; k < run.step_seconds.size(); ++k) {
        write_row(out, {std::to_string(k + 1), format_number(run.step_seconds[k], 6)});
    }
}

void write_run_summary(const fs::path& path, const RunResult& run, const std::string& study) {
    json doc;
    doc["study"] = study;
    doc["filter"] = run.filter;
    doc["seed"] = run.seed;
    doc["steps"] = run.rows.size();
    doc["failed"] = run.failed;
    if (run.failed) {
        doc["failed_step"] = run.failed_step;
        doc["error"] = run.error;
    }
    doc["mean_state_crps"] = vector_json(run.mean_state_crps());
    doc["aggregate_crps"] = number_or_null(run.aggregate_crps());
    doc["mean_measurement_crps"] = number_or_null(run.mean_measurement_crps());
    json tracked = json::array();
    for (const int c : run.tracked_states) tracked.push_back("x" + std::to_string(c + 1));
    doc["tracked_states"] = tracked;
    json final_theta = json::object();
    if (!run.rows.empty()) {
        const StepRow& last = run.rows.back();
        for (std::size_t k = 0; k < run.theta_names.size(); ++k) {
            final_theta[run.theta_names[k]] = {{"mean", number_or_null(last.theta_mean(static_cast<Eigen::Index>(k)))},
                                               {"std", number_or_null(last.theta_std(static_cast<Eigen::Index>(k)))}};
        }
    }
    doc["final_theta"] = final_theta;
    write_json(path, doc);
}

void write_monte_carlo(const fs::path& csv, const fs::path& path, const MonteCarloResult& result,
                       const MonteCarloConfig& config) {
    {
        std::ofstream out = open_output(csv);
        std::vector<std::string> header{"seed"};
        header.insert(header.end(), result.filters.begin(), result.filters.end());
        write_row(out, header);
        for (Eigen::Index r = 0; r < result.crps.rows(); ++r) {
            std::vector<std::string> row{std::to_string(result.seeds[static_cast<std::size_t>(r)])};
            for (Eigen::Index f = 0; f < result.crps.cols(); ++f) row.push_back(format_number(result.crps(r, f)));
            write_row(out, row);
        }
    }
    json doc;
    doc["study"] = "bioreactor";
    doc["realizations"] = config.realizations;
    doc["master_seed"] = config.master_seed;
    doc["horizon"] = config.study.horizon;
    json filters = json::array();
    for (std::size_t f = 0; f < result.filters.size(); ++f) {
        const QuartileSummary q = result.summary(static_cast<int>(f));
        const FilterSettings& s = config.filters[f];
        filters.push_back({{"filter", result.filters[f]},
                           {"particles", s.particles},
                           {"iterations", s.iterations},
                           {"epsilon", s.epsilon},
                           {"failures", result.failures[f]},
                           {"quartiles",
                            {{"min", number_or_null(q.min)},
                             {"q1", number_or_null(q.q1)},
                             {"median", number_or_null(q.median)},
                             {"q3", number_or_null(q.q3)},
                             {"max", number_or_null(q.max)}}}});
    }
    doc["filters"] = filters;
    json wins = json::array();
    for (std::size_t a = 0; a < result.filters.size(); ++a) {
        for (std::size_t b = 0; b < result.filters.size(); ++b) {
            if (a == b) continue;
            wins.push_back({{"filter", result.filters[a]},
                            {"versus", result.filters[b]},
                            {"win_rate", result.win_rate(static_cast<int>(a), static_cast<int>(b))}});
        }
    }
    doc["win_rates"] = wins;
    write_json(path, doc);
}

namespace {

json series(const std::vector<double>& v) {
    json arr = json::array();
    for (const double x : v) arr.push_back(number_or_null(x));
    return arr;
}

}  // namespace

void write_theory_report(const fs::path& path, const Prop1Report& report) {
    json doc;
    doc["check"] = "prop1";
    doc["target"] = report.target;
    doc["pass"] = report.pass;
    doc["non_increasing"] = report.non_increasing;
    doc["halved"] = report.halved;
    doc["left_fraction"] = report.left_fraction;
    doc["kl"] = series(report.kl);
    doc["ksd"] = series(report.ksd);
    write_json(path, doc);
}

void write_theory_report(const fs::path& path, const Prop2Report& report) {
    json doc;
    doc["check"] = "prop2";
    doc["pass"] = report.pass;
    json rows = json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"step", r.step},
                        {"state_l1", r.state_l1},
                        {"bound", r.bound},
                        {"kde_state_l1", r.kde_state_l1},
                        {"param_l1", r.param_l1},
                        {"pass", r.pass}});
    }
    doc["rows"] = rows;
    write_json(path, doc);
}

void write_theory_report(const fs::path& path, const Prop3Report& report) {
    json doc;
    doc["check"] = "prop3";
    doc["pass"] = report.pass;
    doc["step"] = report.step;
    doc["epsilon"] = report.epsilon;
    doc["bound"] = series(report.bound);
    write_json(path, doc);
}

// ---------------------------------------------------------------------------
// Tables

int CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::vector<double> CsvTable::values(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw UsageError("column '" + name + "' not found");
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[static_cast<std::size_t>(c)]);
    return out;
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open '" + path.string() + "'");
    CsvTable table;
    std::string line;
    if (!std::getline(in, line)) throw UsageError("'" + path.string() + "' is empty");
    table.header = split(line, ',');
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != table.header.size()) {
            throw UsageError("'" + path.string() + "' line " + std::to_string(line_no) + " has " +
                             std::to_string(cells.size()) + " cells, expected " + std::to_string(table.header.size()));
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& cell : cells) {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0') {
                throw UsageError("'" + path.string() + "' line " + std::to_string(line_no) + ": '" + cell +
                                 "' is not a number");
            }
            row.push_back(v);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace rbstein
