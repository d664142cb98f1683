#pragma once

#include "rbstein/experiments.hpp"
#include "rbstein/theory.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rbstein {

/// Everything a CLI command needs. Loaded from an INI file with the sections
/// [run], [bioreactor] and [nn]; CLI flags override individual keys.
struct RunConfig {
    std::string model = "bioreactor";  // bioreactor | nn
    FilterSettings filter;
    std::size_t horizon = 0;  // 0: the study default
    std::optional<std::uint64_t> seed;
    std::filesystem::path out_dir = "out";
    int realizations = 50;
    int threads = 1;
    std::vector<FilterKind> compare{FilterKind::Rbpf, FilterKind::Rbsgd, FilterKind::Rbfsgd};
    BioreactorStudy bioreactor;
    NnStudy nn;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::filesystem::path& path);  // throws UsageError

/// Sets one "section.key" entry; unknown keys and malformed values throw UsageError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

PriorMode parse_prior_mode(const std::string& name);
std::string prior_mode_name(PriorMode mode);

/// Effective horizon for the configured model.
std::size_t config_horizon(const RunConfig& config);

/// Output file naming shared by every command: {study}_{tag}_{seed}.{ext}.
std::filesystem::path output_path(const RunConfig& config, const std::string& study, const std::string& tag,
                                  std::uint64_t seed, const std::string& extension = "csv");

// ---------------------------------------------------------------------------
// Trajectories

/// CSV with header t,x1..xn,y1..ym,u1..uk,theta1..thetap plus a JSON sidecar
/// (<file>.meta.json) holding model id, seed, ts and the initial state.
void write_trajectory(const std::filesystem::path& csv, const Trajectory& traj);
Trajectory read_trajectory(const std::filesystem::path& csv);
std::filesystem::path meta_path(const std::filesystem::path& csv);

// ---------------------------------------------------------------------------
// Run records

void write_run_record(const std::filesystem::path& csv, const RunResult& run);
/// Wall-clock seconds per step, kept apart so record files stay reproducible.
void write_timing(const std::filesystem::path& csv, const RunResult& run);
void write_run_summary(const std::filesystem::path& json, const RunResult& run, const std::string& study);

void write_monte_carlo(const std::filesystem::path& csv, const std::filesystem::path& json,
                       const MonteCarloResult& result, const MonteCarloConfig& config);

void write_theory_report(const std::filesystem::path& json, const Prop1Report& report);
void write_theory_report(const std::filesystem::path& json, const Prop2Report& report);
void write_theory_report(const std::filesystem::path& json, const Prop3Report& report);

// ---------------------------------------------------------------------------
// Generic numeric tables (plot input)

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    /// Column index by name, or -1.
    int column(const std::string& name) const;
    std::vector<double> values(const std::string& name) const;  // throws UsageError when missing
    bool has(const std::string& name) const { return column(name) >= 0; }
};

CsvTable read_csv(const std::filesystem::path& path);

/// printf-style %.*g formatting with a fixed precision, "nan"/"inf" spelled out.
std::string format_number(double value, int precision = 10);

}  // namespace rbstein
