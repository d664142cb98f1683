#pragma once

#include "rbstein/experiments.hpp"
#include "rbstein/io.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace rbstein {

/// One line, optionally with a shaded band between `lower` and `upper`.
struct Series {
    std::string label;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lower;
    std::vector<double> upper;
    bool dotted = false;
};

struct Panel {
    std::string title;
    std::string ylabel;
    std::string xlabel = "time";
    bool log_y = false;
    std::vector<Series> series;
};

struct BoxStats {
    std::string label;
    QuartileSummary q;
};

/// Panels stacked vertically in one figure.
std::string render_panels(const std::string& title, const std::vector<Panel>& panels);
/// Side-by-side boxplots: log-scaled left panel, linear right panel.
std::string render_boxplots(const std::string& title, const std::vector<BoxStats>& boxes);

/// Named run-record tables (label, table) overlaid on shared axes.
using LabeledTable = std::pair<std::string, CsvTable>;

/// Truth (dotted) and mean +- 1.96 std bands per state coordinate.
std::string state_figure(const std::vector<LabeledTable>& records);
/// Truth and estimate bands for every tracked parameter column.
std::string parameter_figure(const std::vector<LabeledTable>& records);
/// f_nl along the truth against the MLP prediction, plus the R estimate.
std::string nn_figure(const CsvTable& record);
/// Reads the quartiles straight from a Monte Carlo summary file.
std::string boxplot_figure(const std::filesystem::path& summary_json);

/// Writes figures for the given inputs into `out_dir`; returns the paths
/// written. Record CSVs produce state and parameter figures (plus the NN
/// figure when f_nl columns exist); *.json Monte Carlo summaries produce a
/// boxplot. Throws UsageError for empty or unrecognized inputs.
std::vector<std::filesystem::path> plot_files(const std::vector<std::filesystem::path>& inputs,
                                              const std::filesystem::path& out_dir);

}  // namespace rbstein
