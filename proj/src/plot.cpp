#include "rbstein/plot.hpp"

#include "rbstein/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace rbstein {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 820.0;
constexpr double kPanelHeight = 230.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kGap = 60.0;

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v) {
    if (std::abs(v) < 1e-12) v = 0.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v, bool log) {
        if (!std::isfinite(v) || (log && v <= 0.0)) return;
        const double t = log ? std::log10(v) : v;
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    void finish() {
        if (!std::isfinite(lo)) {
            lo = 0.0;
            hi = 1.0;
        }
        if (hi - lo < 1e-12) {
            const double pad = std::max(std::abs(lo) * 0.1, 0.5);
            lo -= pad;
            hi += pad;
        } else {
            const double pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
    }
};

double nice_step(double span) {
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double f = raw / mag;
    const double nice = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
    return nice * mag;
}

/// Maps data to pixels inside one plotting rectangle.
struct Frame {
    double x0, y0, w, h;
    Range xr, yr;
    bool log_y = false;

    double px(double x) const { return x0 + (x - xr.lo) / (xr.hi - xr.lo) * w; }
    double py(double y) const {
        const double t = log_y ? std::log10(std::max(y, 1e-300)) : y;
        const double clamped = std::clamp(t, yr.lo, yr.hi);
        return y0 + h - (clamped - yr.lo) / (yr.hi - yr.lo) * h;
    }
};

void axes(std::ostringstream& out, const Frame& f, const std::string& title, const std::string& xlabel,
          const std::string& ylabel, bool draw_x_ticks = true) {
    out << "<rect x=\"" << fixed(f.x0) << "\" y=\"" << fixed(f.y0) << "\" width=\"" << fixed(f.w) << "\" height=\""
        << fixed(f.h) << "\" fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fixed(f.x0 + f.w / 2) << "\" y=\"" << fixed(f.y0 - 8)
        << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(title) << "</text>\n";
    const double ystep = nice_step(f.yr.hi - f.yr.lo);
    for (double t = std::ceil(f.yr.lo / ystep) * ystep; t <= f.yr.hi + 1e-12; t += ystep) {
        const double y = f.y0 + f.h - (t - f.yr.lo) / (f.yr.hi - f.yr.lo) * f.h;
        out << "<line x1=\"" << fixed(f.x0) << "\" y1=\"" << fixed(y) << "\" x2=\"" << fixed(f.x0 + f.w) << "\" y2=\""
            << fixed(y) << "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
        const std::string label = f.log_y ? "1e" + tick_label(t) : tick_label(t);
        out << "<text x=\"" << fixed(f.x0 - 6) << "\" y=\"" << fixed(y + 4)
            << "\" text-anchor=\"end\" font-size=\"10\">" << label << "</text>\n";
    }
    if (draw_x_ticks) {
        const double xstep = nice_step(f.xr.hi - f.xr.lo);
        for (double t = std::ceil(f.xr.lo / xstep) * xstep; t <= f.xr.hi + 1e-12; t += xstep) {
            const double x = f.px(t);
            out << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(f.y0 + f.h + 14)
                << "\" text-anchor=\"middle\" font-size=\"10\">" << tick_label(t) << "</text>\n";
        }
    }
    out << "<text x=\"" << fixed(f.x0 + f.w / 2) << "\" y=\"" << fixed(f.y0 + f.h + 30)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(xlabel) << "</text>\n";
    out << "<text transform=\"translate(" << fixed(f.x0 - 48) << "," << fixed(f.y0 + f.h / 2)
        << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"11\">" << escape(ylabel) << "</text>\n";
}

std::string header(double height, const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(kWidth) << "\" height=\"" << fixed(height)
        << "\" viewBox=\"0 0 " << fixed(kWidth) << " " << fixed(height) << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << fixed(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
        << "</text>\n";
    return out.str();
}

void draw_panel(std::ostringstream& out, const Panel& panel, double top) {
    Frame f{kLeft, top, kWidth - kLeft - kRight, kPanelHeight - kGap, {}, {}, panel.log_y};
    for (const auto& s : panel.series) {
        for (const double x : s.x) f.xr.add(x, false);
        for (const auto* v : {&s.y, &s.lower, &s.upper}) {
            for (const double y : *v) f.yr.add(y, panel.log_y);
        }
    }
    f.xr.finish();
    f.yr.finish();
    axes(out, f, panel.title, panel.xlabel, panel.ylabel);

    for (const auto& s : panel.series) {
        if (s.lower.size() != s.x.size() || s.upper.size() != s.x.size() || s.x.empty()) continue;
        out << "<polygon fill=\"" << s.color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) out << fixed(f.px(s.x[i])) << ',' << fixed(f.py(s.upper[i])) << ' ';
        for (std::size_t i = s.x.size(); i-- > 0;) out << fixed(f.px(s.x[i])) << ',' << fixed(f.py(s.lower[i])) << ' ';
        out << "\"/>\n";
    }
    double legend_y = top + 10;
    for (const auto& s : panel.series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.4\"";
        if (s.dotted) out << " stroke-dasharray=\"3,3\"";
        out << " points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            out << fixed(f.px(s.x[i])) << ',' << fixed(f.py(s.y[i])) << ' ';
        }
        out << "\"/>\n";
        const double lx = f.x0 + f.w + 12;
        out << "<line x1=\"" << fixed(lx) << "\" y1=\"" << fixed(legend_y) << "\" x2=\"" << fixed(lx + 20) << "\" y2=\""
            << fixed(legend_y) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\""
            << (s.dotted ? " stroke-dasharray=\"3,3\"" : "") << "/>\n";
        out << "<text x=\"" << fixed(lx + 26) << "\" y=\"" << fixed(legend_y + 4) << "\" font-size=\"11\">"
            << escape(s.label) << "</text>\n";
        legend_y += 16;
    }
}

std::string color_for(const std::string& label, std::size_t index) {
    static const std::map<std::string, std::string> known{
        {"rbfsgd", "#2ca02c"}, {"rbsgd", "#1f77b4"}, {"rbpf", "#d62728"}, {"ekf", "#ff7f0e"}};
    for (const auto& [name, color] : known) {
        if (label == name) return color;
    }
    static const char* cycle[] = {"#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"};
    return cycle[index % 5];
}

Series band_series(const CsvTable& t, const std::string& label, const std::string& color, const std::string& mean,
                   const std::string& std_col) {
    Series s;
    s.label = label;
    s.color = color;
    s.x = t.values("time");
    s.y = t.values(mean);
    const auto sd = t.values(std_col);
    for (std::size_t i = 0; i < s.y.size(); ++i) {
        s.lower.push_back(s.y[i] - 1.96 * sd[i]);
        s.upper.push_back(s.y[i] + 1.96 * sd[i]);
    }
    return s;
}

Series truth_series(const CsvTable& t, const std::string& column) {
    Series s;
    s.label = "true";
    s.color = "#000000";
    s.dotted = true;
    s.x = t.values("time");
    s.y = t.values(column);
    return s;
}

void require_rows(const std::vector<LabeledTable>& records) {
    if (records.empty()) throw UsageError("no records to plot");
    for (const auto& [label, t] : records) {
        if (t.rows.empty()) throw UsageError("record '" + label + "' is empty");
        if (!t.has("time")) throw UsageError("record '" + label + "' has no time column");
    }
}

}  // namespace

std::string render_panels(const std::string& title, const std::vector<Panel>& panels) {
    const double height = kTop + kPanelHeight * static_cast<double>(panels.size()) + 10.0;
    std::ostringstream out;
    out << header(height, title);
    for (std::size_t p = 0; p < panels.size(); ++p) draw_panel(out, panels[p], kTop + 20 + kPanelHeight * p);
    out << "</svg>\n";
    return out.str();
}

std::string render_boxplots(const std::string& title, const std::vector<BoxStats>& boxes) {
    if (boxes.empty()) throw UsageError("no boxes to plot");
    const double height = kTop + kPanelHeight + 40.0;
    std::ostringstream out;
    out << header(height, title);
    const double panel_w = (kWidth - 2 * kLeft - 30.0) / 2.0;
    for (int side = 0; side < 2; ++side) {
        const bool log = side == 0;
        Frame f{kLeft + side * (panel_w + kLeft + 30.0), kTop + 20, panel_w, kPanelHeight - kGap + 20, {}, {}, log};
        f.xr.lo = 0.0;
        f.xr.hi = static_cast<double>(boxes.size());
        for (const auto& b : boxes) {
            for (const double v : {b.q.min, b.q.q1, b.q.median, b.q.q3, b.q.max}) f.yr.add(v, log);
        }
        f.yr.finish();
        axes(out, f, log ? "CRPS (log scale)" : "CRPS", "filter", "time-averaged CRPS", false);
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            const auto& q = boxes[i].q;
            const std::string color = color_for(boxes[i].label, i);
            const double cx = f.px(static_cast<double>(i) + 0.5);
            const double half = 0.25 * f.w / static_cast<double>(boxes.size());
            out << "<line x1=\"" << fixed(cx) << "\" y1=\"" << fixed(f.py(q.min)) << "\" x2=\"" << fixed(cx)
                << "\" y2=\"" << fixed(f.py(q.max)) << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
            for (const double w : {q.min, q.max}) {
                out << "<line x1=\"" << fixed(cx - half / 2) << "\" y1=\"" << fixed(f.py(w)) << "\" x2=\""
                    << fixed(cx + half / 2) << "\" y2=\"" << fixed(f.py(w)) << "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
            }
            const double top = f.py(q.q3);
            out << "<rect x=\"" << fixed(cx - half) << "\" y=\"" << fixed(top) << "\" width=\"" << fixed(2 * half)
                << "\" height=\"" << fixed(std::max(f.py(q.q1) - top, 0.5)) << "\" fill=\"" << color
                << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n";
            out << "<line x1=\"" << fixed(cx - half) << "\" y1=\"" << fixed(f.py(q.median)) << "\" x2=\""
                << fixed(cx + half) << "\" y2=\"" << fixed(f.py(q.median)) << "\" stroke=\"#000\" stroke-width=\"2\"/>\n";
            out << "<text x=\"" << fixed(cx) << "\" y=\"" << fixed(f.y0 + f.h + 14)
                << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(boxes[i].label) << "</text>\n";
        }
    }
    out << "</svg>\n";
    return out.str();
}

std::string state_figure(const std::vector<LabeledTable>& records) {
    require_rows(records);
    std::vector<Panel> panels;
    const CsvTable& first = records.front().second;
    for (int c = 1; first.has("x" + std::to_string(c) + "_true"); ++c) {
        const std::string x = "x" + std::to_string(c);
        Panel p;
        p.title = "state " + x;
        p.ylabel = x;
        p.series.push_back(truth_series(first, x + "_true"));
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto& [label, t] = records[r];
            p.series.push_back(band_series(t, label, color_for(label, r), x + "_mean", x + "_std"));
        }
        panels.push_back(std::move(p));
    }
    return render_panels("State estimates (mean and 95% band)", panels);
}

std::string parameter_figure(const std::vector<LabeledTable>& records) {
    require_rows(records);
    const CsvTable& first = records.front().second;
    std::vector<Panel> panels;
    for (const auto& col : first.header) {
        const auto pos = col.rfind("_mean");
        if (pos == std::string::npos || pos + 5 != col.size() || col.rfind('x', 0) == 0) continue;
        const std::string name = col.substr(0, pos);
        if (!first.has(name + "_std")) continue;
        Panel p;
        p.title = "parameter " + name;
        p.ylabel = name;
        if (first.has(name + "_true")) p.series.push_back(truth_series(first, name + "_true"));
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto& [label, t] = records[r];
            if (!t.has(col)) continue;
            p.series.push_back(band_series(t, label, color_for(label, r), col, name + "_std"));
        }
        panels.push_back(std::move(p));
    }
    if (panels.empty()) throw UsageError("records carry no parameter columns");
    return render_panels("Parameter estimates (mean and 95% band)", panels);
}

std::string nn_figure(const CsvTable& record) {
    if (record.rows.empty()) throw UsageError("record is empty");
    if (!record.has("f_nl") || !record.has("f_hat_mean")) throw UsageError("record has no f_nl columns");
    Panel f;
    f.title = "unknown nonlinearity along the true trajectory";
    f.ylabel = "f_nl";
    f.series.push_back(truth_series(record, "f_nl"));
    f.series.push_back(band_series(record, "MLP", color_for("rbfsgd", 0), "f_hat_mean", "f_hat_std"));
    Panel r;
    r.title = "measurement noise variance";
    r.ylabel = "R";
    r.log_y = true;
    if (record.has("R_true")) r.series.push_back(truth_series(record, "R_true"));
    Series est = band_series(record, "estimate", color_for("rbfsgd", 0), "R_mean", "R_std");
    for (double& v : est.lower) v = std::max(v, 1e-6);
    r.series.push_back(std::move(est));
    return render_panels("Online MLP training", {f, r});
}

std::string boxplot_figure(const fs::path& summary_json) {
    std::ifstream in(summary_json);
    if (!in) throw UsageError("cannot open '" + summary_json.string() + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("malformed summary: ") + e.what());
    }
    if (!doc.contains("filters") || !doc["filters"].is_array() || doc["filters"].empty()) {
        throw UsageError("'" + summary_json.string() + "' is not a Monte Carlo summary");
    }
    auto value = [](const nlohmann::json& q, const char* key) {
        return q.at(key).is_null() ? std::numeric_limits<double>::quiet_NaN() : q.at(key).get<double>();
    };
    std::vector<BoxStats> boxes;
    for (const auto& f : doc["filters"]) {
        const auto& q = f.at("quartiles");
        boxes.push_back({f.at("filter").get<std::string>(),
                         {value(q, "min"), value(q, "q1"), value(q, "median"), value(q, "q3"), value(q, "max")}});
    }
    return render_boxplots("Monte Carlo CRPS", boxes);
}

std::vector<fs::path> plot_files(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
    if (inputs.empty()) throw UsageError("plot needs at least one input file");
    std::vector<LabeledTable> records;
    std::vector<fs::path> summaries;
    for (const auto& in : inputs) {
        if (in.extension() == ".json") {
            summaries.push_back(in);
            continue;
        }
        // {study}_{filter}_{seed}.csv: label curves by the filter token.
        const std::string stem = in.stem().string();
        const auto a = stem.find('_');
        const auto b = stem.rfind('_');
        const std::string label = a != std::string::npos && b > a ? stem.substr(a + 1, b - a - 1) : stem;
        records.emplace_back(label, read_csv(in));
    }
    std::vector<std::pair<fs::path, std::string>> figures;
    const std::string base = inputs.front().stem().string();
    if (!records.empty()) {
        figures.emplace_back(out_dir / (base + "_states.svg"), state_figure(records));
        bool has_params = false;
        for (const auto& col : records.front().second.header) {
            if (col.size() > 5 && col.rfind("_mean") == col.size() - 5 && col[0] != 'x') has_params = true;
        }
        if (has_params) figures.emplace_back(out_dir / (base + "_parameters.svg"), parameter_figure(records));
        std::size_t r = 0;
        for (const auto& in : inputs) {
            if (in.extension() == ".json") continue;
            const CsvTable& t = records[r++].second;
            if (t.has("f_nl")) figures.emplace_back(out_dir / (in.stem().string() + "_nn.svg"), nn_figure(t));
        }
    }
    for (const auto& s : summaries) figures.emplace_back(out_dir / (s.stem().string() + "_boxplot.svg"), boxplot_figure(s));

    std::vector<fs::path> written;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    for (const auto& [path, svg] : figures) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
        out << svg;
        written.push_back(path);
    }
    return written;
}

}  // namespace rbstein
