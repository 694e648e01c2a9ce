#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mbpp/harness/store.hpp"

namespace mbpp::harness {

enum class ReportFormat { markdown, csv };

inline ReportFormat format_from_string(const std::string& s) {
    if (s == "md" || s == "markdown") return ReportFormat::markdown;
    if (s == "csv") return ReportFormat::csv;
    throw ValidationError("unknown report format '" + s + "' (expected md or csv)");
}

namespace report_detail {

inline bool percent_metric(const std::string& name) {
    return name == "accuracy" || name == "macro_f1" || name == "auprc";
}

/// Paper-style cell: `mean (std)`, two-decimal percentages for
/// accuracy-like metrics, four decimals for error metrics.
inline std::string format_cell(const std::string& metric, double mean, double std) {
    char buf[64];
    if (percent_metric(metric)) {
        std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", mean * 100.0, std * 100.0);
    } else {
        std::snprintf(buf, sizeof(buf), "%.4f (%.4f)", mean, std);
    }
    return buf;
}

inline std::string full_precision(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Row {
    std::string dataset;
    std::string architecture;
    std::map<std::string, std::pair<double, double>> metrics;  // name -> (mean, std)
};

/// One row per (dataset, architecture); reruns override earlier records.
inline std::vector<Row> collect_rows(const std::vector<nlohmann::json>& records,
                                     std::vector<std::string>& metric_order) {
    std::vector<Row> rows;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& rec : records) {
        Row row;
        row.dataset = rec.at("dataset").get<std::string>();
        row.architecture = rec.at("architecture").get<std::string>();
        for (const auto& [name, agg] : rec.at("aggregate").items()) {
            row.metrics[name] = {agg.at("mean").get<double>(), agg.at("std").get<double>()};
            if (std::find(metric_order.begin(), metric_order.end(), name) == metric_order.end()) {
                metric_order.push_back(name);
            }
        }
        const auto key = std::make_pair(row.dataset, row.architecture);
        if (auto it = index.find(key); it != index.end()) {
            rows[it->second] = std::move(row);
        } else {
            index[key] = rows.size();
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace report_detail

/// Renders the result store as a table. Markdown and CSV carry the same
/// formatted cells; CSV adds full-precision mean/std columns so the stored
/// aggregates can be reconstructed from the file.
inline std::string render_report(const std::vector<nlohmann::json>& records, ReportFormat format) {
    using namespace report_detail;
    std::vector<std::string> metric_order;
    const std::vector<Row> rows = collect_rows(records, metric_order);

    std::ostringstream out;
    if (format == ReportFormat::markdown) {
        out << "| dataset | architecture |";
        for (const auto& m : metric_order) out << ' ' << m << " |";
        out << '\n';
        out << "|---|---|";
        for (std::size_t i = 0; i < metric_order.size(); ++i) out << "---|";
        out << '\n';
        for (const auto& row : rows) {
            out << "| " << row.dataset << " | " << row.architecture << " |";
            for (const auto& m : metric_order) {
                const auto it = row.metrics.find(m);
                if (it == row.metrics.end()) {
                    out << " - |";
                } else {
                    out << ' ' << format_cell(m, it->second.first, it->second.second) << " |";
                }
            }
            out << '\n';
        }
    } else {
        out << "dataset,architecture";
        for (const auto& m : metric_order) out << ',' << m << ',' << m << "_mean," << m << "_std";
        out << '\n';
        for (const auto& row : rows) {
            out << row.dataset << ',' << row.architecture;
            for (const auto& m : metric_order) {
                const auto it = row.metrics.find(m);
                if (it == row.metrics.end()) {
                    out << ",,,";
                } else {
                    out << ",\"" << format_cell(m, it->second.first, it->second.second) << "\","
                        << full_precision(it->second.first) << ',' << full_precision(it->second.second);
                }
            }
            out << '\n';
        }
    }
    return out.str();
}

inline std::string cmd_report(const std::string& store_path, ReportFormat format) {
    return render_report(read_records(store_path), format);
}

/// Accuracy-vs-rho table for a redundancy sweep, one row per rho with a
/// delta-to-concat column per fusion architecture.
inline std::string render_sweep_table(const std::vector<nlohmann::json>& records) {
    // organize: rho -> architecture -> accuracy mean
    std::map<double, std::map<std::string, double>> grid;
    std::vector<std::string> archs;
    for (const auto& rec : records) {
        const double rho = rec.at("config").at("dataset").at("generator").at("redundancy").get<double>();
        const std::string arch = rec.at("architecture").get<std::string>();
        grid[rho][arch] = rec.at("aggregate").at("accuracy").at("mean").get<double>();
        if (std::find(archs.begin(), archs.end(), arch) == archs.end()) archs.push_back(arch);
    }

    std::ostringstream out;
    out << "| rho |";
    for (const auto& a : archs) out << ' ' << a << " |";
    for (const auto& a : archs) {
        if (a != "concat") out << " d(" << a << "-concat) |";
    }
    out << '\n' << "|---|";
    for (std::size_t i = 0; i < archs.size(); ++i) out << "---|";
    for (const auto& a : archs) {
        if (a != "concat") out << "---|";
    }
    out << '\n';

    char buf[64];
    for (const auto& [rho, row] : grid) {
        std::snprintf(buf, sizeof(buf), "| %.2f |", rho);
        out << buf;
        for (const auto& a : archs) {
            std::snprintf(buf, sizeof(buf), " %.2f |", row.at(a) * 100.0);
            out << buf;
        }
        for (const auto& a : archs) {
            if (a == "concat") continue;
            std::snprintf(buf, sizeof(buf), " %+.2f |", (row.at(a) - row.at("concat")) * 100.0);
            out << buf;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace mbpp::harness
