#pragma once

// Dependency-free SVG line and bar charts for curves and metric tables.

#include <filesystem>
#include <string>
#include <vector>

#include "remix/eval.hpp"

namespace remix {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

void write_line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path);

// Grouped bars of id_sim, img_sim and instr_sim per variant; missing variants are drawn as gaps.
void write_metrics_plot(const MetricsTable& table, const std::string& title, const std::filesystem::path& path);

}  // namespace remix
