#pragma once

#include "eos/experiment.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace eos::cli {

// One metrics table plus the dataset size that picks its color.
struct PlotSeries {
    experiment::MetricsTable table;
    double size = 0.0;
    std::string label;
};

struct PlotSpec {
    std::string x_column = "step";
    std::string y_column;
    bool log_y = false;
    std::string title;
};

// Throws ArgumentError naming the available columns when a column is missing
// from any non-empty series.
std::string render_svg(const std::vector<PlotSeries>& series, const PlotSpec& spec);

// Fixed palette; equal sizes share a color.
std::string size_color(double size, const std::vector<double>& all_sizes);

}  // namespace eos::cli
