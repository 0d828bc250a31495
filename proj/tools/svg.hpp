#pragma once

// Minimal SVG writers for embedding scatter plots and divergence heatmaps.

#include <string>
#include <vector>

namespace toad::svg {

struct Point {
    double x = 0.0;
    double y = 0.0;
    std::string label;
    bool generated = false;  // drawn hollow
};

// Labels get distinct hues; `jitter` is a fraction of the data range applied only to drawing.
std::string scatter(const std::vector<Point>& points, const std::string& title, double jitter = 0.01);

// values[i][j] drawn at row i, column j; darker is larger.
std::string heatmap(const std::vector<std::vector<double>>& values, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& title);

}  // namespace toad::svg
