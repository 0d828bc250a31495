#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace toad::svg {

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
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

std::string hue(int index, int count) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "hsl(%d,70%%,45%%)", count > 0 ? index * 360 / count : 0);
    return buf;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string scatter(const std::vector<Point>& points, const std::string& title, double jitter) {
    const double width = 720, height = 560, margin = 50, legend = 160;
    double x0 = std::numeric_limits<double>::max(), x1 = -x0, y0 = x0, y1 = -x0;
    std::map<std::string, int> labels;
    for (const auto& p : points) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
        labels.emplace(p.label, 0);
    }
    int next = 0;
    for (auto& [label, index] : labels) index = next++;
    if (points.empty()) x0 = y0 = 0, x1 = y1 = 1;
    const double dx = std::max(x1 - x0, 1e-12), dy = std::max(y1 - y0, 1e-12);

    std::mt19937_64 rng(0);
    std::normal_distribution<double> noise(0.0, jitter);
    const double plot_w = width - 2 * margin - legend, plot_h = height - 2 * margin;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << margin << "\" y=\"30\" font-family=\"sans-serif\" font-size=\"16\">" << escape(title) << "</text>\n";
    out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot_w << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (const auto& p : points) {
        const double u = (p.x - x0) / dx + noise(rng);
        const double v = (p.y - y0) / dy + noise(rng);
        const double cx = margin + std::clamp(u, 0.0, 1.0) * plot_w;
        const double cy = margin + (1.0 - std::clamp(v, 0.0, 1.0)) * plot_h;
        const auto color = hue(labels[p.label], static_cast<int>(labels.size()));
        out << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"3\" ";
        if (p.generated) out << "fill=\"none\" stroke=\"" << color << "\"";
        else out << "fill=\"" << color << "\" fill-opacity=\"0.6\"";
        out << "/>\n";
    }
    double ly = margin + 10;
    for (const auto& [label, index] : labels) {
        const double lx = width - legend - margin / 2 + 10;
        out << "<circle cx=\"" << lx << "\" cy=\"" << ly << "\" r=\"5\" fill=\"" << hue(index, static_cast<int>(labels.size()))
            << "\"/>\n";
        out << "<text x=\"" << lx + 12 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
            << escape(label) << "</text>\n";
        ly += 18;
    }
    out << "</svg>\n";
    return out.str();
}

std::string heatmap(const std::vector<std::vector<double>>& values, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& title) {
    const double cell = 36, left = 110, top = 110;
    const std::size_t rows = values.size();
    const std::size_t cols = rows ? values[0].size() : 0;
    double lo = std::numeric_limits<double>::max(), hi = -lo;
    for (const auto& row : values)
        for (double v : row) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = std::max(hi - lo, 1e-12);

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cell * cols + 20 << "\" height=\""
        << top + cell * rows + 20 << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"10\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << escape(title) << "</text>\n";
    for (std::size_t j = 0; j < cols; ++j) {
        const double x = left + cell * j + cell / 2;
        out << "<text x=\"" << x << "\" y=\"" << top - 8 << "\" font-family=\"sans-serif\" font-size=\"11\" "
            << "transform=\"rotate(-60 " << x << " " << top - 8 << ")\">" << escape(j < col_labels.size() ? col_labels[j] : "")
            << "</text>\n";
    }
    for (std::size_t i = 0; i < rows; ++i) {
        const double y = top + cell * i;
        out << "<text x=\"" << left - 6 << "\" y=\"" << y + cell / 2 + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">"
            << escape(i < row_labels.size() ? row_labels[i] : "") << "</text>\n";
        for (std::size_t j = 0; j < cols; ++j) {
            const double t = (values[i][j] - lo) / span;
            const int shade = static_cast<int>(std::lround(255 * (1.0 - t)));
            out << "<rect x=\"" << left + cell * j << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
                << "\" fill=\"rgb(" << shade << "," << shade << ",255)\"><title>" << fmt(values[i][j]) << "</title></rect>\n";
            out << "<text x=\"" << left + cell * j + cell / 2 << "\" y=\"" << y + cell / 2 + 4
                << "\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\" fill=\""
                << (t > 0.6 ? "white" : "black") << "\">" << fmt(values[i][j]) << "</text>\n";
        }
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace toad::svg
