#include "plot.hpp"

#include "eos/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

namespace eos::cli {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 80, kRight = 150, kTop = 40, kBottom = 60;

// Perceptually ordered, dark to light.
constexpr const char* kPalette[] = {"#440154", "#414487", "#2a788e", "#22a884", "#7ad151", "#c2a01b", "#e6550d", "#a50f15"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '"') out += "&quot;";
        else out += c;
    }
    return out;
}

std::string available(const experiment::MetricsTable& t) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? ", " : "") + t.columns[i];
    return out;
}

}  // namespace

std::string size_color(double size, const std::vector<double>& all_sizes) {
    std::vector<double> distinct(all_sizes.begin(), all_sizes.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const auto it = std::lower_bound(distinct.begin(), distinct.end(), size);
    const std::size_t rank = std::size_t(it - distinct.begin());
    constexpr std::size_t n = std::size(kPalette);
    if (distinct.size() <= 1) return kPalette[0];
    // Spread ranks over the palette so few sizes still get contrasting colors.
    const std::size_t idx = rank * (n - 1) / (distinct.size() - 1);
    return kPalette[std::min(idx, n - 1)];
}

std::string render_svg(const std::vector<PlotSeries>& series, const PlotSpec& spec) {
    struct Line {
        std::vector<std::pair<double, double>> pts;
        double size;
    };
    std::vector<Line> lines;
    std::vector<double> sizes;
    for (const auto& s : series) {
        sizes.push_back(s.size);
        if (s.table.rows.empty()) {
            lines.push_back({{}, s.size});
            continue;
        }
        const auto xc = s.table.column(spec.x_column);
        const auto yc = s.table.column(spec.y_column);
        if (!xc) throw ArgumentError("unknown column '" + spec.x_column + "'; available: " + available(s.table));
        if (!yc) throw ArgumentError("unknown column '" + spec.y_column + "'; available: " + available(s.table));
        Line line{{}, s.size};
        for (const auto& row : s.table.rows) {
            const double x = row[*xc], y = row[*yc];
            if (!std::isfinite(x) || !std::isfinite(y) || (spec.log_y && !(y > 0.0))) continue;
            line.pts.emplace_back(x, spec.log_y ? std::log10(y) : y);
        }
        lines.push_back(std::move(line));
    }

    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& l : lines)
        for (const auto& [x, y] : l.pts) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (!std::isfinite(x0)) {
        x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    }
    if (x1 == x0) x1 = x0 + 1.0;
    if (y1 == y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
    auto sy = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const std::string title = spec.title.empty() ? spec.y_column : spec.title;
    svg << "<text x=\"" << coord(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
        << escape(title) << "</text>\n";
    svg << "<rect x=\"" << coord(kLeft) << "\" y=\"" << coord(kTop) << "\" width=\"" << coord(pw) << "\" height=\""
        << coord(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
        svg << "<line x1=\"" << coord(sx(fx)) << "\" y1=\"" << coord(kTop + ph) << "\" x2=\"" << coord(sx(fx))
            << "\" y2=\"" << coord(kTop + ph + 5) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << coord(sx(fx)) << "\" y=\"" << coord(kTop + ph + 20) << "\" text-anchor=\"middle\">"
            << num(fx) << "</text>\n";
        svg << "<line x1=\"" << coord(kLeft - 5) << "\" y1=\"" << coord(sy(fy)) << "\" x2=\"" << coord(kLeft)
            << "\" y2=\"" << coord(sy(fy)) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << coord(kLeft - 8) << "\" y=\"" << coord(sy(fy) + 4) << "\" text-anchor=\"end\">"
            << (spec.log_y ? "1e" + num(fy) : num(fy)) << "</text>\n";
    }
    svg << "<text x=\"" << coord(kLeft + pw / 2) << "\" y=\"" << coord(kHeight - 15) << "\" text-anchor=\"middle\">"
        << escape(spec.x_column) << "</text>\n";
    svg << "<text transform=\"translate(18 " << coord(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
        << escape(spec.y_column) << (spec.log_y ? " (log10)" : "") << "</text>\n";

    for (const auto& l : lines) {
        if (l.pts.empty()) continue;
        svg << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << size_color(l.size, sizes) << "\" points=\"";
        for (std::size_t i = 0; i < l.pts.size(); ++i)
            svg << (i ? " " : "") << coord(sx(l.pts[i].first)) << ',' << coord(sy(l.pts[i].second));
        svg << "\"/>\n";
    }

    std::set<double> legend(sizes.begin(), sizes.end());
    double ly = kTop + 10;
    for (double s : legend) {
        svg << "<line x1=\"" << coord(kLeft + pw + 15) << "\" y1=\"" << coord(ly) << "\" x2=\"" << coord(kLeft + pw + 40)
            << "\" y2=\"" << coord(ly) << "\" stroke-width=\"3\" stroke=\"" << size_color(s, sizes) << "\"/>\n";
        svg << "<text x=\"" << coord(kLeft + pw + 46) << "\" y=\"" << coord(ly + 4) << "\">D = " << num(s) << "</text>\n";
        ly += 18;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace eos::cli
