#include "voxelsim/svg_plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "voxelsim/volume.hpp"

namespace voxelsim {
namespace {

const char* kColors[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                         "#66ccee", "#aa3377", "#bbbbbb"};

struct BoxStats {
    double lo, q1, med, q3, hi;
};

BoxStats box_stats(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto q = [&](double f) {
        const double pos = f * double(v.size() - 1);
        const size_t i = size_t(pos);
        if (i + 1 >= v.size()) return v.back();
        return v[i] + (pos - double(i)) * (v[i + 1] - v[i]);
    };
    return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else if (c == '&')
            out += "&amp;";
        else
            out += c;
    }
    return out;
}

}  // namespace

void write_boxplot_svg(const std::string& path, const std::vector<std::string>& group_names,
                       const std::vector<BoxSeries>& series, const std::string& title) {
    if (series.empty() || group_names.empty()) throw DataError("boxplot: nothing to plot");
    const int W = 160 + int(group_names.size()) * (40 * int(series.size()) + 30);
    const int H = 420;
    const double top = 50, bottom = H - 60, left = 70;
    auto ymap = [&](double v) {
        return bottom - std::clamp(v, 0.0, 1.0) * (bottom - top);
    };

    std::ofstream out(path);
    if (!out) throw DataError("cannot write svg: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16' "
        << "font-family='sans-serif'>" << esc(title) << "</text>\n";
    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0, y = ymap(v);
        out << "<line x1='" << left << "' y1='" << y << "' x2='" << W - 20 << "' y2='" << y
            << "' stroke='#eeeeee'/>\n";
        out << "<text x='" << left - 8 << "' y='" << y + 4
            << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << v << "</text>\n";
    }
    double x = left + 15;
    for (size_t g = 0; g < group_names.size(); ++g) {
        const double gx0 = x;
        for (size_t m = 0; m < series.size(); ++m) {
            if (g >= series[m].groups.size() || series[m].groups[g].empty()) {
                x += 40;
                continue;
            }
            const BoxStats b = box_stats(series[m].groups[g]);
            const char* col = kColors[m % 7];
            const double cx = x + 14;
            out << "<line x1='" << cx << "' y1='" << ymap(b.lo) << "' x2='" << cx << "' y2='"
                << ymap(b.hi) << "' stroke='" << col << "'/>\n";
            out << "<rect x='" << x << "' y='" << ymap(b.q3) << "' width='28' height='"
                << std::max(1.0, ymap(b.q1) - ymap(b.q3)) << "' fill='" << col
                << "' fill-opacity='0.35' stroke='" << col << "'/>\n";
            out << "<line x1='" << x << "' y1='" << ymap(b.med) << "' x2='" << x + 28 << "' y2='"
                << ymap(b.med) << "' stroke='" << col << "' stroke-width='2'/>\n";
            x += 40;
        }
        out << "<text x='" << (gx0 + x - 40 + 28) / 2 << "' y='" << bottom + 20
            << "' text-anchor='middle' font-size='12' font-family='sans-serif'>"
            << esc(group_names[g]) << "</text>\n";
        x += 30;
    }
    for (size_t m = 0; m < series.size(); ++m) {
        const double ly = 40 + 18 * double(m);
        out << "<rect x='" << W - 160 << "' y='" << ly - 10
            << "' width='12' height='12' fill='" << kColors[m % 7] << "'/>\n";
        out << "<text x='" << W - 142 << "' y='" << ly
            << "' font-size='12' font-family='sans-serif'>" << esc(series[m].label)
            << "</text>\n";
    }
    out << "</svg>\n";
}

void write_curve_svg(const std::string& path, const std::string& x_label,
                     const std::string& y_label, const std::vector<CurveSeries>& series,
                     const std::string& title) {
    if (series.empty()) throw DataError("curve plot: nothing to plot");
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [px, py] : s.points) {
            xmin = std::min(xmin, px);
            xmax = std::max(xmax, px);
            ymin = std::min(ymin, py);
            ymax = std::max(ymax, py);
        }
    if (xmin > xmax) throw DataError("curve plot: empty series");
    if (xmax == xmin) xmax = xmin + 1;
    const double pad = 0.05 * (ymax - ymin + 1e-9);
    ymin -= pad;
    ymax += pad;

    const int W = 560, H = 400;
    const double left = 70, right = W - 30, top = 50, bottom = H - 60;
    auto X = [&](double v) { return left + (v - xmin) / (xmax - xmin) * (right - left); };
    auto Y = [&](double v) { return bottom - (v - ymin) / (ymax - ymin) * (bottom - top); };

    std::ofstream out(path);
    if (!out) throw DataError("cannot write svg: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16' "
        << "font-family='sans-serif'>" << esc(title) << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double fy = ymin + (ymax - ymin) * i / 5.0;
        out << "<line x1='" << left << "' y1='" << Y(fy) << "' x2='" << right << "' y2='" << Y(fy)
            << "' stroke='#eeeeee'/>\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", fy);
        out << "<text x='" << left - 8 << "' y='" << Y(fy) + 4
            << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << buf
            << "</text>\n";
    }
    out << "<text x='" << (left + right) / 2 << "' y='" << H - 16
        << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << esc(x_label)
        << "</text>\n";
    out << "<text x='16' y='" << (top + bottom) / 2
        << "' font-size='12' font-family='sans-serif' transform='rotate(-90 16 "
        << (top + bottom) / 2 << ")' text-anchor='middle'>" << esc(y_label) << "</text>\n";
    for (size_t m = 0; m < series.size(); ++m) {
        const char* col = kColors[m % 7];
        auto pts = series[m].points;
        std::sort(pts.begin(), pts.end());
        out << "<polyline fill='none' stroke='" << col << "' stroke-width='2' points='";
        for (const auto& [px, py] : pts) out << X(px) << "," << Y(py) << " ";
        out << "'/>\n";
        for (const auto& [px, py] : pts)
            out << "<circle cx='" << X(px) << "' cy='" << Y(py) << "' r='3' fill='" << col
                << "'/>\n";
        const double ly = 40 + 18 * double(m);
        out << "<rect x='" << right - 130 << "' y='" << ly - 10
            << "' width='12' height='12' fill='" << col << "'/>\n";
        out << "<text x='" << right - 112 << "' y='" << ly
            << "' font-size='12' font-family='sans-serif'>" << esc(series[m].label)
            << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace voxelsim
