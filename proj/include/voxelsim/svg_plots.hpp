#pragma once

#include <string>
#include <utility>
#include <vector>

namespace voxelsim {

/// One method's per-group sample sets (e.g. per-organ DSC values per case).
struct BoxSeries {
    std::string label;
    std::vector<std::vector<double>> groups;
};

/// Grouped box plot (median, quartiles, min/max whiskers), one box per method
/// within each group. Values are clamped to [0, 1] for the DSC axis.
void write_boxplot_svg(const std::string& path, const std::vector<std::string>& group_names,
                       const std::vector<BoxSeries>& series, const std::string& title);

struct CurveSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y)
};

void write_curve_svg(const std::string& path, const std::string& x_label,
                     const std::string& y_label, const std::vector<CurveSeries>& series,
                     const std::string& title);

}  // namespace voxelsim
