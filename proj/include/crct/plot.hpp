#pragma once

#include <string>
#include <vector>

#include "crct/chart.hpp"
#include "crct/eval.hpp"

namespace crct {

void write_tick_curve_svg(const std::string& path, const std::vector<double>& fractions,
                          const std::vector<double>& accuracy);
void write_er_histogram_svg(const std::string& path, const std::vector<std::string>& labels,
                            const std::vector<int>& counts);
void write_chart_svg(const std::string& path, const ChartSpec& spec, const ElementSet& elements);
// chart rendering plus one heat box per attributed element
void write_attribution_svg(const std::string& path, const ChartSpec& spec,
                           const ElementSet& elements,
                           const std::vector<ElementSaliency>& saliencies);

}  // namespace crct
