#ifndef CRCT_CHART_HPP
#define CRCT_CHART_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crct/common.hpp"

namespace crct {

enum class ChartType { vbar, hbar, line, dotline };

enum class ElementClass {
    title,
    x_label,
    y_label,
    x_ticklabel,
    y_ticklabel,
    legend_label,
    legend_marker,
    bar,
    line_segment,
    dot,
    sub_tick,
};

constexpr int kNumElementClasses = 11;

bool is_textual_class(ElementClass c);
const char* to_string(ChartType t);
const char* to_string(ElementClass c);
ChartType chart_type_from_string(const std::string& s);
ElementClass element_class_from_string(const std::string& s);

// Value axis description. For hbar charts this axis is drawn horizontally but
// keeps the same role: it is always the axis that carries numeric values.
struct AxisSpec {
    double min_value = 0.0;
    double max_value = 1.0;
    double major_tick_spacing = 0.25;
    double sub_tick_spacing = 0.125;
    std::vector<std::string> tick_labels;
};

struct Series {
    std::string legend_label;
    Rgb color;
    std::vector<double> values;
};

struct ChartSpec {
    std::int64_t chart_id = 0;
    ChartType chart_type = ChartType::vbar;
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<std::string> x_categories;
    std::vector<Series> series;
    AxisSpec y_axis;
};

// Normalized coordinates in [0,1]^2, y up.
struct BBox {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }
    double area() const { return width() * height(); }
};

struct Element {
    ElementClass element_class = ElementClass::title;
    BBox bbox;
    std::optional<std::string> text;
    std::optional<Rgb> color;
    std::optional<int> series_index;
    std::optional<int> category_index;
};

struct ElementSet {
    std::int64_t chart_id = 0;
    std::vector<Element> elements;
};

struct GenConfig {
    std::vector<std::string> nouns;
    std::vector<std::string> adjectives;
    std::vector<std::string> places;
    std::vector<std::string> series_qualifiers;
    int series_min = 1;
    int series_max = 3;
    int categories_min = 3;
    int categories_max = 6;
    int n_major_min = 4;
    int n_major_max = 8;
    int axis_exp_min = 0;  // major tick spacing mantissa * 10^exp
    int axis_exp_max = 5;
    int sub_ticks_per_major = 2;  // sub_tick_spacing = major / this
    double year_categories_prob = 0.5;
    std::vector<ChartType> chart_types = {ChartType::vbar, ChartType::hbar, ChartType::line,
                                          ChartType::dotline};
};

GenConfig default_gen_config();
void validate(const GenConfig& cfg);

struct LayoutConfig {
    // plotting rectangle inside the unit square
    BBox plot{0.14, 0.12, 0.97, 0.88};
    double tick_label_halfheight = 0.014;
    double sub_tick_size = 0.008;
    double dot_radius = 0.007;
    double bar_group_fill = 0.8;  // fraction of the category slot used by bars
    double char_width = 0.011;    // box width per character of text
};

void validate(const ChartSpec& spec);
void validate(const ChartSpec& spec, const ElementSet& es);

// Deterministic in (seed, cfg). chart_id is set to the seed; callers that
// assemble datasets may renumber afterwards.
ChartSpec synthesize_chart(std::uint64_t seed, const GenConfig& cfg);

ElementSet annotate_elements(const ChartSpec& spec, const LayoutConfig& layout);

// Affine map [min,max] -> [-1,1]. Values beyond the axis range (past a 1e-9
// relative slack) are treated as upstream bugs and rejected.
double normalize_value(double v, const AxisSpec& axis);
double denormalize_value(double r, const AxisSpec& axis);

// Reads the value encoded by a data-carrying element's geometry (bar edge or
// dot center). Throws for classes that do not carry a single value.
double value_from_bbox(const Element& e, ChartType type, const LayoutConfig& layout,
                       const AxisSpec& axis);

// A line segment spans two category values; returns {lower, upper}.
std::pair<double, double> segment_values_from_bbox(const Element& e, ChartType type,
                                                   const LayoutConfig& layout,
                                                   const AxisSpec& axis);

}  // namespace crct

#endif
