#include "crct/chart.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace crct {

namespace {

const char* kChartTypeNames[] = {"vbar", "hbar", "line", "dotline"};
const char* kElementClassNames[] = {"title",        "x_label",       "y_label",     "x_ticklabel",
                                    "y_ticklabel",  "legend_label",  "legend_marker", "bar",
                                    "line_segment", "dot",           "sub_tick"};

double lerp(double a, double b, double f) { return a * (1.0 - f) + b * f; }
double inv_lerp(double a, double b, double x) { return (x - a) / (b - a); }

}  // namespace

bool is_textual_class(ElementClass c) {
    switch (c) {
        case ElementClass::title:
        case ElementClass::x_label:
        case ElementClass::y_label:
        case ElementClass::x_ticklabel:
        case ElementClass::y_ticklabel:
        case ElementClass::legend_label:
            return true;
        default:
            return false;
    }
}

const char* to_string(ChartType t) { return kChartTypeNames[static_cast<int>(t)]; }
const char* to_string(ElementClass c) { return kElementClassNames[static_cast<int>(c)]; }

ChartType chart_type_from_string(const std::string& s) {
    for (int i = 0; i < 4; ++i)
        if (s == kChartTypeNames[i]) return static_cast<ChartType>(i);
    throw DataError("unknown chart type: " + s);
}

ElementClass element_class_from_string(const std::string& s) {
    for (int i = 0; i < kNumElementClasses; ++i)
        if (s == kElementClassNames[i]) return static_cast<ElementClass>(i);
    throw DataError("unknown element class: " + s);
}

GenConfig default_gen_config() {
    GenConfig cfg;
    cfg.nouns = {"population", "revenue",    "expenditure", "production", "employment",
                 "consumption", "income",    "enrollment",  "investment", "exports",
                 "imports",     "emissions", "savings",     "credit"};
    cfg.adjectives = {"annual", "total",     "average", "gross",   "net",
                      "estimated", "reported", "domestic", "official"};
    cfg.places = {"Brazil", "Norway", "Kenya",  "Japan",   "Chile",
                  "Poland", "Canada", "Vietnam", "Greece", "Morocco"};
    cfg.series_qualifiers = {"male",    "female",  "urban",    "rural",    "public",
                             "private", "primary", "secondary", "foreign", "local"};
    return cfg;
}

void validate(const GenConfig& cfg) {
    if (cfg.nouns.empty() || cfg.adjectives.empty() || cfg.places.empty() ||
        cfg.series_qualifiers.empty())
        throw ConfigError("generator word pools must be non-empty");
    if (cfg.series_min < 1 || cfg.series_max < cfg.series_min)
        throw ConfigError("bad series count range");
    if (cfg.categories_min < 2 || cfg.categories_max < cfg.categories_min)
        throw ConfigError("bad category count range");
    if (cfg.n_major_min < 2 || cfg.n_major_max < cfg.n_major_min)
        throw ConfigError("bad major tick count range");
    if (cfg.axis_exp_max < cfg.axis_exp_min) throw ConfigError("bad axis exponent range");
    if (cfg.sub_ticks_per_major < 1) throw ConfigError("sub_ticks_per_major must be >= 1");
    if (cfg.chart_types.empty()) throw ConfigError("chart_types must be non-empty");
    if (static_cast<int>(cfg.series_qualifiers.size()) < cfg.series_max)
        throw ConfigError("need at least series_max distinct series qualifiers");
}

void validate(const ChartSpec& spec) {
    const AxisSpec& ax = spec.y_axis;
    if (!(ax.max_value > ax.min_value)) throw DataError("axis: max_value must exceed min_value");
    if (!(ax.sub_tick_spacing > 0.0) || ax.sub_tick_spacing > ax.major_tick_spacing)
        throw DataError("axis: need 0 < sub_tick_spacing <= major_tick_spacing");
    const auto expected_ticks =
        static_cast<std::size_t>(std::floor((ax.max_value - ax.min_value) / ax.major_tick_spacing)) + 1;
    if (ax.tick_labels.size() != expected_ticks)
        throw DataError("axis: tick label count does not match tick spacing");
    if (spec.x_categories.empty()) throw DataError("chart has no categories");
    if (spec.series.empty()) throw DataError("chart has no series");
    std::set<std::string> labels;
    std::set<std::tuple<double, double, double>> colors;
    for (const Series& s : spec.series) {
        if (s.values.size() != spec.x_categories.size())
            throw DataError("series length does not match category count");
        for (double v : s.values)
            if (v < ax.min_value || v > ax.max_value)
                throw DataError("series value outside axis range");
        if (!labels.insert(s.legend_label).second) throw DataError("duplicate legend label");
        if (!colors.insert({s.color.r, s.color.g, s.color.b}).second)
            throw DataError("duplicate series color");
    }
}

void validate(const ChartSpec& spec, const ElementSet& es) {
    if (es.chart_id != spec.chart_id) throw DataError("element set belongs to another chart");
    int n_title = 0, n_xlabel = 0, n_ylabel = 0, n_legend = 0, n_marker = 0;
    for (const Element& e : es.elements) {
        if (!(e.bbox.x0 < e.bbox.x1) || !(e.bbox.y0 < e.bbox.y1))
            throw DataError("element bbox has non-positive extent");
        if (e.bbox.x0 < 0 || e.bbox.y0 < 0 || e.bbox.x1 > 1 || e.bbox.y1 > 1)
            throw DataError("element bbox outside unit square");
        if (is_textual_class(e.element_class) != e.text.has_value())
            throw DataError("text presence inconsistent with element class");
        switch (e.element_class) {
            case ElementClass::title: ++n_title; break;
            case ElementClass::x_label: ++n_xlabel; break;
            case ElementClass::y_label: ++n_ylabel; break;
            case ElementClass::legend_label: ++n_legend; break;
            case ElementClass::legend_marker:
                ++n_marker;
                if (!e.color || !e.series_index) throw DataError("legend marker missing color/series");
                break;
            default: break;
        }
    }
    if (n_title != 1 || n_xlabel != 1 || n_ylabel != 1)
        throw DataError("chart must have exactly one title/x_label/y_label");
    const int ns = static_cast<int>(spec.series.size());
    if (n_legend != ns || n_marker != ns)
        throw DataError("legend entry count does not match series count");
}

ChartSpec synthesize_chart(std::uint64_t seed, const GenConfig& cfg) {
    validate(cfg);
    Rng rng(derive_seed(seed, 0xC4A2));

    ChartSpec spec;
    spec.chart_id = static_cast<std::int64_t>(seed);
    spec.chart_type = cfg.chart_types[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(cfg.chart_types.size()) - 1))];

    // value axis: integer-valued major spacing, log-uniform across decades
    const int exp = static_cast<int>(rng.uniform_int(cfg.axis_exp_min, cfg.axis_exp_max));
    const int mantissa = static_cast<int>(rng.pick(std::vector<std::int64_t>{1, 2, 5}));
    const int n_major = static_cast<int>(rng.uniform_int(cfg.n_major_min, cfg.n_major_max));
    AxisSpec& ax = spec.y_axis;
    ax.major_tick_spacing = mantissa * std::pow(10.0, exp);
    ax.sub_tick_spacing = ax.major_tick_spacing / cfg.sub_ticks_per_major;
    ax.min_value = 0.0;
    ax.max_value = ax.major_tick_spacing * n_major;
    ax.tick_labels.clear();
    for (int i = 0; i <= n_major; ++i)
        ax.tick_labels.push_back(format_tick_value(ax.min_value + i * ax.major_tick_spacing));

    // shared vocabulary between title, value label and legends
    const std::string y_noun = rng.pick(cfg.nouns);
    const std::string y_adj = rng.pick(cfg.adjectives);
    const std::string place = rng.pick(cfg.places);
    spec.y_label = y_adj + " " + y_noun;
    std::string title = y_adj + " " + y_noun + " in " + place;
    title[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(title[0])));
    spec.title = title;

    const int n_cat = static_cast<int>(rng.uniform_int(cfg.categories_min, cfg.categories_max));
    if (rng.uniform() < cfg.year_categories_prob) {
        spec.x_label = "Years";
        const int start = static_cast<int>(rng.uniform_int(1960, 2012));
        for (int i = 0; i < n_cat; ++i) spec.x_categories.push_back(std::to_string(start + i));
    } else {
        spec.x_label = "Countries";
        std::vector<std::string> pool = cfg.places;
        rng.shuffle(pool);
        if (static_cast<int>(pool.size()) < n_cat)
            throw ConfigError("place pool smaller than category count");
        spec.x_categories.assign(pool.begin(), pool.begin() + n_cat);
    }

    static const std::vector<Rgb> kPalette = {
        {0.84, 0.23, 0.20}, {0.22, 0.46, 0.72}, {0.30, 0.65, 0.32}, {0.95, 0.61, 0.18},
        {0.55, 0.35, 0.64}, {0.38, 0.68, 0.67}, {0.80, 0.47, 0.65}, {0.55, 0.55, 0.25}};

    const int n_series = static_cast<int>(rng.uniform_int(cfg.series_min, cfg.series_max));
    std::vector<std::string> qualifiers = cfg.series_qualifiers;
    rng.shuffle(qualifiers);
    std::vector<Rgb> palette = kPalette;
    rng.shuffle(palette);
    const bool qualified_legends = rng.uniform() < 0.5;
    for (int s = 0; s < n_series; ++s) {
        Series series;
        series.legend_label = qualified_legends ? qualifiers[s] + " " + y_noun : qualifiers[s];
        series.color = palette[static_cast<std::size_t>(s) % palette.size()];
        const double lo = ax.min_value + 0.05 * (ax.max_value - ax.min_value);
        const double hi = ax.min_value + 0.98 * (ax.max_value - ax.min_value);
        for (int c = 0; c < n_cat; ++c) series.values.push_back(rng.uniform(lo, hi));
        spec.series.push_back(std::move(series));
    }

    validate(spec);
    return spec;
}

namespace {

struct ValueMap {
    // endpoints of the value axis inside the plot rectangle
    double lo, hi;
    double to_coord(double v, const AxisSpec& ax) const {
        return lerp(lo, hi, inv_lerp(ax.min_value, ax.max_value, v));
    }
    double to_value(double coord, const AxisSpec& ax) const {
        return lerp(ax.min_value, ax.max_value, inv_lerp(lo, hi, coord));
    }
};

BBox text_box_centered(double cx, double cy, double len_chars, double char_w, double halfheight) {
    const double hw = std::max(0.5 * len_chars * char_w, 0.008);
    return BBox{cx - hw, cy - halfheight, cx + hw, cy + halfheight};
}

BBox clamp_unit(BBox b) {
    b.x0 = std::clamp(b.x0, 0.0, 1.0);
    b.y0 = std::clamp(b.y0, 0.0, 1.0);
    b.x1 = std::clamp(b.x1, 0.0, 1.0);
    b.y1 = std::clamp(b.y1, 0.0, 1.0);
    return b;
}

}  // namespace

ElementSet annotate_elements(const ChartSpec& spec, const LayoutConfig& layout) {
    validate(spec);
    const BBox& plot = layout.plot;
    if (plot.area() <= 0.0) throw DataError("zero-area plotting rectangle");

    const AxisSpec& ax = spec.y_axis;
    const bool horizontal = spec.chart_type == ChartType::hbar;
    const ValueMap vmap = horizontal ? ValueMap{plot.x0, plot.x1} : ValueMap{plot.y0, plot.y1};
    // category axis runs along the other dimension
    const double cat_lo = horizontal ? plot.y0 : plot.x0;
    const double cat_hi = horizontal ? plot.y1 : plot.x1;
    const int n_cat = static_cast<int>(spec.x_categories.size());
    const double slot = (cat_hi - cat_lo) / n_cat;
    auto cat_center = [&](int c) { return cat_lo + (c + 0.5) * slot; };

    ElementSet es;
    es.chart_id = spec.chart_id;
    auto emit = [&](Element e) { es.elements.push_back(std::move(e)); };

    const double ch = layout.char_width;
    const double hh = layout.tick_label_halfheight;

    Element title{ElementClass::title,
                  clamp_unit(text_box_centered(0.5, 0.955, static_cast<double>(spec.title.size()), ch, 0.02)),
                  spec.title, std::nullopt, std::nullopt, std::nullopt};
    emit(title);

    // axis titles: x_label names the category axis, y_label the value axis,
    // each drawn along its own axis
    const double xl_len = static_cast<double>(spec.x_label.size());
    const double yl_len = static_cast<double>(spec.y_label.size());
    if (!horizontal) {
        emit({ElementClass::x_label,
              clamp_unit(text_box_centered(0.5 * (plot.x0 + plot.x1), 0.03, xl_len, ch, 0.018)),
              spec.x_label, std::nullopt, std::nullopt, std::nullopt});
        emit({ElementClass::y_label,
              clamp_unit(BBox{0.01, 0.5 * (plot.y0 + plot.y1) - 0.5 * yl_len * ch, 0.04,
                              0.5 * (plot.y0 + plot.y1) + 0.5 * yl_len * ch}),
              spec.y_label, std::nullopt, std::nullopt, std::nullopt});
    } else {
        emit({ElementClass::x_label,
              clamp_unit(BBox{0.01, 0.5 * (plot.y0 + plot.y1) - 0.5 * xl_len * ch, 0.04,
                              0.5 * (plot.y0 + plot.y1) + 0.5 * xl_len * ch}),
              spec.x_label, std::nullopt, std::nullopt, std::nullopt});
        emit({ElementClass::y_label,
              clamp_unit(text_box_centered(0.5 * (plot.x0 + plot.x1), 0.03, yl_len, ch, 0.018)),
              spec.y_label, std::nullopt, std::nullopt, std::nullopt});
    }

    // value tick labels
    const int n_ticks = static_cast<int>(ax.tick_labels.size());
    for (int i = 0; i < n_ticks; ++i) {
        const double v = ax.min_value + i * ax.major_tick_spacing;
        const double coord = vmap.to_coord(v, ax);
        const double len = static_cast<double>(ax.tick_labels[i].size());
        BBox b = horizontal ? text_box_centered(coord, plot.y0 - 0.035, len, ch, hh)
                            : BBox{plot.x0 - 0.015 - len * ch, coord - hh, plot.x0 - 0.012, coord + hh};
        emit({ElementClass::y_ticklabel, clamp_unit(b), ax.tick_labels[i], std::nullopt, std::nullopt,
              std::nullopt});
    }

    // category tick labels
    for (int c = 0; c < n_cat; ++c) {
        const double center = cat_center(c);
        const double len = static_cast<double>(spec.x_categories[c].size());
        BBox b = horizontal
                     ? BBox{plot.x0 - 0.015 - len * ch, center - hh, plot.x0 - 0.012, center + hh}
                     : text_box_centered(center, plot.y0 - 0.035, len, ch, hh);
        emit({ElementClass::x_ticklabel, clamp_unit(b), spec.x_categories[c], std::nullopt,
              std::nullopt, c});
    }

    // minor ticks between majors on the value axis
    {
        const double s = ax.sub_tick_spacing;
        const int n_sub = static_cast<int>(std::floor((ax.max_value - ax.min_value) / s + 1e-9));
        const double eps = 1e-9 * ax.major_tick_spacing;
        for (int i = 1; i <= n_sub; ++i) {
            const double v = ax.min_value + i * s;
            const double r = std::remainder(v - ax.min_value, ax.major_tick_spacing);
            if (std::fabs(r) < eps) continue;  // major position
            const double coord = vmap.to_coord(v, ax);
            const double t = layout.sub_tick_size;
            BBox b = horizontal ? BBox{coord - t * 0.25, plot.y0 - t, coord + t * 0.25, plot.y0 - t * 0.2}
                                : BBox{plot.x0 - t, coord - t * 0.25, plot.x0 - t * 0.2, coord + t * 0.25};
            emit({ElementClass::sub_tick, clamp_unit(b), std::nullopt, std::nullopt, std::nullopt,
                  std::nullopt});
        }
    }

    // legend: display order is a chart-dependent permutation, so the marker
    // color is the only reliable link from label text to series
    {
        std::vector<int> order(spec.series.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng lrng(derive_seed(static_cast<std::uint64_t>(spec.chart_id), 0x1E6E));
        lrng.shuffle(order);
        const double entry_h = 0.035;
        const double top = plot.y1 - 0.015;
        for (std::size_t row = 0; row < order.size(); ++row) {
            const int s = order[row];
            const double cy = top - (static_cast<double>(row) + 0.5) * entry_h;
            const double mx = plot.x1 - 0.20;
            emit({ElementClass::legend_marker, BBox{mx, cy - 0.008, mx + 0.016, cy + 0.008},
                  std::nullopt, spec.series[s].color, s, std::nullopt});
            const double len = static_cast<double>(spec.series[s].legend_label.size());
            emit({ElementClass::legend_label,
                  clamp_unit(BBox{mx + 0.022, cy - hh, std::min(mx + 0.022 + len * ch, 1.0), cy + hh}),
                  spec.series[s].legend_label, std::nullopt, s, std::nullopt});
        }
    }

    // data elements
    const int n_series = static_cast<int>(spec.series.size());
    const double group = layout.bar_group_fill * slot;
    const double bar_w = group / n_series;
    const double minext = 1e-7;  // keeps boxes strictly positive in degenerate cases
    for (int s = 0; s < n_series; ++s) {
        const Series& ser = spec.series[s];
        switch (spec.chart_type) {
            case ChartType::vbar:
            case ChartType::hbar:
                for (int c = 0; c < n_cat; ++c) {
                    const double base = cat_center(c) - 0.5 * group + s * bar_w;
                    const double v0 = vmap.lo;
                    const double v1 = std::max(vmap.to_coord(ser.values[c], ax), v0 + minext);
                    BBox b = horizontal ? BBox{v0, base, v1, base + bar_w}
                                        : BBox{base, v0, base + bar_w, v1};
                    emit({ElementClass::bar, b, std::nullopt, ser.color, s, c});
                }
                break;
            case ChartType::line:
            case ChartType::dotline: {
                if (spec.chart_type == ChartType::dotline) {
                    for (int c = 0; c < n_cat; ++c) {
                        const double cx = cat_center(c);
                        const double cy = vmap.to_coord(ser.values[c], ax);
                        const double r = layout.dot_radius;
                        emit({ElementClass::dot, BBox{cx - r, cy - r, cx + r, cy + r}, std::nullopt,
                              ser.color, s, c});
                    }
                }
                for (int c = 0; c + 1 < n_cat; ++c) {
                    const double ya = vmap.to_coord(ser.values[c], ax);
                    const double yb = vmap.to_coord(ser.values[c + 1], ax);
                    double lo = std::min(ya, yb), hi = std::max(ya, yb);
                    if (hi - lo < minext) { lo -= 0.5 * minext; hi += 0.5 * minext; }
                    emit({ElementClass::line_segment, BBox{cat_center(c), lo, cat_center(c + 1), hi},
                          std::nullopt, ser.color, s, c});
                }
                break;
            }
        }
    }

    validate(spec, es);
    return es;
}

double normalize_value(double v, const AxisSpec& axis) {
    const double range = axis.max_value - axis.min_value;
    if (!(range > 0.0)) throw DataError("degenerate axis: max_value <= min_value");
    const double tol = 1e-9 * range;
    if (v < axis.min_value - tol || v > axis.max_value + tol)
        throw DataError("value outside axis range");
    const double r = inv_lerp(axis.min_value, axis.max_value, v) * 2.0 - 1.0;
    return std::clamp(r, -1.0, 1.0);
}

double denormalize_value(double r, const AxisSpec& axis) {
    const double range = axis.max_value - axis.min_value;
    if (!(range > 0.0)) throw DataError("degenerate axis: max_value <= min_value");
    if (!std::isfinite(r)) throw DataError("non-finite normalized value");
    return lerp(axis.min_value, axis.max_value, (r + 1.0) * 0.5);
}

double value_from_bbox(const Element& e, ChartType type, const LayoutConfig& layout,
                       const AxisSpec& axis) {
    const BBox& plot = layout.plot;
    const bool horizontal = type == ChartType::hbar;
    const ValueMap vmap = horizontal ? ValueMap{plot.x0, plot.x1} : ValueMap{plot.y0, plot.y1};
    switch (e.element_class) {
        case ElementClass::bar:
            return vmap.to_value(horizontal ? e.bbox.x1 : e.bbox.y1, axis);
        case ElementClass::dot:
            return vmap.to_value(horizontal ? e.bbox.cx() : e.bbox.cy(), axis);
        default:
            throw DataError("element class does not encode a single value");
    }
}

std::pair<double, double> segment_values_from_bbox(const Element& e, ChartType type,
                                                   const LayoutConfig& layout,
                                                   const AxisSpec& axis) {
    if (e.element_class != ElementClass::line_segment)
        throw DataError("expected a line_segment element");
    const BBox& plot = layout.plot;
    const bool horizontal = type == ChartType::hbar;
    const ValueMap vmap = horizontal ? ValueMap{plot.x0, plot.x1} : ValueMap{plot.y0, plot.y1};
    return {vmap.to_value(e.bbox.y0, axis), vmap.to_value(e.bbox.y1, axis)};
}

}  // namespace crct
