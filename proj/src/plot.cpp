#include "crct/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "crct/common.hpp"

namespace crct {

namespace {

constexpr double kW = 800.0;
constexpr double kH = 500.0;

std::string esc(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out += c;
    }
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string rgb(const Rgb& c) {
    const auto ch = [](double v) {
        return std::to_string(static_cast<int>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))));
    };
    return "rgb(" + ch(c.r) + "," + ch(c.g) + "," + ch(c.b) + ")";
}

// cold blue to warm red
std::string heat(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return rgb(Rgb{t, 0.15, 1.0 - t});
}

struct Svg {
    std::ostringstream body;
    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& extra = "") {
        body << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w)
             << "\" height=\"" << num(h) << "\" fill=\"" << fill << "\" " << extra << "/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0) {
        body << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2)
             << "\" y2=\"" << num(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
             << num(width) << "\"/>\n";
    }
    void circle(double cx, double cy, double r, const std::string& fill) {
        body << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r)
             << "\" fill=\"" << fill << "\"/>\n";
    }
    void text(double x, double y, const std::string& s, double size = 12.0,
              const std::string& anchor = "middle") {
        body << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << num(size)
             << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << esc(s)
             << "</text>\n";
    }
    void save(const std::string& path) {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw Error("cannot open svg for writing: " + path);
        f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kW) << "\" height=\""
          << num(kH) << "\" viewBox=\"0 0 " << num(kW) << " " << num(kH) << "\">\n"
          << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
          << body.str() << "</svg>\n";
        f.flush();
        if (!f) throw Error("failed while writing svg: " + path);
    }
};

// chart space is the unit square with y up; the svg has y down
double sx(double x) { return x * kW; }
double sy(double y) { return (1.0 - y) * kH; }

void draw_elements(Svg& svg, const ElementSet& elements) {
    for (const Element& e : elements.elements) {
        const BBox& b = e.bbox;
        switch (e.element_class) {
            case ElementClass::bar:
            case ElementClass::legend_marker:
                svg.rect(sx(b.x0), sy(b.y1), (b.x1 - b.x0) * kW, (b.y1 - b.y0) * kH,
                         e.color.has_value() ? rgb(*e.color) : "gray",
                         "stroke=\"black\" stroke-width=\"0.5\"");
                break;
            case ElementClass::dot:
                svg.circle(sx(b.cx()), sy(b.cy()), std::max(2.0, (b.x1 - b.x0) * kW * 0.5),
                           e.color.has_value() ? rgb(*e.color) : "black");
                break;
            case ElementClass::line_segment:
                svg.line(sx(b.x0), sy(b.y0), sx(b.x1), sy(b.y1),
                         e.color.has_value() ? rgb(*e.color) : "black", 2.0);
                break;
            case ElementClass::sub_tick:
                svg.line(sx(b.x0), sy(b.y0), sx(b.x1), sy(b.y1), "black", 1.0);
                break;
            default:
                if (e.text.has_value())
                    svg.text(sx(b.cx()), sy(b.cy()) + 4.0, *e.text,
                             e.element_class == ElementClass::title ? 15.0 : 11.0);
                break;
        }
    }
}

}  // namespace

void write_tick_curve_svg(const std::string& path, const std::vector<double>& fractions,
                          const std::vector<double>& accuracy) {
    if (fractions.empty() || fractions.size() != accuracy.size())
        throw ConfigError("tick curve needs matching non-empty fractions and accuracies");
    Svg svg;
    const double x0 = 70.0, x1 = kW - 40.0, y0 = kH - 60.0, y1 = 40.0;
    svg.line(x0, y0, x1, y0, "black", 1.5);
    svg.line(x0, y0, x0, y1, "black", 1.5);
    for (int g = 0; g <= 4; ++g) {
        const double v = 0.25 * g;
        const double y = y0 + (y1 - y0) * v;
        svg.line(x0 - 4.0, y, x0, y, "black");
        svg.text(x0 - 8.0, y + 4.0, num(v), 11.0, "end");
    }
    const std::size_t n = fractions.size();
    std::ostringstream pts;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = n == 1 ? x0 : x0 + (x1 - x0) * static_cast<double>(i) / (n - 1);
        const double y = y0 + (y1 - y0) * std::clamp(accuracy[i], 0.0, 1.0);
        pts << num(x) << "," << num(y) << " ";
        svg.circle(x, y, 4.0, "steelblue");
        svg.text(x, y0 + 18.0, num(fractions[i]), 11.0);
    }
    svg.body << "<polyline points=\"" << pts.str()
             << "\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n";
    svg.text(kW / 2.0, y0 + 38.0, "tolerance fraction of a sub-tick");
    svg.text(kW / 2.0, 24.0, "accuracy within f sub-ticks", 14.0);
    svg.save(path);
}

void write_er_histogram_svg(const std::string& path, const std::vector<std::string>& labels,
                            const std::vector<int>& counts) {
    if (labels.empty() || labels.size() != counts.size())
        throw ConfigError("histogram needs matching non-empty labels and counts");
    Svg svg;
    const double x0 = 70.0, x1 = kW - 40.0, y0 = kH - 60.0, y1 = 40.0;
    svg.line(x0, y0, x1, y0, "black", 1.5);
    svg.line(x0, y0, x0, y1, "black", 1.5);
    const int max_count = std::max(1, *std::max_element(counts.begin(), counts.end()));
    const std::size_t n = labels.size();
    const double slot = (x1 - x0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double h = (y0 - y1) * counts[i] / max_count;
        const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
        svg.rect(bx, y0 - h, slot * 0.7, h, "indianred", "stroke=\"black\"");
        svg.text(bx + slot * 0.35, y0 + 18.0, labels[i], 11.0);
        svg.text(bx + slot * 0.35, y0 - h - 6.0, std::to_string(counts[i]), 11.0);
    }
    svg.text(kW / 2.0, y0 + 38.0, "answer error ratio");
    svg.text(kW / 2.0, 24.0, "numeric answers per error range", 14.0);
    svg.save(path);
}

void write_chart_svg(const std::string& path, const ChartSpec& spec,
                     const ElementSet& elements) {
    (void)spec;
    Svg svg;
    draw_elements(svg, elements);
    svg.save(path);
}

void write_attribution_svg(const std::string& path, const ChartSpec& spec,
                           const ElementSet& elements,
                           const std::vector<ElementSaliency>& saliencies) {
    (void)spec;
    Svg svg;
    draw_elements(svg, elements);
    for (const ElementSaliency& s : saliencies) {
        const BBox& b = s.bbox;
        svg.rect(sx(b.x0), sy(b.y1), std::max(2.0, (b.x1 - b.x0) * kW),
                 std::max(2.0, (b.y1 - b.y0) * kH), heat(s.saliency),
                 "fill-opacity=\"0.45\" stroke=\"" + heat(s.saliency) + "\" stroke-width=\"1.5\"");
    }
    svg.text(kW / 2.0, 24.0, "warmer box = higher influence", 14.0);
    svg.save(path);
}

}  // namespace crct
