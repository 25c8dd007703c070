#include "crct/io.hpp"

#include <fstream>
#include <sstream>

namespace crct {

namespace {

const Json& require(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) throw DataError(std::string("missing field: ") + key);
    return *it;
}

}  // namespace

Json to_json(const BBox& b) { return Json::array({b.x0, b.y0, b.x1, b.y1}); }

BBox bbox_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 4) throw DataError("bbox must be a 4-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

Json to_json(const ChartSpec& spec) {
    Json j;
    j["chart_id"] = spec.chart_id;
    j["chart_type"] = to_string(spec.chart_type);
    j["title"] = spec.title;
    j["x_label"] = spec.x_label;
    j["y_label"] = spec.y_label;
    j["x_categories"] = spec.x_categories;
    Json axis;
    axis["min_value"] = spec.y_axis.min_value;
    axis["max_value"] = spec.y_axis.max_value;
    axis["major_tick_spacing"] = spec.y_axis.major_tick_spacing;
    axis["sub_tick_spacing"] = spec.y_axis.sub_tick_spacing;
    axis["tick_labels"] = spec.y_axis.tick_labels;
    j["y_axis"] = std::move(axis);
    Json series = Json::array();
    for (const Series& s : spec.series) {
        Json js;
        js["legend_label"] = s.legend_label;
        js["color"] = Json::array({s.color.r, s.color.g, s.color.b});
        js["values"] = s.values;
        series.push_back(std::move(js));
    }
    j["series"] = std::move(series);
    return j;
}

ChartSpec chart_spec_from_json(const Json& j) {
    ChartSpec spec;
    spec.chart_id = require(j, "chart_id").get<std::int64_t>();
    spec.chart_type = chart_type_from_string(require(j, "chart_type").get<std::string>());
    spec.title = require(j, "title").get<std::string>();
    spec.x_label = require(j, "x_label").get<std::string>();
    spec.y_label = require(j, "y_label").get<std::string>();
    spec.x_categories = require(j, "x_categories").get<std::vector<std::string>>();
    const Json& axis = require(j, "y_axis");
    spec.y_axis.min_value = require(axis, "min_value").get<double>();
    spec.y_axis.max_value = require(axis, "max_value").get<double>();
    spec.y_axis.major_tick_spacing = require(axis, "major_tick_spacing").get<double>();
    spec.y_axis.sub_tick_spacing = require(axis, "sub_tick_spacing").get<double>();
    spec.y_axis.tick_labels = require(axis, "tick_labels").get<std::vector<std::string>>();
    for (const Json& js : require(j, "series")) {
        Series s;
        s.legend_label = require(js, "legend_label").get<std::string>();
        const Json& c = require(js, "color");
        s.color = {c[0].get<double>(), c[1].get<double>(), c[2].get<double>()};
        s.values = require(js, "values").get<std::vector<double>>();
        spec.series.push_back(std::move(s));
    }
    validate(spec);
    return spec;
}

Json to_json(const Element& e) {
    Json j;
    j["class"] = to_string(e.element_class);
    j["bbox"] = to_json(e.bbox);
    if (e.text) j["text"] = *e.text;
    if (e.color) j["color"] = Json::array({e.color->r, e.color->g, e.color->b});
    if (e.series_index) j["series_index"] = *e.series_index;
    if (e.category_index) j["category_index"] = *e.category_index;
    return j;
}

Element element_from_json(const Json& j) {
    Element e;
    e.element_class = element_class_from_string(require(j, "class").get<std::string>());
    e.bbox = bbox_from_json(require(j, "bbox"));
    if (j.contains("text")) e.text = j["text"].get<std::string>();
    if (j.contains("color")) {
        const Json& c = j["color"];
        e.color = Rgb{c[0].get<double>(), c[1].get<double>(), c[2].get<double>()};
    }
    if (j.contains("series_index")) e.series_index = j["series_index"].get<int>();
    if (j.contains("category_index")) e.category_index = j["category_index"].get<int>();
    return e;
}

Json to_json(const ElementSet& es) {
    Json j;
    j["chart_id"] = es.chart_id;
    Json arr = Json::array();
    for (const Element& e : es.elements) arr.push_back(to_json(e));
    j["elements"] = std::move(arr);
    return j;
}

ElementSet element_set_from_json(const Json& j) {
    ElementSet es;
    es.chart_id = require(j, "chart_id").get<std::int64_t>();
    for (const Json& je : require(j, "elements")) es.elements.push_back(element_from_json(je));
    return es;
}

void write_chart_records(const std::string& path, const std::vector<ChartRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const ChartRecord& r : records) {
        Json j;
        j["format_version"] = 1;
        j["chart"] = to_json(r.chart);
        j["elements"] = to_json(r.elements);
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

std::vector<ChartRecord> read_chart_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<ChartRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const std::exception& ex) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        if (require(j, "format_version").get<int>() != 1)
            throw DataError(path + ": unsupported format_version");
        ChartRecord r;
        r.chart = chart_spec_from_json(require(j, "chart"));
        r.elements = element_set_from_json(require(j, "elements"));
        validate(r.chart, r.elements);
        records.push_back(std::move(r));
    }
    return records;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace crct
