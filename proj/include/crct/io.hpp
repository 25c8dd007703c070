#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "crct/chart.hpp"

namespace crct {

using Json = nlohmann::ordered_json;

Json to_json(const BBox& b);
BBox bbox_from_json(const Json& j);

Json to_json(const ChartSpec& spec);
ChartSpec chart_spec_from_json(const Json& j);

Json to_json(const Element& e);
Element element_from_json(const Json& j);

Json to_json(const ElementSet& es);
ElementSet element_set_from_json(const Json& j);

// one annotated chart per line: {"format_version":1,"chart":{...},"elements":{...}}
struct ChartRecord {
    ChartSpec chart;
    ElementSet elements;
};

void write_chart_records(const std::string& path, const std::vector<ChartRecord>& records);
std::vector<ChartRecord> read_chart_records(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace crct
