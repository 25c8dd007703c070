#pragma once

// Second opinion on QA ground truth. Works from the question text alone plus
// the chart's stored values, with its own parsing and arithmetic, so a bug in
// the generator's oracle cannot cancel out here.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "crct/chart.hpp"
#include "crct/qa.hpp"

namespace refeval {

inline bool boundary_at(const std::string& text, std::size_t pos, std::size_t len) {
    const bool left_ok =
        pos == 0 || !std::isalnum(static_cast<unsigned char>(text[pos - 1]));
    const bool right_ok = pos + len >= text.size() ||
                          !std::isalnum(static_cast<unsigned char>(text[pos + len]));
    return left_ok && right_ok;
}

inline std::vector<std::size_t> find_word(const std::string& text, const std::string& needle) {
    std::vector<std::size_t> hits;
    if (needle.empty()) return hits;
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        if (boundary_at(text, pos, needle.size())) hits.push_back(pos);
        pos += 1;
    }
    return hits;
}

inline int parse_series(const std::string& question, const crct::ChartSpec& spec) {
    int found = -1;
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        if (!find_word(question, spec.series[s].legend_label).empty()) {
            if (found >= 0) throw crct::DataError("question names more than one series");
            found = static_cast<int>(s);
        }
    }
    if (found < 0) throw crct::DataError("question names no series");
    return found;
}

inline std::vector<int> parse_categories(const std::string& question,
                                         const crct::ChartSpec& spec) {
    std::vector<std::pair<std::size_t, int>> hits;
    for (std::size_t c = 0; c < spec.x_categories.size(); ++c)
        for (std::size_t pos : find_word(question, spec.x_categories[c]))
            hits.emplace_back(pos, static_cast<int>(c));
    std::sort(hits.begin(), hits.end());
    std::vector<int> order;
    for (auto& [pos, idx] : hits)
        if (order.empty() || order.back() != idx) order.push_back(idx);
    return order;
}

inline bool parse_wants_max(const std::string& question) {
    for (const char* w : {"maximum", "highest", "largest"})
        if (!find_word(question, w).empty()) return true;
    for (const char* w : {"minimum", "lowest", "smallest"})
        if (!find_word(question, w).empty()) return false;
    throw crct::DataError("question carries no extremum wording");
}

inline crct::OracleResult route_count(long long n) {
    crct::OracleResult r;
    if (n >= 0 && n <= 20) {
        r.kind = crct::AnswerKind::fixed_vocab;
        r.text = std::to_string(n);
    } else {
        r.kind = crct::AnswerKind::numeric;
        r.value = static_cast<double>(n);
    }
    return r;
}

inline crct::OracleResult recompute(const crct::QAItem& item, const crct::ChartSpec& spec) {
    using crct::AnswerKind;
    using crct::OracleResult;
    const std::string& q = item.question_text;
    const std::string& id = item.template_id;

    if (id == "S1_bar_colours" || id == "S2_line_count" || id == "S3_legend_count") {
        std::set<std::string> labels;
        for (const crct::Series& s : spec.series) labels.insert(s.legend_label);
        return route_count(static_cast<long long>(labels.size()));
    }
    if (id == "S4_tick_count") {
        const auto& ax = spec.y_axis;
        return route_count(
            llround((ax.max_value - ax.min_value) / ax.major_tick_spacing) + 1);
    }
    if (id == "D1_title") return {AnswerKind::chart_text, spec.title, std::nullopt};
    if (id == "D2_axis_label") {
        const bool x = !find_word(q, "X-axis").empty() || !find_word(q, "x-axis").empty();
        const bool y = !find_word(q, "Y-axis").empty() || !find_word(q, "y-axis").empty();
        if (x == y) throw crct::DataError("axis mention missing or ambiguous");
        return {AnswerKind::chart_text, x ? spec.x_label : spec.y_label, std::nullopt};
    }
    if (id == "D3_value_at") {
        const int s = parse_series(q, spec);
        const auto cats = parse_categories(q, spec);
        if (cats.size() != 1) throw crct::DataError("expected exactly one category mention");
        return {AnswerKind::numeric, std::nullopt,
                spec.series[static_cast<std::size_t>(s)].values[static_cast<std::size_t>(cats[0])]};
    }
    if (id == "D4_arg_extremum") {
        const int s = parse_series(q, spec);
        const auto& vals = spec.series[static_cast<std::size_t>(s)].values;
        const auto it = parse_wants_max(q) ? std::max_element(vals.begin(), vals.end())
                                           : std::min_element(vals.begin(), vals.end());
        const auto idx = static_cast<std::size_t>(std::distance(vals.begin(), it));
        return {AnswerKind::chart_text, spec.x_categories[idx], std::nullopt};
    }
    if (id == "R1_average") {
        const int s = parse_series(q, spec);
        const auto& vals = spec.series[static_cast<std::size_t>(s)].values;
        const double mean =
            std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
        return {AnswerKind::numeric, std::nullopt, mean};
    }
    if (id == "R2_difference" || id == "R4_comparison") {
        const int s = parse_series(q, spec);
        const auto cats = parse_categories(q, spec);
        if (cats.size() != 2) throw crct::DataError("expected exactly two category mentions");
        const auto& vals = spec.series[static_cast<std::size_t>(s)].values;
        const double a = vals[static_cast<std::size_t>(cats[0])];
        const double b = vals[static_cast<std::size_t>(cats[1])];
        if (id == "R2_difference")
            return {AnswerKind::numeric, std::nullopt, std::fabs(a - b)};
        return {AnswerKind::fixed_vocab, a > b ? "Yes" : "No", std::nullopt};
    }
    if (id == "R3_series_extremum") {
        const auto cats = parse_categories(q, spec);
        if (cats.size() != 1) throw crct::DataError("expected exactly one category mention");
        const bool want_max = parse_wants_max(q);
        std::size_t best = 0;
        for (std::size_t s = 1; s < spec.series.size(); ++s) {
            const double v = spec.series[s].values[static_cast<std::size_t>(cats[0])];
            const double b = spec.series[best].values[static_cast<std::size_t>(cats[0])];
            if (want_max ? v > b : v < b) best = s;
        }
        return {AnswerKind::chart_text, spec.series[best].legend_label, std::nullopt};
    }
    throw crct::ConfigError("reference evaluator: unknown template " + id);
}

inline bool agrees(const crct::QAItem& item, const crct::ChartSpec& spec) {
    const crct::OracleResult ref = recompute(item, spec);
    if (ref.kind != item.answer_kind) return false;
    if (ref.text.has_value() != item.answer_text.has_value()) return false;
    if (ref.text && *ref.text != *item.answer_text) return false;
    if (ref.value.has_value() != item.answer_value.has_value()) return false;
    if (ref.value) {
        const double tol = 1e-9 * std::max(1.0, std::fabs(*ref.value));
        if (std::fabs(*ref.value - *item.answer_value) > tol) return false;
    }
    return true;
}

}  // namespace refeval
