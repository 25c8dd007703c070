#include "crct/qa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace crct {

namespace {

const char* kCategoryNames[] = {"structural", "data_retrieval", "reasoning"};
const char* kAnswerKindNames[] = {"fixed_vocab", "chart_text", "numeric"};

std::string catword(const ChartSpec& spec) {
    if (spec.x_label == "Years") return "year";
    if (spec.x_label == "Countries") return "country";
    return "category";
}

OracleResult count_answer(std::size_t n) {
    OracleResult r;
    if (n <= 20) {
        r.kind = AnswerKind::fixed_vocab;
        r.text = std::to_string(n);
    } else {
        r.kind = AnswerKind::numeric;
        r.value = static_cast<double>(n);
    }
    return r;
}

OracleResult text_answer(std::string s) {
    return {AnswerKind::chart_text, std::move(s), std::nullopt};
}

OracleResult numeric_answer(double v) { return {AnswerKind::numeric, std::nullopt, v}; }

const Series& series_at(const ChartSpec& spec, int idx) {
    if (idx < 0 || idx >= static_cast<int>(spec.series.size()))
        throw DataError("series slot out of range");
    return spec.series[static_cast<std::size_t>(idx)];
}

double value_at(const ChartSpec& spec, int series, int category) {
    const Series& s = series_at(spec, series);
    if (category < 0 || category >= static_cast<int>(s.values.size()))
        throw DataError("category slot out of range");
    return s.values[static_cast<std::size_t>(category)];
}

int arg_extremum(const std::vector<double>& values, bool want_max) {
    if (values.empty()) throw DataError("empty series");
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        const double v = values[static_cast<std::size_t>(i)];
        const double b = values[static_cast<std::size_t>(best)];
        if (want_max ? v > b : v < b) best = i;
    }
    for (int i = 0; i < static_cast<int>(values.size()); ++i)
        if (i != best && values[static_cast<std::size_t>(i)] == values[static_cast<std::size_t>(best)])
            throw DataError("ambiguous extremum");
    return best;
}

int extremum_word_to_flag(const std::string& w) {
    if (w == "minimum" || w == "lowest" || w == "smallest") return 0;
    if (w == "maximum" || w == "highest" || w == "largest") return 1;
    return -1;
}

int axis_word_to_flag(const std::string& w) {
    if (w == "X" || w == "x") return 0;
    if (w == "Y" || w == "y") return 1;
    return -1;
}

}  // namespace

const char* to_string(QaCategory c) { return kCategoryNames[static_cast<int>(c)]; }
const char* to_string(AnswerKind k) { return kAnswerKindNames[static_cast<int>(k)]; }

QaCategory qa_category_from_string(const std::string& s) {
    for (int i = 0; i < 3; ++i)
        if (s == kCategoryNames[i]) return static_cast<QaCategory>(i);
    throw DataError("unknown question category: " + s);
}

AnswerKind answer_kind_from_string(const std::string& s) {
    for (int i = 0; i < 3; ++i)
        if (s == kAnswerKindNames[i]) return static_cast<AnswerKind>(i);
    throw DataError("unknown answer kind: " + s);
}

void validate(const QAItem& item) {
    if (item.template_id.empty()) throw DataError("question item without template_id");
    if (item.question_text.empty()) throw DataError("question item without text");
    const bool numeric = item.answer_kind == AnswerKind::numeric;
    if (numeric != item.answer_value.has_value() || numeric == item.answer_text.has_value())
        throw DataError("answer fields inconsistent with answer kind");
}

const QaTemplate& TemplateCatalog::find(const std::string& template_id) const {
    for (const QaTemplate& t : templates)
        if (t.template_id == template_id) return t;
    throw ConfigError("unknown template: " + template_id);
}

void validate(const TemplateCatalog& catalog) {
    if (catalog.templates.empty()) throw ConfigError("template catalog is empty");
    static const std::set<std::string> kKnownSlots = {"series", "category", "category_a",
                                                     "category_b", "axis", "extremum"};
    std::set<std::string> ids;
    for (const QaTemplate& t : catalog.templates) {
        if (!ids.insert(t.template_id).second)
            throw ConfigError("duplicate template id: " + t.template_id);
        if (t.surfaces.empty()) throw ConfigError(t.template_id + ": template has no surface form");
        if (std::none_of(t.surfaces.begin(), t.surfaces.end(),
                         [](const Surface& s) { return !s.held_out; }))
            throw ConfigError(t.template_id + ": all surfaces held out");
        if (t.min_series < 1) throw ConfigError(t.template_id + ": min_series must be >= 1");
        for (const std::string& s : t.slots)
            if (!kKnownSlots.count(s)) throw ConfigError(t.template_id + ": unknown slot " + s);
    }
}

TemplateCatalog default_template_catalog() {
    auto T = [](std::string id, QaCategory cat, AnswerKind kind, std::vector<std::string> slots,
                std::vector<ChartType> types, int min_series,
                std::vector<Surface> surfaces) {
        QaTemplate t;
        t.template_id = std::move(id);
        t.category = cat;
        t.answer_kind = kind;
        t.slots = std::move(slots);
        t.chart_types = std::move(types);
        t.min_series = min_series;
        t.surfaces = std::move(surfaces);
        return t;
    };

    TemplateCatalog c;
    c.templates = {
        T("S1_bar_colours", QaCategory::structural, AnswerKind::fixed_vocab, {},
          {ChartType::vbar, ChartType::hbar}, 1,
          {{"How many different coloured bars are there?", false},
           {"How many bar colours appear in the chart?", false},
           {"How many differently coloured sets of bars does the figure contain?", false},
           {"Count the distinct bar colours in the plot.", true}}),
        T("S2_line_count", QaCategory::structural, AnswerKind::fixed_vocab, {},
          {ChartType::line, ChartType::dotline}, 1,
          {{"How many lines are there in the graph?", false},
           {"How many different coloured lines does the figure show?", false},
           {"How many lines are plotted?", false},
           {"Count the lines drawn in the chart.", true}}),
        T("S3_legend_count", QaCategory::structural, AnswerKind::fixed_vocab, {}, {}, 1,
          {{"How many labels are there in the legend?", false},
           {"How many entries does the legend contain?", false},
           {"How many legend labels are shown?", false},
           {"Count the entries listed in the legend.", true}}),
        T("S4_tick_count", QaCategory::structural, AnswerKind::fixed_vocab, {}, {}, 1,
          {{"How many numeric tick labels are there on the value axis?", false},
           {"How many numbers are marked along the value axis?", false},
           {"How many major tick labels does the value axis carry?", false},
           {"Count the numeric tick labels printed beside the value axis.", true}}),
        T("D1_title", QaCategory::data_retrieval, AnswerKind::chart_text, {}, {}, 1,
          {{"What is the title of the graph?", false},
           {"What does the title of the figure say?", false},
           {"Which title is written above the chart?", false},
           {"State the title of this chart.", true}}),
        T("D2_axis_label", QaCategory::data_retrieval, AnswerKind::chart_text, {"axis"}, {}, 1,
          {{"What is the label or title of the {axis}-axis ?", false},
           {"What's the name of the {axis}-axis?", false},
           {"Which label is written along the {axis}-axis?", false},
           {"State the title of the {axis}-axis.", true}}),
        T("D3_value_at", QaCategory::data_retrieval, AnswerKind::numeric, {"series", "category"},
          {}, 1,
          {{"What is the value of {series} in {category}?", false},
           {"How much was the {series} in {category}?", false},
           {"What value does {series} take in {category}?", false},
           {"Report the value of {series} in {category}.", true}}),
        T("D4_arg_extremum", QaCategory::data_retrieval, AnswerKind::chart_text,
          {"series", "extremum"}, {}, 1,
          {{"In which {catword} was the {series} {extremum}?", false},
           {"For which {catword} was the {series} the {extremum_alt}?", false},
           {"In which {catword} does {series} reach its {extremum}?", false},
           {"Name the {catword} where the {series} was {extremum}.", true}}),
        T("R1_average", QaCategory::reasoning, AnswerKind::numeric, {"series"}, {}, 1,
          {{"What is the average {series} per {catword}?", false},
           {"What is the mean value of {series}?", false},
           {"What is the average of the {series} values?", false},
           {"What was the {series} on average?", true}}),
        T("R2_difference", QaCategory::reasoning, AnswerKind::numeric,
          {"series", "category_a", "category_b"}, {}, 1,
          {{"What is the difference between the {series} in {category_a} and the {series} in "
            "{category_b}?",
            false},
           {"By how much does the {series} in {category_a} differ from the {series} in "
            "{category_b}?",
            false},
           {"What is the gap between the {series} in {category_a} and in {category_b}?", false},
           {"How far apart are the {series} values in {category_a} and {category_b}?", true}}),
        T("R3_series_extremum", QaCategory::reasoning, AnswerKind::chart_text,
          {"category", "extremum"}, {}, 2,
          {{"Which group has the {extremum_alt} value in {category}?", false},
           {"Which series shows the {extremum_alt} value in {category}?", false},
           {"In {category}, which group records the {extremum} value?", false},
           {"Name the group with the {extremum_alt} value in {category}.", true}}),
        T("R4_comparison", QaCategory::reasoning, AnswerKind::fixed_vocab,
          {"series", "category_a", "category_b"}, {}, 1,
          {{"Is the {series} in {category_a} greater than the {series} in {category_b}?", false},
           {"Does the {series} in {category_a} exceed that in {category_b}?", false},
           {"Is {series} higher in {category_a} than in {category_b}?", false},
           {"Was the {series} larger in {category_a} than in {category_b}?", true}}),
    };
    validate(c);
    return c;
}

OracleResult oracle_answer(const ChartSpec& spec, const std::string& template_id,
                           const SlotBindings& slots) {
    if (spec.series.empty()) throw DataError("empty series");
    if (template_id == "S1_bar_colours" || template_id == "S2_line_count" ||
        template_id == "S3_legend_count")
        return count_answer(spec.series.size());
    if (template_id == "S4_tick_count") return count_answer(spec.y_axis.tick_labels.size());
    if (template_id == "D1_title") return text_answer(spec.title);
    if (template_id == "D2_axis_label") {
        if (slots.axis != 0 && slots.axis != 1) throw DataError("axis slot out of range");
        return text_answer(slots.axis == 0 ? spec.x_label : spec.y_label);
    }
    if (template_id == "D3_value_at")
        return numeric_answer(value_at(spec, slots.series_a, slots.category_a));
    if (template_id == "D4_arg_extremum") {
        if (slots.extremum != 0 && slots.extremum != 1) throw DataError("extremum slot out of range");
        const Series& s = series_at(spec, slots.series_a);
        const int arg = arg_extremum(s.values, slots.extremum == 1);
        return text_answer(spec.x_categories[static_cast<std::size_t>(arg)]);
    }
    if (template_id == "R1_average") {
        const Series& s = series_at(spec, slots.series_a);
        if (s.values.empty()) throw DataError("empty series");
        const double sum = std::accumulate(s.values.begin(), s.values.end(), 0.0);
        return numeric_answer(sum / static_cast<double>(s.values.size()));
    }
    if (template_id == "R2_difference") {
        const double a = value_at(spec, slots.series_a, slots.category_a);
        const double b = value_at(spec, slots.series_a, slots.category_b);
        return numeric_answer(std::fabs(a - b));
    }
    if (template_id == "R3_series_extremum") {
        if (spec.series.size() < 2) throw DataError("needs at least two series");
        if (slots.extremum != 0 && slots.extremum != 1) throw DataError("extremum slot out of range");
        std::vector<double> column;
        for (const Series& s : spec.series) {
            if (slots.category_a < 0 || slots.category_a >= static_cast<int>(s.values.size()))
                throw DataError("category slot out of range");
            column.push_back(s.values[static_cast<std::size_t>(slots.category_a)]);
        }
        const int arg = arg_extremum(column, slots.extremum == 1);
        return text_answer(spec.series[static_cast<std::size_t>(arg)].legend_label);
    }
    if (template_id == "R4_comparison") {
        const double a = value_at(spec, slots.series_a, slots.category_a);
        const double b = value_at(spec, slots.series_a, slots.category_b);
        return {AnswerKind::fixed_vocab, a > b ? "Yes" : "No", std::nullopt};
    }
    throw ConfigError("unknown template: " + template_id);
}

bool template_applicable(const QaTemplate& tmpl, const ChartSpec& spec) {
    if (!tmpl.chart_types.empty() &&
        std::find(tmpl.chart_types.begin(), tmpl.chart_types.end(), spec.chart_type) ==
            tmpl.chart_types.end())
        return false;
    if (static_cast<int>(spec.series.size()) < tmpl.min_series) return false;
    for (const std::string& s : tmpl.slots)
        if (s == "category_b" && spec.x_categories.size() < 2) return false;
    return true;
}

std::string render_question(const std::string& surface, const ChartSpec& spec,
                            const SlotBindings& slots) {
    std::string out;
    for (std::size_t i = 0; i < surface.size();) {
        if (surface[i] != '{') {
            out += surface[i++];
            continue;
        }
        const std::size_t end = surface.find('}', i);
        if (end == std::string::npos) throw ConfigError("unterminated placeholder in: " + surface);
        const std::string name = surface.substr(i + 1, end - i - 1);
        if (name == "series") {
            out += series_at(spec, slots.series_a).legend_label;
        } else if (name == "category" || name == "category_a" || name == "category_b") {
            const int idx = name == "category_b" ? slots.category_b : slots.category_a;
            if (idx < 0 || idx >= static_cast<int>(spec.x_categories.size()))
                throw DataError("category slot out of range");
            out += spec.x_categories[static_cast<std::size_t>(idx)];
        } else if (name == "axis") {
            if (slots.axis != 0 && slots.axis != 1) throw DataError("axis slot out of range");
            out += slots.axis == 0 ? "X" : "Y";
        } else if (name == "catword") {
            out += catword(spec);
        } else if (name == "extremum" || name == "extremum_alt") {
            if (slots.extremum != 0 && slots.extremum != 1)
                throw DataError("extremum slot out of range");
            if (name == "extremum")
                out += slots.extremum == 1 ? "maximum" : "minimum";
            else
                out += slots.extremum == 1 ? "highest" : "lowest";
        } else {
            throw ConfigError("unknown placeholder {" + name + "} in: " + surface);
        }
        i = end + 1;
    }
    return out;
}

std::optional<std::map<std::string, std::string>> match_surface(const std::string& surface,
                                                                const std::string& question) {
    std::map<std::string, std::string> captures;
    std::size_t qpos = 0;
    std::size_t i = 0;
    std::string pending;  // placeholder awaiting its terminating fixed segment
    auto flush = [&](const std::string& value) -> bool {
        if (pending.empty()) return value.empty();
        auto [it, fresh] = captures.emplace(pending, value);
        const bool ok = fresh ? !value.empty() : it->second == value;
        pending.clear();
        return ok;
    };
    while (i < surface.size()) {
        if (surface[i] == '{') {
            const std::size_t end = surface.find('}', i);
            if (end == std::string::npos) return std::nullopt;
            if (!pending.empty()) return std::nullopt;  // adjacent placeholders unsupported
            pending = surface.substr(i + 1, end - i - 1);
            i = end + 1;
        } else {
            std::size_t j = i;
            while (j < surface.size() && surface[j] != '{') ++j;
            const std::string fixed = surface.substr(i, j - i);
            const std::size_t found = question.find(fixed, qpos);
            if (found == std::string::npos) return std::nullopt;
            if (!flush(question.substr(qpos, found - qpos))) return std::nullopt;
            qpos = found + fixed.size();
            i = j;
        }
    }
    if (!pending.empty()) {
        if (!flush(question.substr(qpos))) return std::nullopt;
        qpos = question.size();
    }
    if (qpos != question.size()) return std::nullopt;
    return captures;
}

namespace {

std::string substitute_captures(const std::string& surface,
                                const std::map<std::string, std::string>& captures) {
    std::string out;
    for (std::size_t i = 0; i < surface.size();) {
        if (surface[i] != '{') {
            out += surface[i++];
            continue;
        }
        const std::size_t end = surface.find('}', i);
        if (end == std::string::npos) throw ConfigError("unterminated placeholder in: " + surface);
        const std::string name = surface.substr(i + 1, end - i - 1);
        auto direct = captures.find(name);
        if (direct != captures.end()) {
            out += direct->second;
        } else if (name == "extremum" || name == "extremum_alt") {
            int flag = -1;
            for (const char* key : {"extremum", "extremum_alt"}) {
                auto it = captures.find(key);
                if (it != captures.end()) flag = extremum_word_to_flag(it->second);
            }
            if (flag < 0) throw DataError("cannot recover extremum wording");
            if (name == "extremum")
                out += flag == 1 ? "maximum" : "minimum";
            else
                out += flag == 1 ? "highest" : "lowest";
        } else if (name == "category" || name == "category_a") {
            auto it = captures.find(name == "category" ? "category_a" : "category");
            if (it == captures.end()) throw DataError("cannot recover category wording");
            out += it->second;
        } else {
            throw DataError("surface needs placeholder {" + name + "} absent from source");
        }
        i = end + 1;
    }
    return out;
}

}  // namespace

std::vector<QAItem> generate_questions(const ChartSpec& spec, const TemplateCatalog& catalog,
                                       std::uint64_t seed, int per_chart, const QaOptions& opts) {
    validate(catalog);
    validate(spec);
    if (per_chart < 1) throw ConfigError("per_chart must be >= 1");
    double wsum = 0.0;
    for (double w : opts.category_mixture) {
        if (w < 0.0) throw ConfigError("category mixture weights must be non-negative");
        wsum += w;
    }
    if (wsum <= 0.0) throw ConfigError("category mixture weights sum to zero");

    std::array<std::vector<const QaTemplate*>, 3> by_category;
    for (const QaTemplate& t : catalog.templates)
        if (template_applicable(t, spec)) by_category[static_cast<int>(t.category)].push_back(&t);
    std::array<double, 3> weights{};
    double avail = 0.0;
    for (int c = 0; c < 3; ++c) {
        weights[static_cast<std::size_t>(c)] =
            by_category[static_cast<std::size_t>(c)].empty()
                ? 0.0
                : opts.category_mixture[static_cast<std::size_t>(c)];
        avail += weights[static_cast<std::size_t>(c)];
    }
    if (avail <= 0.0) throw DataError("no applicable template for chart");

    Rng rng(derive_seed(seed, 0x9A6E));
    const int ns = static_cast<int>(spec.series.size());
    const int nc = static_cast<int>(spec.x_categories.size());

    std::vector<QAItem> items;
    for (int i = 0; i < per_chart; ++i) {
        for (int attempt = 0; attempt < 40; ++attempt) {
            double u = rng.uniform() * avail;
            int cat = 0;
            while (cat < 2 && u >= weights[static_cast<std::size_t>(cat)]) {
                u -= weights[static_cast<std::size_t>(cat)];
                ++cat;
            }
            const auto& pool = by_category[static_cast<std::size_t>(cat)];
            const QaTemplate& tmpl = *pool[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];

            SlotBindings slots;
            for (const std::string& name : tmpl.slots) {
                if (name == "series")
                    slots.series_a = static_cast<int>(rng.uniform_int(0, ns - 1));
                else if (name == "category" || name == "category_a")
                    slots.category_a = static_cast<int>(rng.uniform_int(0, nc - 1));
                else if (name == "category_b")
                    slots.category_b = static_cast<int>(rng.uniform_int(0, nc - 2));
                else if (name == "axis")
                    slots.axis = static_cast<int>(rng.uniform_int(0, 1));
                else if (name == "extremum")
                    slots.extremum = static_cast<int>(rng.uniform_int(0, 1));
            }
            if (slots.category_b >= 0 && slots.category_b >= slots.category_a)
                ++slots.category_b;  // distinct pair drawn without rejection

            OracleResult ans;
            try {
                ans = oracle_answer(spec, tmpl.template_id, slots);
            } catch (const DataError&) {
                continue;  // ambiguous instantiation, redraw
            }

            std::vector<std::size_t> surface_pool;
            for (std::size_t s = 0; s < tmpl.surfaces.size(); ++s) {
                const bool held = tmpl.surfaces[s].held_out;
                if (opts.surface_mode == SurfaceMode::held_out ? held : !held)
                    surface_pool.push_back(s);
            }
            if (surface_pool.empty())
                for (std::size_t s = 0; s < tmpl.surfaces.size(); ++s)
                    if (!tmpl.surfaces[s].held_out) surface_pool.push_back(s);
            std::size_t chosen = surface_pool.front();
            if (opts.surface_mode != SurfaceMode::train_only)
                chosen = surface_pool[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<std::int64_t>(surface_pool.size()) - 1))];

            QAItem item;
            item.qa_id = static_cast<std::int64_t>(items.size());
            item.chart_id = spec.chart_id;
            item.category = tmpl.category;
            item.template_id = tmpl.template_id;
            item.question_text = render_question(tmpl.surfaces[chosen].text, spec, slots);
            item.answer_kind = ans.kind;
            item.answer_text = ans.text;
            item.answer_value = ans.value;
            validate(item);
            items.push_back(std::move(item));
            break;
        }
    }
    return items;
}

QAItem paraphrase(const QAItem& item, const TemplateCatalog& catalog, std::uint64_t seed,
                  bool include_held_out) {
    const QaTemplate& tmpl = catalog.find(item.template_id);
    if (tmpl.surfaces.size() < 2)
        throw ConfigError(item.template_id + ": paraphrase needs at least two surfaces");

    std::optional<std::map<std::string, std::string>> captures;
    std::size_t origin = tmpl.surfaces.size();
    for (std::size_t s = 0; s < tmpl.surfaces.size(); ++s) {
        captures = match_surface(tmpl.surfaces[s].text, item.question_text);
        if (captures) {
            origin = s;
            break;
        }
    }
    if (!captures) throw DataError("question does not match any surface of " + item.template_id);

    std::vector<std::size_t> candidates;
    for (std::size_t s = 0; s < tmpl.surfaces.size(); ++s)
        if (s != origin && (include_held_out || !tmpl.surfaces[s].held_out)) candidates.push_back(s);
    if (candidates.empty()) throw DataError(item.template_id + ": no alternative surface available");

    Rng rng(derive_seed(seed, 0x9B01));
    const std::size_t pick = candidates[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];

    QAItem out = item;
    out.question_text = substitute_captures(tmpl.surfaces[pick].text, *captures);
    validate(out);
    return out;
}

Json to_json(const QAItem& item) {
    Json j;
    j["qa_id"] = item.qa_id;
    j["chart_id"] = item.chart_id;
    j["category"] = to_string(item.category);
    j["template_id"] = item.template_id;
    j["question_text"] = item.question_text;
    j["answer_kind"] = to_string(item.answer_kind);
    if (item.answer_text) j["answer_text"] = *item.answer_text;
    if (item.answer_value) j["answer_value"] = *item.answer_value;
    return j;
}

QAItem qa_item_from_json(const Json& j) {
    QAItem item;
    item.qa_id = j.at("qa_id").get<std::int64_t>();
    item.chart_id = j.at("chart_id").get<std::int64_t>();
    item.category = qa_category_from_string(j.at("category").get<std::string>());
    item.template_id = j.at("template_id").get<std::string>();
    item.question_text = j.at("question_text").get<std::string>();
    item.answer_kind = answer_kind_from_string(j.at("answer_kind").get<std::string>());
    if (j.contains("answer_text")) item.answer_text = j["answer_text"].get<std::string>();
    if (j.contains("answer_value")) item.answer_value = j["answer_value"].get<double>();
    validate(item);
    return item;
}

void write_qa_items(const std::string& path, const std::vector<QAItem>& items) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path);
    for (const QAItem& item : items) {
        Json j = to_json(item);
        j["format_version"] = 1;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

std::vector<QAItem> read_qa_items(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path);
    std::vector<QAItem> items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const Json j = Json::parse(line);
            if (j.at("format_version").get<int>() != 1) throw DataError("unsupported format_version");
            items.push_back(qa_item_from_json(j));
        } catch (const DataError&) {
            throw;
        } catch (const std::exception& ex) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + ex.what());
        }
    }
    return items;
}

namespace {

Json to_json(const QaTemplate& t) {
    Json j;
    j["template_id"] = t.template_id;
    j["category"] = to_string(t.category);
    j["answer_kind"] = to_string(t.answer_kind);
    j["slots"] = t.slots;
    Json types = Json::array();
    for (ChartType ct : t.chart_types) types.push_back(to_string(ct));
    j["chart_types"] = std::move(types);
    j["min_series"] = t.min_series;
    Json surfaces = Json::array();
    for (const Surface& s : t.surfaces)
        surfaces.push_back(Json{{"text", s.text}, {"held_out", s.held_out}});
    j["surfaces"] = std::move(surfaces);
    return j;
}

QaTemplate template_from_json(const Json& j) {
    QaTemplate t;
    t.template_id = j.at("template_id").get<std::string>();
    t.category = qa_category_from_string(j.at("category").get<std::string>());
    t.answer_kind = answer_kind_from_string(j.at("answer_kind").get<std::string>());
    t.slots = j.at("slots").get<std::vector<std::string>>();
    for (const Json& ct : j.at("chart_types"))
        t.chart_types.push_back(chart_type_from_string(ct.get<std::string>()));
    t.min_series = j.at("min_series").get<int>();
    for (const Json& s : j.at("surfaces"))
        t.surfaces.push_back({s.at("text").get<std::string>(), s.at("held_out").get<bool>()});
    return t;
}

}  // namespace

void save_catalog(const std::string& path, const TemplateCatalog& catalog) {
    validate(catalog);
    Json j;
    j["format_version"] = 1;
    Json arr = Json::array();
    for (const QaTemplate& t : catalog.templates) arr.push_back(to_json(t));
    j["templates"] = std::move(arr);
    write_text_file(path, j.dump(2) + "\n");
}

TemplateCatalog load_catalog(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_text_file(path));
    } catch (const std::exception& ex) {
        throw DataError(path + ": " + ex.what());
    }
    if (j.at("format_version").get<int>() != 1)
        throw DataError(path + ": unsupported format_version");
    TemplateCatalog catalog;
    for (const Json& jt : j.at("templates")) catalog.templates.push_back(template_from_json(jt));
    validate(catalog);
    return catalog;
}

}  // namespace crct
