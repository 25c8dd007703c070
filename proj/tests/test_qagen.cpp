#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <set>

#include "crct/qa.hpp"
#include "reference_eval.hpp"

using namespace crct;

namespace {

ChartSpec fixture_chart() {
    ChartSpec spec;
    spec.chart_id = 11;
    spec.chart_type = ChartType::vbar;
    spec.title = "Net exports in Poland";
    spec.x_label = "Years";
    spec.y_label = "net exports";
    spec.x_categories = {"2000", "2001", "2002", "2003"};
    spec.y_axis = {0.0, 100.0, 20.0, 10.0, {"0", "20", "40", "60", "80", "100"}};
    spec.series.push_back({"male", {0.8, 0.2, 0.2}, {30.0, 70.0, 55.0, 12.0}});
    spec.series.push_back({"female", {0.2, 0.4, 0.7}, {44.0, 18.0, 90.0, 61.0}});
    return spec;
}

}  // namespace

TEST_CASE("oracle answers follow from direct enumeration") {
    const ChartSpec spec = fixture_chart();

    SUBCASE("argmax over years") {
        ChartSpec two = spec;
        two.x_categories = {"2000", "2001"};
        for (auto& s : two.series) s.values.resize(2);
        two.series[0].values = {3.0, 7.0};
        SlotBindings slots;
        slots.series_a = 0;
        slots.extremum = 1;
        const OracleResult r = oracle_answer(two, "D4_arg_extremum", slots);
        CHECK(r.kind == AnswerKind::chart_text);
        CHECK(*r.text == "2001");
    }
    SUBCASE("average stays in data units") {
        ChartSpec two = spec;
        two.x_categories = {"2000", "2001"};
        for (auto& s : two.series) s.values.resize(2);
        two.series[0].values = {2.0, 4.0};
        SlotBindings slots;
        slots.series_a = 0;
        const OracleResult r = oracle_answer(two, "R1_average", slots);
        CHECK(r.kind == AnswerKind::numeric);
        CHECK(*r.value == doctest::Approx(3.0));
        CHECK(!r.text.has_value());
    }
    SUBCASE("axis label retrieval") {
        SlotBindings slots;
        slots.axis = 0;
        const OracleResult r = oracle_answer(spec, "D2_axis_label", slots);
        CHECK(r.kind == AnswerKind::chart_text);
        CHECK(*r.text == "Years");
    }
    SUBCASE("difference and comparison") {
        SlotBindings slots;
        slots.series_a = 1;
        slots.category_a = 2;
        slots.category_b = 1;
        CHECK(*oracle_answer(spec, "R2_difference", slots).value == doctest::Approx(72.0));
        CHECK(*oracle_answer(spec, "R4_comparison", slots).text == "Yes");
        std::swap(slots.category_a, slots.category_b);
        CHECK(*oracle_answer(spec, "R4_comparison", slots).text == "No");
    }
    SUBCASE("counts are classification answers") {
        const OracleResult r = oracle_answer(spec, "S4_tick_count", SlotBindings{});
        CHECK(r.kind == AnswerKind::fixed_vocab);
        CHECK(*r.text == "6");
    }
    SUBCASE("bad slots are rejected") {
        SlotBindings slots;
        slots.series_a = 5;
        CHECK_THROWS_AS(oracle_answer(spec, "R1_average", slots), DataError);
        slots.series_a = 0;
        slots.category_a = 99;
        CHECK_THROWS_AS(oracle_answer(spec, "D3_value_at", slots), DataError);
        CHECK_THROWS_AS(oracle_answer(spec, "no_such_template", SlotBindings{}), ConfigError);
    }
    SUBCASE("ties refuse to pick a winner") {
        ChartSpec tied = spec;
        tied.series[0].values = {30.0, 30.0, 30.0, 30.0};
        SlotBindings slots;
        slots.series_a = 0;
        slots.extremum = 1;
        CHECK_THROWS_AS(oracle_answer(tied, "D4_arg_extremum", slots), DataError);
    }
}

TEST_CASE("single-series bar chart counts one bar colour") {
    ChartSpec spec = fixture_chart();
    spec.series.resize(1);
    const OracleResult r = oracle_answer(spec, "S1_bar_colours", SlotBindings{});
    CHECK(r.kind == AnswerKind::fixed_vocab);
    CHECK(*r.text == "1");

    const TemplateCatalog catalog = default_template_catalog();
    bool saw_surface = false;
    for (std::uint64_t seed = 0; seed < 50 && !saw_surface; ++seed)
        for (const QAItem& item : generate_questions(spec, catalog, seed, 8))
            if (item.template_id == "S1_bar_colours") {
                CHECK(item.question_text == "How many different coloured bars are there?");
                CHECK(*item.answer_text == "1");
                saw_surface = true;
            }
    CHECK(saw_surface);
}

TEST_CASE("generation is deterministic per seed") {
    const ChartSpec spec = fixture_chart();
    const TemplateCatalog catalog = default_template_catalog();
    const auto a = generate_questions(spec, catalog, 77, 50);
    const auto b = generate_questions(spec, catalog, 77, 50);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(to_json(a[i]).dump() == to_json(b[i]).dump());
    const auto c = generate_questions(spec, catalog, 78, 50);
    bool any_diff = c.size() != a.size();
    for (std::size_t i = 0; !any_diff && i < a.size(); ++i)
        any_diff = to_json(a[i]).dump() != to_json(c[i]).dump();
    CHECK(any_diff);
}

TEST_CASE("every generated item survives an independent recomputation") {
    const TemplateCatalog catalog = default_template_catalog();
    const GenConfig gcfg = default_gen_config();
    int total = 0;
    for (std::uint64_t chart = 0; chart < 500; ++chart) {
        const ChartSpec spec = synthesize_chart(chart, gcfg);
        const auto items =
            generate_questions(spec, catalog, derive_seed(9, 1, chart), 20);
        for (const QAItem& item : items) {
            ++total;
            CHECK(refeval::agrees(item, spec));
        }
    }
    CHECK(total >= 9000);
}

TEST_CASE("category mixture is honoured within two percentage points") {
    const TemplateCatalog catalog = default_template_catalog();
    const GenConfig gcfg = default_gen_config();
    QaOptions opts;
    opts.category_mixture = {0.5, 0.3, 0.2};
    std::array<int, 3> counts{};
    int total = 0;
    for (std::uint64_t chart = 0; chart < 600; ++chart) {
        const ChartSpec spec = synthesize_chart(chart + 5000, gcfg);
        for (const QAItem& item :
             generate_questions(spec, catalog, derive_seed(4, 2, chart), 20, opts)) {
            counts[static_cast<std::size_t>(item.category)]++;
            ++total;
        }
    }
    REQUIRE(total >= 10000);
    for (int c = 0; c < 3; ++c) {
        const double freq = static_cast<double>(counts[static_cast<std::size_t>(c)]) / total;
        CHECK(std::fabs(freq - opts.category_mixture[static_cast<std::size_t>(c)]) < 0.02);
    }
}

TEST_CASE("inapplicable templates never leak into the output") {
    const TemplateCatalog catalog = default_template_catalog();
    GenConfig gcfg = default_gen_config();
    gcfg.chart_types = {ChartType::line};
    gcfg.series_min = 1;
    gcfg.series_max = 1;
    for (std::uint64_t chart = 0; chart < 40; ++chart) {
        const ChartSpec spec = synthesize_chart(chart, gcfg);
        for (const QAItem& item : generate_questions(spec, catalog, chart, 30)) {
            CHECK(item.template_id != "S1_bar_colours");
            CHECK(item.template_id != "R3_series_extremum");
        }
    }
    gcfg.chart_types = {ChartType::vbar};
    for (std::uint64_t chart = 0; chart < 40; ++chart) {
        const ChartSpec spec = synthesize_chart(chart, gcfg);
        for (const QAItem& item : generate_questions(spec, catalog, chart, 30))
            CHECK(item.template_id != "S2_line_count");
    }
}

TEST_CASE("paraphrase swaps the surface and nothing else") {
    const ChartSpec spec = fixture_chart();
    const TemplateCatalog catalog = default_template_catalog();
    const auto items = generate_questions(spec, catalog, 123, 60);
    REQUIRE(!items.empty());
    for (const QAItem& item : items) {
        const QAItem alt = paraphrase(item, catalog, 55);
        CHECK(alt.question_text != item.question_text);
        CHECK(alt.template_id == item.template_id);
        CHECK(alt.answer_kind == item.answer_kind);
        CHECK(alt.answer_text == item.answer_text);
        CHECK(alt.answer_value == item.answer_value);
        CHECK(paraphrase(item, catalog, 55).question_text == alt.question_text);
    }
}

TEST_CASE("axis question paraphrases into the short form") {
    const ChartSpec spec = fixture_chart();
    QAItem item;
    item.chart_id = spec.chart_id;
    item.category = QaCategory::data_retrieval;
    item.template_id = "D2_axis_label";
    item.question_text = "What is the label or title of the X-axis ?";
    item.answer_kind = AnswerKind::chart_text;
    item.answer_text = "Years";
    const TemplateCatalog catalog = default_template_catalog();
    std::set<std::string> variants;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        variants.insert(paraphrase(item, catalog, seed).question_text);
    CHECK(variants.count("What's the name of the X-axis?") == 1);
    for (const std::string& v : variants) CHECK(v != item.question_text);
}

TEST_CASE("surface matching recovers placeholder fillings") {
    const auto m = match_surface(
        "Is the {series} in {category_a} greater than the {series} in {category_b}?",
        "Is the female in 2002 greater than the female in 2001?");
    REQUIRE(m.has_value());
    CHECK(m->at("series") == "female");
    CHECK(m->at("category_a") == "2002");
    CHECK(m->at("category_b") == "2001");
    CHECK(!match_surface("How many lines are plotted?", "How many bars are plotted?").has_value());
    // inconsistent repeated placeholder
    CHECK(!match_surface(
               "Is the {series} in {category_a} greater than the {series} in {category_b}?",
               "Is the male in 2002 greater than the female in 2001?")
               .has_value());
}

TEST_CASE("paraphrase rejects templates without alternatives") {
    TemplateCatalog catalog = default_template_catalog();
    catalog.templates[0].surfaces.resize(1);
    QAItem item;
    item.template_id = catalog.templates[0].template_id;
    item.question_text = catalog.templates[0].surfaces[0].text;
    item.answer_kind = AnswerKind::fixed_vocab;
    item.answer_text = "2";
    CHECK_THROWS_AS(paraphrase(item, catalog, 1), ConfigError);
}

TEST_CASE("held-out surfaces stay out of training text") {
    const TemplateCatalog catalog = default_template_catalog();
    std::set<std::string> held;
    for (const QaTemplate& t : catalog.templates)
        for (const Surface& s : t.surfaces)
            if (s.held_out) held.insert(s.text.substr(0, s.text.find('{')));
    const GenConfig gcfg = default_gen_config();
    QaOptions train, test;
    test.surface_mode = SurfaceMode::held_out;
    int held_hits = 0;
    for (std::uint64_t chart = 0; chart < 30; ++chart) {
        const ChartSpec spec = synthesize_chart(chart, gcfg);
        for (const QAItem& item : generate_questions(spec, catalog, chart, 20, train))
            for (const std::string& prefix : held)
                CHECK(item.question_text.rfind(prefix, 0) != 0);
        for (const QAItem& item : generate_questions(spec, catalog, chart, 20, test)) {
            for (const std::string& prefix : held)
                if (item.question_text.rfind(prefix, 0) == 0) ++held_hits;
        }
    }
    CHECK(held_hits > 0);
}

TEST_CASE("catalog and QA files round trip") {
    const TemplateCatalog catalog = default_template_catalog();
    save_catalog("qa_catalog_roundtrip.json", catalog);
    const TemplateCatalog back = load_catalog("qa_catalog_roundtrip.json");
    REQUIRE(back.templates.size() == catalog.templates.size());
    for (std::size_t i = 0; i < catalog.templates.size(); ++i) {
        CHECK(back.templates[i].template_id == catalog.templates[i].template_id);
        CHECK(back.templates[i].surfaces.size() == catalog.templates[i].surfaces.size());
    }

    const ChartSpec spec = fixture_chart();
    const auto items = generate_questions(spec, catalog, 3, 25);
    write_qa_items("qa_items_roundtrip.jsonl", items);
    const auto back_items = read_qa_items("qa_items_roundtrip.jsonl");
    REQUIRE(back_items.size() == items.size());
    for (std::size_t i = 0; i < items.size(); ++i)
        CHECK(to_json(items[i]).dump() == to_json(back_items[i]).dump());
}

TEST_CASE("catalog validation flags defects") {
    TemplateCatalog catalog = default_template_catalog();
    catalog.templates[1].template_id = catalog.templates[0].template_id;
    CHECK_THROWS_AS(validate(catalog), ConfigError);

    catalog = default_template_catalog();
    catalog.templates[2].surfaces.clear();
    CHECK_THROWS_AS(validate(catalog), ConfigError);

    catalog = default_template_catalog();
    for (Surface& s : catalog.templates[3].surfaces) s.held_out = true;
    CHECK_THROWS_AS(validate(catalog), ConfigError);

    catalog = default_template_catalog();
    catalog.templates[4].slots.push_back("sideways");
    CHECK_THROWS_AS(validate(catalog), ConfigError);
}

TEST_CASE("item validation enforces answer field pairing") {
    QAItem item;
    item.template_id = "D1_title";
    item.question_text = "What is the title of the graph?";
    item.answer_kind = AnswerKind::numeric;
    item.answer_text = "oops";
    CHECK_THROWS_AS(validate(item), DataError);
    item.answer_text.reset();
    item.answer_value = 4.5;
    CHECK_NOTHROW(validate(item));
    item.answer_kind = AnswerKind::chart_text;
    CHECK_THROWS_AS(validate(item), DataError);
}
