#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crct/chart.hpp"
#include "crct/io.hpp"

namespace crct {

enum class QaCategory { structural, data_retrieval, reasoning };
enum class AnswerKind { fixed_vocab, chart_text, numeric };

const char* to_string(QaCategory c);
const char* to_string(AnswerKind k);
QaCategory qa_category_from_string(const std::string& s);
AnswerKind answer_kind_from_string(const std::string& s);

struct QAItem {
    std::int64_t qa_id = 0;
    std::int64_t chart_id = 0;
    QaCategory category = QaCategory::structural;
    std::string template_id;
    std::string question_text;
    AnswerKind answer_kind = AnswerKind::fixed_vocab;
    std::optional<std::string> answer_text;
    std::optional<double> answer_value;  // data units
};

void validate(const QAItem& item);

struct Surface {
    std::string text;
    bool held_out = false;
};

struct QaTemplate {
    std::string template_id;
    QaCategory category = QaCategory::structural;
    AnswerKind answer_kind = AnswerKind::fixed_vocab;  // kind before small-integer routing
    std::vector<std::string> slots;
    std::vector<ChartType> chart_types;  // empty means any
    int min_series = 1;
    std::vector<Surface> surfaces;
};

struct TemplateCatalog {
    std::vector<QaTemplate> templates;
    const QaTemplate& find(const std::string& template_id) const;
};

void validate(const TemplateCatalog& catalog);
TemplateCatalog default_template_catalog();
void save_catalog(const std::string& path, const TemplateCatalog& catalog);
TemplateCatalog load_catalog(const std::string& path);

struct SlotBindings {
    int series_a = -1;
    int category_a = -1;
    int category_b = -1;
    int axis = -1;      // 0 = x, 1 = y
    int extremum = -1;  // 0 = min, 1 = max
};

struct OracleResult {
    AnswerKind kind = AnswerKind::fixed_vocab;
    std::optional<std::string> text;
    std::optional<double> value;
};

// ground truth by direct enumeration over the chart's stored values
OracleResult oracle_answer(const ChartSpec& spec, const std::string& template_id,
                           const SlotBindings& slots);

bool template_applicable(const QaTemplate& tmpl, const ChartSpec& spec);

std::string render_question(const std::string& surface, const ChartSpec& spec,
                            const SlotBindings& slots);

enum class SurfaceMode { train_only, mixed, held_out };

struct QaOptions {
    std::array<double, 3> category_mixture{1.0 / 3, 1.0 / 3, 1.0 / 3};
    SurfaceMode surface_mode = SurfaceMode::train_only;
};

std::vector<QAItem> generate_questions(const ChartSpec& spec, const TemplateCatalog& catalog,
                                       std::uint64_t seed, int per_chart,
                                       const QaOptions& opts = {});

// swaps the question for another surface form of the same template,
// keeping the answer untouched
QAItem paraphrase(const QAItem& item, const TemplateCatalog& catalog, std::uint64_t seed,
                  bool include_held_out = false);

// recovers which surface produced a question and what filled its placeholders
std::optional<std::map<std::string, std::string>> match_surface(const std::string& surface,
                                                                const std::string& question);

Json to_json(const QAItem& item);
QAItem qa_item_from_json(const Json& j);
void write_qa_items(const std::string& path, const std::vector<QAItem>& items);
std::vector<QAItem> read_qa_items(const std::string& path);

}  // namespace crct
