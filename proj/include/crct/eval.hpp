#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crct/chart.hpp"
#include "crct/featurize.hpp"
#include "crct/io.hpp"
#include "crct/model.hpp"
#include "crct/qa.hpp"

namespace crct {

struct AnswerCandidate {
    enum class Origin { fixed_vocab, chart_oov, regression_flag };
    std::string surface;
    Origin origin = Origin::fixed_vocab;
};

// Yes, No, and the integers 0..20 as strings
std::vector<std::string> fixed_vocab_answers();

// fixed vocab, then surviving chart texts in detection order, then the
// regression flag; deduplicated case-insensitively
std::vector<AnswerCandidate> candidate_set(const ChartSpec& spec,
                                           const std::vector<Detection>& dets);

// a trained pipeline bundled with everything needed to score candidates;
// reg_* present only for the split-pipeline ablation, which routes numeric
// readout through the second parameter set
struct Scorer {
    ModelConfig cfg;
    ParamStore params;
    Vocab vocab;
    EncodeOptions encode_opts;
    std::optional<ModelConfig> reg_cfg;
    std::optional<ParamStore> reg_params;
};

struct Prediction {
    AnswerCandidate chosen;
    double align_score = 0.0;
    std::optional<double> numeric_value;  // data units, present iff the flag won
    std::vector<std::pair<AnswerCandidate, double>> all_scores;
};

Prediction predict(const Scorer& scorer, const ChartSpec& spec,
                   const std::vector<Detection>& dets, const std::string& question);

bool ratio_correct(double pred, double gt, double tol = 0.05);
bool tick_correct(double pred, double gt, double f, double sub_tick);

struct CategoryStats {
    int total = 0;
    int correct = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct Report {
    CategoryStats structural, data_retrieval, reasoning, overall;
    int numeric_total = 0;
    int numeric_ratio_correct = 0;  // within the 5% ratio tolerance
    std::vector<double> tolerance_fractions;
    std::vector<double> tick_accuracy;  // one entry per fraction
    std::vector<std::string> er_bucket_labels;
    std::vector<int> er_bucket_counts;
};

struct EvalOptions {
    std::vector<double> tolerance_fractions = {0.0, 0.125, 0.25, 0.5, 1.0, 2.0};
    JitterConfig jitter;
    std::uint64_t detect_seed = 0;
};

// per-chart detector seed used throughout evaluation; exposed so every caller
// regenerates the exact detections a given report was scored on
std::uint64_t detection_seed(std::uint64_t base, std::int64_t chart_id);

Report evaluate(const Scorer& scorer, const std::vector<ChartRecord>& charts,
                const std::vector<QAItem>& items, const EvalOptions& opts = {});

// same reduction with a caller-supplied predictor; lets tests pin the report
// arithmetic against stub models with known behavior
using PredictFn = std::function<Prediction(const ChartSpec&, const std::vector<Detection>&,
                                           const std::string&)>;
Report evaluate_with(const PredictFn& predictor, const std::vector<ChartRecord>& charts,
                     const std::vector<QAItem>& items, const EvalOptions& opts = {});

void write_report_csv(const std::string& path, const Report& report);

struct ElementSaliency {
    int source_index = -1;  // index into the annotated element list
    ElementClass element_class = ElementClass::title;
    BBox bbox;
    double saliency = 0.0;  // in [0,1], max element exactly 1 when non-degenerate
};

// integrated gradients of the alignment logit over the straight path from zero
// embeddings, m Riemann steps, reduced to one score per detected element
std::vector<ElementSaliency> attribute(const Scorer& scorer, const ChartSpec& spec,
                                       const std::vector<Detection>& dets,
                                       const std::string& question, const std::string& answer,
                                       int m = 16);

void write_attribution_csv(const std::string& path, const std::vector<ElementSaliency>& rows);

}  // namespace crct
