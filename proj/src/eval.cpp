#include "crct/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

#include "crct/common.hpp"

namespace crct {

std::uint64_t detection_seed(std::uint64_t base, std::int64_t chart_id) {
    return derive_seed(base, 0xE7A1, static_cast<std::uint64_t>(chart_id));
}

namespace {

constexpr double kErEdges[] = {0.05, 0.10, 0.20, 0.50, 1.00};
const char* kErLabels[] = {"<=5%", "5-10%", "10-20%", "20-50%", "50-100%", ">100%"};

int er_bucket(double error_ratio) {
    for (int i = 0; i < 5; ++i)
        if (error_ratio <= kErEdges[i]) return i;
    return 5;
}

double reg_readout(const Scorer& scorer, const EncodedSample& sample) {
    if (scorer.reg_params.has_value()) {
        const ModelConfig& cfg = scorer.reg_cfg.has_value() ? *scorer.reg_cfg : scorer.cfg;
        return heads(encode(sample, *scorer.reg_params, cfg), *scorer.reg_params, cfg)
            .reg_value.item();
    }
    return 0.0;  // unified pipeline reads the value during scoring instead
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace

std::vector<std::string> fixed_vocab_answers() {
    std::vector<std::string> out = {"Yes", "No"};
    for (int i = 0; i <= 20; ++i) out.push_back(std::to_string(i));
    return out;
}

std::vector<AnswerCandidate> candidate_set(const ChartSpec& spec,
                                           const std::vector<Detection>& dets) {
    (void)spec;
    std::vector<AnswerCandidate> out;
    std::set<std::string> seen;
    const auto push = [&](const std::string& surface, AnswerCandidate::Origin origin) {
        if (seen.insert(normalize_answer(surface)).second) out.push_back({surface, origin});
    };
    for (const std::string& s : fixed_vocab_answers())
        push(s, AnswerCandidate::Origin::fixed_vocab);
    for (const Detection& d : dets)
        if (is_textual_class(d.element_class) && d.text.has_value())
            push(*d.text, AnswerCandidate::Origin::chart_oov);
    out.push_back({kRegToken, AnswerCandidate::Origin::regression_flag});
    return out;
}

Prediction predict(const Scorer& scorer, const ChartSpec& spec,
                   const std::vector<Detection>& dets, const std::string& question) {
    const std::vector<AnswerCandidate> candidates = candidate_set(spec, dets);
    if (candidates.empty()) throw DataError("predict: empty candidate set");
    NoGradGuard guard;
    Prediction pred;
    pred.all_scores.reserve(candidates.size());
    int best = -1;
    double best_score = 0.0;
    double flag_raw_reg = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const AnswerCandidate& cand = candidates[i];
        const EncodedSample sample = encode_sample(spec, dets, question, cand.surface,
                                                   scorer.vocab, scorer.encode_opts);
        const HeadOutputs out = heads(encode(sample, scorer.params, scorer.cfg), scorer.params,
                                      scorer.cfg);
        const double score = out.align_score.item();
        if (cand.origin == AnswerCandidate::Origin::regression_flag)
            flag_raw_reg = scorer.reg_params.has_value() ? reg_readout(scorer, sample)
                                                         : out.reg_value.item();
        pred.all_scores.emplace_back(cand, score);
        if (best < 0 || score > best_score) {
            best = static_cast<int>(i);
            best_score = score;
        }
    }
    pred.chosen = candidates[static_cast<std::size_t>(best)];
    pred.align_score = best_score;
    if (pred.chosen.origin == AnswerCandidate::Origin::regression_flag)
        pred.numeric_value = denormalize_value(flag_raw_reg, spec.y_axis);
    return pred;
}

bool ratio_correct(double pred, double gt, double tol) {
    if (!std::isfinite(gt)) throw NumericalError("ratio_correct: ground truth is not finite");
    if (tol < 0.0) throw ConfigError("ratio_correct: negative tolerance");
    if (!std::isfinite(pred)) return false;
    return std::fabs(pred - gt) <= tol * std::fabs(gt);
}

bool tick_correct(double pred, double gt, double f, double sub_tick) {
    if (sub_tick <= 0.0) throw ConfigError("tick_correct: sub_tick must be positive");
    if (f < 0.0) throw ConfigError("tick_correct: negative tolerance fraction");
    if (!std::isfinite(gt)) throw NumericalError("tick_correct: ground truth is not finite");
    if (!std::isfinite(pred)) return false;
    return std::fabs(pred - gt) <= f * sub_tick;
}

Report evaluate(const Scorer& scorer, const std::vector<ChartRecord>& charts,
                const std::vector<QAItem>& items, const EvalOptions& opts) {
    return evaluate_with(
        [&](const ChartSpec& spec, const std::vector<Detection>& dets,
            const std::string& question) { return predict(scorer, spec, dets, question); },
        charts, items, opts);
}

Report evaluate_with(const PredictFn& predictor, const std::vector<ChartRecord>& charts,
                     const std::vector<QAItem>& items, const EvalOptions& opts) {
    if (items.empty()) throw DataError("evaluate: empty test set");
    std::unordered_map<std::int64_t, const ChartRecord*> by_id;
    for (const ChartRecord& rec : charts) by_id[rec.chart.chart_id] = &rec;
    std::unordered_map<std::int64_t, std::vector<Detection>> det_cache;

    Report rep;
    rep.tolerance_fractions = opts.tolerance_fractions;
    rep.tick_accuracy.assign(opts.tolerance_fractions.size(), 0.0);
    rep.er_bucket_labels.assign(std::begin(kErLabels), std::end(kErLabels));
    rep.er_bucket_counts.assign(6, 0);
    std::vector<int> tick_hits(opts.tolerance_fractions.size(), 0);

    for (const QAItem& item : items) {
        const auto it = by_id.find(item.chart_id);
        if (it == by_id.end())
            throw DataError("qa item " + std::to_string(item.qa_id) +
                            " references unknown chart " + std::to_string(item.chart_id));
        const ChartRecord& rec = *it->second;
        auto det_it = det_cache.find(item.chart_id);
        if (det_it == det_cache.end()) {
            const std::uint64_t seed = detection_seed(opts.detect_seed, item.chart_id);
            det_it = det_cache
                         .emplace(item.chart_id,
                                  oracle_detect(rec.elements, opts.jitter, seed))
                         .first;
        }
        const Prediction pred = predictor(rec.chart, det_it->second, item.question_text);

        const bool chose_flag =
            pred.chosen.origin == AnswerCandidate::Origin::regression_flag;
        bool correct = false;
        if (item.answer_kind == AnswerKind::numeric) {
            const double gt = item.answer_value.value();
            const double got = pred.numeric_value.value_or(
                std::numeric_limits<double>::quiet_NaN());
            correct = chose_flag && ratio_correct(got, gt, 0.05);

            rep.numeric_total += 1;
            if (correct) rep.numeric_ratio_correct += 1;
            for (std::size_t f = 0; f < opts.tolerance_fractions.size(); ++f)
                if (chose_flag && tick_correct(got, gt, opts.tolerance_fractions[f],
                                               rec.chart.y_axis.sub_tick_spacing))
                    tick_hits[f] += 1;
            double er;
            if (!chose_flag || !pred.numeric_value.has_value() || !std::isfinite(got))
                er = std::numeric_limits<double>::infinity();
            else if (got == gt)
                er = 0.0;
            else
                er = gt == 0.0 ? std::numeric_limits<double>::infinity()
                               : std::fabs(got - gt) / std::fabs(gt);
            rep.er_bucket_counts[static_cast<std::size_t>(er_bucket(er))] += 1;
        } else {
            correct = !chose_flag && item.answer_text.has_value() &&
                      normalize_answer(pred.chosen.surface) ==
                          normalize_answer(*item.answer_text);
        }

        CategoryStats* cat = nullptr;
        switch (item.category) {
            case QaCategory::structural: cat = &rep.structural; break;
            case QaCategory::data_retrieval: cat = &rep.data_retrieval; break;
            case QaCategory::reasoning: cat = &rep.reasoning; break;
        }
        cat->total += 1;
        rep.overall.total += 1;
        if (correct) {
            cat->correct += 1;
            rep.overall.correct += 1;
        }
    }
    for (std::size_t f = 0; f < tick_hits.size(); ++f)
        rep.tick_accuracy[f] =
            rep.numeric_total == 0 ? 0.0
                                   : static_cast<double>(tick_hits[f]) / rep.numeric_total;
    return rep;
}

void write_report_csv(const std::string& path, const Report& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open report for writing: " + path);
    f << "section,label,total,correct,value\n";
    const auto cat_row = [&](const char* label, const CategoryStats& s) {
        f << "category," << label << "," << s.total << "," << s.correct << ","
          << format_double(s.accuracy()) << "\n";
    };
    cat_row("S", report.structural);
    cat_row("D", report.data_retrieval);
    cat_row("R", report.reasoning);
    cat_row("overall", report.overall);
    f << "regression,ratio_5pct," << report.numeric_total << "," << report.numeric_ratio_correct
      << ","
      << format_double(report.numeric_total == 0
                           ? 0.0
                           : static_cast<double>(report.numeric_ratio_correct) /
                                 report.numeric_total)
      << "\n";
    for (std::size_t i = 0; i < report.tolerance_fractions.size(); ++i)
        f << "tick,f=" << format_double(report.tolerance_fractions[i]) << ","
          << report.numeric_total << ",," << format_double(report.tick_accuracy[i]) << "\n";
    for (std::size_t i = 0; i < report.er_bucket_labels.size(); ++i)
        f << "error_ratio," << report.er_bucket_labels[i] << "," << report.er_bucket_counts[i]
          << ",,\n";
    f.flush();
    if (!f) throw Error("failed while writing report: " + path);
}

std::vector<ElementSaliency> attribute(const Scorer& scorer, const ChartSpec& spec,
                                       const std::vector<Detection>& dets,
                                       const std::string& question, const std::string& answer,
                                       int m) {
    if (m < 1) throw ConfigError("attribute: step count must be at least 1");
    const std::vector<AnswerCandidate> candidates = candidate_set(spec, dets);
    const std::string norm = normalize_answer(answer);
    const bool known = std::any_of(candidates.begin(), candidates.end(),
                                   [&](const AnswerCandidate& c) {
                                       return normalize_answer(c.surface) == norm;
                                   });
    if (!known) throw DataError("attribute: answer '" + answer + "' is not a candidate");

    const EncodedSample sample =
        encode_sample(spec, dets, question, answer, scorer.vocab, scorer.encode_opts);
    Eigen::ArrayXd base_v, base_t;
    std::vector<int> vshape, tshape;
    {
        NoGradGuard guard;
        const StreamState base = embed_sample(sample, scorer.params, scorer.cfg);
        base_v = base.h_v.value();
        base_t = base.h_t.value();
        vshape = base.h_v.shape();
        tshape = base.h_t.shape();
    }
    Eigen::ArrayXd grad_v = Eigen::ArrayXd::Zero(base_v.size());
    for (int k = 1; k <= m; ++k) {
        const double alpha = static_cast<double>(k) / m;
        const Eigen::ArrayXd sv = base_v * alpha;
        const Eigen::ArrayXd st = base_t * alpha;
        StreamState state;
        state.h_v = Tensor::from_vector(vshape, {sv.data(), sv.data() + sv.size()}, true);
        state.h_t = Tensor::from_vector(tshape, {st.data(), st.data() + st.size()}, true);
        Tensor logit = heads(pool(run_blocks(state, scorer.params, scorer.cfg)), scorer.params,
                             scorer.cfg)
                           .align_logit;
        logit.backward();
        if (state.h_v.has_grad()) grad_v += state.h_v.grad();
    }
    const Eigen::ArrayXd ig = base_v * grad_v / static_cast<double>(m);

    const int d = scorer.cfg.d_model;
    std::vector<ElementSaliency> out;
    double max_s = 0.0;
    for (std::size_t i = 1; i < sample.visual_seq.size(); ++i) {  // row 0 is the global token
        const VisualToken& tok = sample.visual_seq[i];
        double sq = 0.0;
        for (int j = 0; j < d; ++j) {
            const double g = ig[static_cast<std::int64_t>(i) * d + j];
            sq += g * g;
        }
        ElementSaliency s;
        s.source_index = tok.source_index;
        s.element_class = static_cast<ElementClass>(tok.class_id);
        s.bbox = BBox{tok.bbox4[0], tok.bbox4[1], tok.bbox4[2], tok.bbox4[3]};
        s.saliency = std::sqrt(sq);
        max_s = std::max(max_s, s.saliency);
        out.push_back(s);
    }
    if (max_s > 0.0)
        for (ElementSaliency& s : out) s.saliency /= max_s;
    return out;
}

void write_attribution_csv(const std::string& path, const std::vector<ElementSaliency>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open attribution csv for writing: " + path);
    f << "source_index,element_class,x0,y0,x1,y1,saliency\n";
    for (const ElementSaliency& s : rows)
        f << s.source_index << "," << to_string(s.element_class) << ","
          << format_double(s.bbox.x0) << "," << format_double(s.bbox.y0) << ","
          << format_double(s.bbox.x1) << "," << format_double(s.bbox.y1) << ","
          << format_double(s.saliency) << "\n";
    f.flush();
    if (!f) throw Error("failed while writing attribution csv: " + path);
}

}  // namespace crct
