#include "crct/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "crct/common.hpp"
#include "crct/eval.hpp"
#include "crct/plot.hpp"
#include "crct/qa.hpp"
#include "crct/train.hpp"

namespace crct {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kChartStream = 0x47C1;
constexpr std::uint64_t kQaStream = 0x47C2;

const char kChartsFile[] = "charts.v1.jsonl";
const char kQaFile[] = "qa.v1.jsonl";

// every settable value for every subcommand; only the active command's
// registered subset is merged, echoed, and used
struct CliState {
    std::uint64_t seed = 0;
    std::string config_path;
    std::string data_dir = "data";
    std::string model_dir = "model";
    std::string checkpoint = "latest";

    // one output directory per subcommand so each keeps its own default
    std::string out_gen = "data";
    std::string out_train = "model";
    std::string out_eval = "eval_out";
    std::string out_attr = "attribution";
    std::string out_plot = "plots";

    int n_charts = 0;
    int qa_per_chart = 8;
    bool force = false;

    int epochs = 20;
    double base_lr = 1e-3;
    double warmup_fraction = 0.1;
    int batch_size = 16;
    int negatives = 3;
    double clip_norm = 1.0;
    double jitter_sigma = 0.0;
    double jitter_drop = 0.0;
    bool drop_legend_marker = false;
    bool drop_text_class_emb = false;
    bool drop_visual_class_emb = false;
    bool bbox_only = false;
    bool two_pipelines = false;
    std::string resume;

    int d_model = 128;
    int n_blocks = 2;
    int n_heads = 4;
    int d_ff = 512;
    int max_positions = 128;
    double lambda1 = 1.0;
    double lambda2 = 1.0;

    std::int64_t chart_id = -1;
    std::int64_t qa_id = -1;
    std::string question;
    int steps = 16;

    std::ostream* out = nullptr;
};

// flag <-> config-file key <-> effective-config echo, one entry per option
struct Registry {
    struct Entry {
        CLI::Option* opt = nullptr;
        std::function<void(const Json&)> apply;
        std::function<Json()> dump;
    };
    std::map<std::string, Entry> entries;
    CLI::Option* seed_opt = nullptr;
};

std::string key_of(const std::string& flag) {
    std::size_t i = 0;
    while (i < flag.size() && flag[i] == '-') ++i;
    return flag.substr(i);
}

template <class T>
CLI::Option* add_cfg(CLI::App& sub, Registry& reg, const std::string& flag, T& target,
                     const std::string& desc) {
    CLI::Option* opt = sub.add_option(flag, target, desc)->capture_default_str();
    reg.entries[key_of(flag)] = {opt, [&target](const Json& v) { target = v.get<T>(); },
                                 [&target] { return Json(target); }};
    return opt;
}

CLI::Option* add_cfg_flag(CLI::App& sub, Registry& reg, const std::string& flag, bool& target,
                          const std::string& desc) {
    CLI::Option* opt = sub.add_flag(flag, target, desc + " (default: off)");
    reg.entries[key_of(flag)] = {opt, [&target](const Json& v) { target = v.get<bool>(); },
                                 [&target] { return Json(target); }};
    return opt;
}

std::uint64_t parse_seed_env(const char* text) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(text, &end, 10);
    if (end == text || *end != '\0')
        throw ConfigError(std::string("CRCT_SEED must be an unsigned integer, got '") + text +
                          "'");
    return static_cast<std::uint64_t>(v);
}

// precedence: flags beat the config file, the file beats built-in defaults,
// CRCT_SEED fills the seed only when neither source set it
void merge_config(CliState& st, Registry& reg) {
    Json file = Json::object();
    if (!st.config_path.empty()) {
        try {
            file = Json::parse(read_text_file(st.config_path));
        } catch (const Json::parse_error& ex) {
            throw ConfigError(st.config_path + ": " + ex.what());
        }
        if (!file.is_object()) throw ConfigError(st.config_path + ": expected a JSON object");
        for (const auto& [key, value] : file.items()) {
            const auto it = reg.entries.find(key);
            if (it == reg.entries.end())
                throw ConfigError(st.config_path + ": unknown config key '" + key + "'");
            if (it->second.opt->count() > 0) continue;
            try {
                it->second.apply(value);
            } catch (const Json::exception& ex) {
                throw ConfigError(st.config_path + ": bad value for '" + key + "': " + ex.what());
            }
        }
    }
    if (reg.seed_opt->count() == 0 && !file.contains("seed")) {
        if (const char* env = std::getenv("CRCT_SEED")) st.seed = parse_seed_env(env);
    }
}

void echo_config(const Registry& reg, const std::string& dir) {
    Json j = Json::object();
    for (const auto& [key, entry] : reg.entries) j[key] = entry.dump();
    write_text_file(dir + "/effective_config.json", j.dump(2) + "\n");
}

void add_common(CLI::App& sub, Registry& reg, CliState& st) {
    sub.add_option("--config", st.config_path, "JSON config file; flags override its values");
    reg.seed_opt = add_cfg(sub, reg, "--seed", st.seed, "master random seed (env: CRCT_SEED)");
}

std::vector<ChartRecord> load_charts(const std::string& data_dir) {
    const std::string path = data_dir + "/" + kChartsFile;
    if (!fs::exists(path))
        throw DataError("chart dataset not found: " + path + " (run `crct gen` first)");
    return read_chart_records(path);
}

std::vector<QAItem> load_items(const std::string& data_dir) {
    const std::string path = data_dir + "/" + kQaFile;
    if (!fs::exists(path))
        throw DataError("qa dataset not found: " + path + " (run `crct gen` first)");
    return read_qa_items(path);
}

const ChartRecord& chart_by_id(const std::vector<ChartRecord>& charts, std::int64_t id) {
    for (const ChartRecord& rec : charts)
        if (rec.chart.chart_id == id) return rec;
    std::string hint = "available chart ids:";
    const std::size_t shown = std::min<std::size_t>(charts.size(), 10);
    for (std::size_t i = 0; i < shown; ++i)
        hint += " " + std::to_string(charts[i].chart.chart_id);
    if (charts.size() > shown) hint += " ... (" + std::to_string(charts.size()) + " total)";
    throw DataError("unknown chart id " + std::to_string(id) + "; " + hint);
}

const QAItem& item_by_id(const std::vector<QAItem>& items, std::int64_t id) {
    for (const QAItem& item : items)
        if (item.qa_id == id) return item;
    std::string hint = "available qa ids:";
    const std::size_t shown = std::min<std::size_t>(items.size(), 10);
    for (std::size_t i = 0; i < shown; ++i) hint += " " + std::to_string(items[i].qa_id);
    if (items.size() > shown) hint += " ... (" + std::to_string(items.size()) + " total)";
    throw DataError("unknown qa id " + std::to_string(id) + "; " + hint);
}

void require_out_dir(const std::string& dir) {
    if (dir.empty()) throw ConfigError("--out must not be empty");
}

void cmd_gen(CliState& st, Registry& reg) {
    merge_config(st, reg);
    if (st.n_charts < 1) throw ConfigError("--charts must be at least 1");
    if (st.qa_per_chart < 1) throw ConfigError("--qa-per-chart must be at least 1");
    require_out_dir(st.out_gen);

    const std::string chart_path = st.out_gen + "/" + kChartsFile;
    const std::string qa_path = st.out_gen + "/" + kQaFile;
    if (!st.force && (fs::exists(chart_path) || fs::exists(qa_path)))
        throw DataError("refusing to overwrite existing dataset in " + st.out_gen +
                        " (pass --force)");

    const GenConfig gen_cfg = default_gen_config();
    const TemplateCatalog catalog = default_template_catalog();
    std::vector<ChartRecord> records;
    std::vector<QAItem> items;
    records.reserve(static_cast<std::size_t>(st.n_charts));
    for (int i = 0; i < st.n_charts; ++i) {
        ChartRecord rec;
        rec.chart =
            synthesize_chart(derive_seed(st.seed, kChartStream, static_cast<std::uint64_t>(i)),
                             gen_cfg);
        rec.chart.chart_id = i;
        rec.elements = annotate_elements(rec.chart, LayoutConfig{});
        rec.elements.chart_id = i;
        for (QAItem item : generate_questions(
                 rec.chart, catalog, derive_seed(st.seed, kQaStream, static_cast<std::uint64_t>(i)),
                 st.qa_per_chart)) {
            item.qa_id = static_cast<std::int64_t>(items.size());
            items.push_back(std::move(item));
        }
        records.push_back(std::move(rec));
    }

    fs::create_directories(st.out_gen);
    write_chart_records(chart_path, records);
    write_qa_items(qa_path, items);
    echo_config(reg, st.out_gen);
    *st.out << "charts: " << records.size() << "\n" << "qa: " << items.size() << "\n";
}

void cmd_train(CliState& st, Registry& reg) {
    merge_config(st, reg);
    require_out_dir(st.out_train);
    const std::vector<ChartRecord> charts = load_charts(st.data_dir);
    const std::vector<QAItem> items = load_items(st.data_dir);

    TrainConfig tc;
    tc.epochs = st.epochs;
    tc.base_lr = st.base_lr;
    tc.warmup_fraction = st.warmup_fraction;
    tc.batch_size = st.batch_size;
    tc.negatives_per_positive = st.negatives;
    tc.clip_norm = st.clip_norm;
    tc.seed = st.seed;
    tc.jitter.sigma = st.jitter_sigma;
    tc.jitter.drop_prob = st.jitter_drop;
    tc.ablation.drop_legend_marker = st.drop_legend_marker;
    tc.ablation.drop_text_class_emb = st.drop_text_class_emb;
    tc.ablation.drop_visual_class_emb = st.drop_visual_class_emb;
    tc.ablation.visual_bbox_only = st.bbox_only;
    tc.two_pipelines = st.two_pipelines;
    tc.out_dir = st.out_train;

    ModelConfig mc;
    mc.d_model = st.d_model;
    mc.n_blocks = st.n_blocks;
    mc.n_heads = st.n_heads;
    mc.d_ff = st.d_ff;
    mc.max_positions = st.max_positions;
    mc.lambda1 = st.lambda1;
    mc.lambda2 = st.lambda2;

    std::string resume_path;
    if (!st.resume.empty()) {
        std::string name = st.resume;
        if (name == "latest") {
            const std::string pointer = st.out_train + "/latest";
            if (!fs::exists(pointer))
                throw DataError("no latest pointer in " + st.out_train + ", nothing to resume");
            name = read_text_file(pointer);
            while (!name.empty() && (name.back() == '\n' || name.back() == '\r')) name.pop_back();
        }
        resume_path = name.find('/') == std::string::npos ? st.out_train + "/" + name : name;
        if (!fs::exists(resume_path)) throw DataError("checkpoint not found: " + resume_path);
    }

    fs::create_directories(st.out_train);
    echo_config(reg, st.out_train);
    const TrainResult result = train(charts, items, tc, mc, resume_path);
    for (const EpochStats& s : result.history)
        *st.out << "epoch " << s.epoch << ": loss=" << s.mean_loss << " acc=" << s.align_acc
                << " lr=" << s.last_lr << "\n";
    *st.out << "checkpoint: " << result.last_checkpoint << "\n";
}

void print_stats(std::ostream& out, const char* label, const CategoryStats& s) {
    out << label << ": " << s.accuracy() << " (" << s.correct << "/" << s.total << ")\n";
}

void cmd_eval(CliState& st, Registry& reg) {
    merge_config(st, reg);
    require_out_dir(st.out_eval);
    const Scorer scorer = load_scorer(st.model_dir, st.checkpoint);
    const std::vector<ChartRecord> charts = load_charts(st.data_dir);
    const std::vector<QAItem> items = load_items(st.data_dir);

    EvalOptions opts;
    opts.jitter.sigma = st.jitter_sigma;
    opts.jitter.drop_prob = st.jitter_drop;
    opts.detect_seed = st.seed;
    const Report report = evaluate(scorer, charts, items, opts);

    fs::create_directories(st.out_eval);
    echo_config(reg, st.out_eval);
    write_report_csv(st.out_eval + "/report.csv", report);
    write_tick_curve_svg(st.out_eval + "/tick_curve.svg", report.tolerance_fractions,
                         report.tick_accuracy);
    write_er_histogram_svg(st.out_eval + "/er_histogram.svg", report.er_bucket_labels,
                           report.er_bucket_counts);

    print_stats(*st.out, "overall", report.overall);
    print_stats(*st.out, "structural", report.structural);
    print_stats(*st.out, "data_retrieval", report.data_retrieval);
    print_stats(*st.out, "reasoning", report.reasoning);
    *st.out << "numeric_ratio@5%: "
            << (report.numeric_total == 0
                    ? 0.0
                    : static_cast<double>(report.numeric_ratio_correct) / report.numeric_total)
            << " (" << report.numeric_ratio_correct << "/" << report.numeric_total << ")\n";
    *st.out << "report: " << st.out_eval << "/report.csv\n";
}

void cmd_predict(CliState& st, Registry& reg) {
    merge_config(st, reg);
    if (st.chart_id < 0) throw ConfigError("--chart-id is required");
    if (st.question.empty()) throw ConfigError("--question is required");
    const Scorer scorer = load_scorer(st.model_dir, st.checkpoint);
    const std::vector<ChartRecord> charts = load_charts(st.data_dir);
    const ChartRecord& rec = chart_by_id(charts, st.chart_id);

    const std::vector<Detection> dets =
        oracle_detect(rec.elements, JitterConfig{}, detection_seed(st.seed, st.chart_id));
    const Prediction pred = predict(scorer, rec.chart, dets, st.question);
    *st.out << "chosen: " << pred.chosen.surface << "\n";
    *st.out << "score: " << pred.align_score << "\n";
    if (pred.numeric_value.has_value()) *st.out << "numeric: " << *pred.numeric_value << "\n";
}

void cmd_attribute(CliState& st, Registry& reg) {
    merge_config(st, reg);
    if (st.qa_id < 0) throw ConfigError("--qa-id is required");
    require_out_dir(st.out_attr);
    const Scorer scorer = load_scorer(st.model_dir, st.checkpoint);
    const std::vector<ChartRecord> charts = load_charts(st.data_dir);
    const std::vector<QAItem> items = load_items(st.data_dir);

    const QAItem& item = item_by_id(items, st.qa_id);
    if (st.chart_id >= 0 && st.chart_id != item.chart_id)
        throw DataError("qa " + std::to_string(st.qa_id) + " belongs to chart " +
                        std::to_string(item.chart_id) + ", not " + std::to_string(st.chart_id));
    const ChartRecord& rec = chart_by_id(charts, item.chart_id);

    std::string answer;
    if (item.answer_kind == AnswerKind::numeric) {
        answer = kRegToken;
    } else {
        if (!item.answer_text.has_value())
            throw DataError("qa " + std::to_string(st.qa_id) + " lacks a textual answer");
        answer = *item.answer_text;
    }

    const std::vector<Detection> dets =
        oracle_detect(rec.elements, JitterConfig{}, detection_seed(st.seed, item.chart_id));
    const std::vector<ElementSaliency> saliencies =
        attribute(scorer, rec.chart, dets, item.question_text, answer, st.steps);

    fs::create_directories(st.out_attr);
    echo_config(reg, st.out_attr);
    write_attribution_csv(st.out_attr + "/attribution.csv", saliencies);
    write_attribution_svg(st.out_attr + "/attribution.svg", rec.chart, rec.elements, saliencies);

    std::size_t top = 0;
    for (std::size_t i = 1; i < saliencies.size(); ++i)
        if (saliencies[i].saliency > saliencies[top].saliency) top = i;
    *st.out << "elements: " << saliencies.size() << "\n";
    if (!saliencies.empty())
        *st.out << "top: " << to_string(saliencies[top].element_class) << " (saliency "
                << saliencies[top].saliency << ")\n";
    *st.out << "svg: " << st.out_attr << "/attribution.svg\n";
}

void cmd_plot(CliState& st, Registry& reg) {
    merge_config(st, reg);
    if (st.chart_id < 0) throw ConfigError("--chart-id is required");
    require_out_dir(st.out_plot);
    const std::vector<ChartRecord> charts = load_charts(st.data_dir);
    const ChartRecord& rec = chart_by_id(charts, st.chart_id);

    fs::create_directories(st.out_plot);
    echo_config(reg, st.out_plot);
    const std::string path = st.out_plot + "/chart_" + std::to_string(st.chart_id) + ".svg";
    write_chart_svg(path, rec.chart, rec.elements);
    *st.out << "svg: " << path << "\n";
}

void add_model_dir_opts(CLI::App& sub, Registry& reg, CliState& st) {
    add_cfg(sub, reg, "--model", st.model_dir, "training output directory with checkpoints");
    add_cfg(sub, reg, "--checkpoint", st.checkpoint,
            "checkpoint file inside the model directory, or 'latest'");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CliState st;
    st.out = &out;
    Registry regs[6];

    CLI::App app{"chart question answering workbench"};
    app.require_subcommand(1);

    CLI::App* gen = app.add_subcommand("gen", "synthesize an annotated chart + QA dataset");
    {
        Registry& reg = regs[0];
        add_common(*gen, reg, st);
        add_cfg(*gen, reg, "--out", st.out_gen, "output dataset directory");
        add_cfg(*gen, reg, "--charts", st.n_charts, "number of charts to synthesize");
        add_cfg(*gen, reg, "--qa-per-chart", st.qa_per_chart, "QA pairs generated per chart");
        add_cfg_flag(*gen, reg, "--force", st.force, "overwrite existing dataset files");
        gen->callback([&st, &reg] { cmd_gen(st, reg); });
    }

    CLI::App* tr = app.add_subcommand("train", "train the two-stream model on a dataset");
    {
        Registry& reg = regs[1];
        add_common(*tr, reg, st);
        add_cfg(*tr, reg, "--data", st.data_dir, "dataset directory from `gen`");
        add_cfg(*tr, reg, "--out", st.out_train, "output directory for checkpoints");
        add_cfg(*tr, reg, "--epochs", st.epochs, "training epochs");
        add_cfg(*tr, reg, "--lr", st.base_lr, "peak learning rate");
        add_cfg(*tr, reg, "--warmup-fraction", st.warmup_fraction,
                "fraction of steps spent warming up");
        add_cfg(*tr, reg, "--batch-size", st.batch_size, "samples per optimizer step");
        add_cfg(*tr, reg, "--negatives", st.negatives, "negative answers per positive");
        add_cfg(*tr, reg, "--clip-norm", st.clip_norm, "global gradient-norm clip");
        add_cfg(*tr, reg, "--jitter-sigma", st.jitter_sigma, "detector bbox noise sigma");
        add_cfg(*tr, reg, "--jitter-drop", st.jitter_drop, "detector miss probability");
        add_cfg(*tr, reg, "--d-model", st.d_model, "embedding width");
        add_cfg(*tr, reg, "--n-blocks", st.n_blocks, "co-attention blocks");
        add_cfg(*tr, reg, "--n-heads", st.n_heads, "attention heads");
        add_cfg(*tr, reg, "--d-ff", st.d_ff, "feed-forward width");
        add_cfg(*tr, reg, "--max-positions", st.max_positions, "longest text sequence");
        add_cfg(*tr, reg, "--lambda1", st.lambda1, "classification loss weight");
        add_cfg(*tr, reg, "--lambda2", st.lambda2, "regression loss weight");
        add_cfg_flag(*tr, reg, "--drop-legend-marker", st.drop_legend_marker,
                     "ablation: hide legend markers from the visual stream");
        add_cfg_flag(*tr, reg, "--drop-text-class-emb", st.drop_text_class_emb,
                     "ablation: no text class embedding");
        add_cfg_flag(*tr, reg, "--drop-visual-class-emb", st.drop_visual_class_emb,
                     "ablation: no visual class embedding");
        add_cfg_flag(*tr, reg, "--bbox-only", st.bbox_only,
                     "ablation: drop detector features, keep bboxes");
        add_cfg_flag(*tr, reg, "--two-pipelines", st.two_pipelines,
                     "ablation: separate classification and regression models");
        add_cfg(*tr, reg, "--resume", st.resume,
                "checkpoint to resume from, or 'latest'");
        tr->callback([&st, &reg] { cmd_train(st, reg); });
    }

    CLI::App* ev = app.add_subcommand("eval", "score a trained model and write report files");
    {
        Registry& reg = regs[2];
        add_common(*ev, reg, st);
        add_cfg(*ev, reg, "--data", st.data_dir, "dataset directory from `gen`");
        add_model_dir_opts(*ev, reg, st);
        add_cfg(*ev, reg, "--out", st.out_eval, "output directory for reports");
        add_cfg(*ev, reg, "--jitter-sigma", st.jitter_sigma, "detector bbox noise sigma");
        add_cfg(*ev, reg, "--jitter-drop", st.jitter_drop, "detector miss probability");
        ev->callback([&st, &reg] { cmd_eval(st, reg); });
    }

    CLI::App* pr = app.add_subcommand("predict", "answer one question about one chart");
    {
        Registry& reg = regs[3];
        add_common(*pr, reg, st);
        add_cfg(*pr, reg, "--data", st.data_dir, "dataset directory from `gen`");
        add_model_dir_opts(*pr, reg, st);
        add_cfg(*pr, reg, "--chart-id", st.chart_id, "chart to question");
        add_cfg(*pr, reg, "--question", st.question, "question text");
        pr->callback([&st, &reg] { cmd_predict(st, reg); });
    }

    CLI::App* at = app.add_subcommand("attribute", "per-element saliency for one QA pair");
    {
        Registry& reg = regs[4];
        add_common(*at, reg, st);
        add_cfg(*at, reg, "--data", st.data_dir, "dataset directory from `gen`");
        add_model_dir_opts(*at, reg, st);
        add_cfg(*at, reg, "--qa-id", st.qa_id, "qa item to explain");
        add_cfg(*at, reg, "--chart-id", st.chart_id, "expected chart id (consistency check)");
        add_cfg(*at, reg, "--steps", st.steps, "integrated-gradient steps");
        add_cfg(*at, reg, "--out", st.out_attr, "output directory");
        at->callback([&st, &reg] { cmd_attribute(st, reg); });
    }

    CLI::App* pl = app.add_subcommand("plot", "render one chart record to SVG");
    {
        Registry& reg = regs[5];
        add_common(*pl, reg, st);
        add_cfg(*pl, reg, "--data", st.data_dir, "dataset directory from `gen`");
        add_cfg(*pl, reg, "--chart-id", st.chart_id, "chart to render");
        add_cfg(*pl, reg, "--out", st.out_plot, "output directory");
        pl->callback([&st, &reg] { cmd_plot(st, reg); });
    }

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        err << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        err << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        err << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return 1;
    }
}

}  // namespace crct
