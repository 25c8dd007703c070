#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "crct/train.hpp"

using namespace crct;

namespace {

struct Dataset {
    std::vector<ChartRecord> charts;
    std::vector<QAItem> items;
};

Dataset make_dataset(int n_charts, int per_chart, std::uint64_t seed) {
    Dataset ds;
    const TemplateCatalog catalog = default_template_catalog();
    for (int i = 0; i < n_charts; ++i) {
        ChartRecord rec;
        rec.chart = synthesize_chart(derive_seed(seed, 0x21, static_cast<std::uint64_t>(i)),
                                     default_gen_config());
        rec.chart.chart_id = i;
        rec.elements = annotate_elements(rec.chart, LayoutConfig{});
        rec.elements.chart_id = i;
        for (QAItem item : generate_questions(rec.chart, catalog,
                                              derive_seed(seed, 0x22,
                                                          static_cast<std::uint64_t>(i)),
                                              per_chart)) {
            item.qa_id = static_cast<std::int64_t>(ds.items.size());
            ds.items.push_back(std::move(item));
        }
        ds.charts.push_back(std::move(rec));
    }
    return ds;
}

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_blocks = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    return cfg;
}

TrainConfig quick_train(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.base_lr = 3e-4;
    cfg.batch_size = 8;
    cfg.seed = seed;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool params_equal(const ParamStore& a, const ParamStore& b) {
    if (a.size() != b.size()) return false;
    for (const std::string& name : a.names()) {
        const Tensor& x = a.at(name);
        const Tensor& y = b.at(name);
        if (x.shape() != y.shape()) return false;
        for (std::int64_t i = 0; i < x.numel(); ++i)
            if (x.value()[i] != y.value()[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(validate(cfg));
    cfg.epochs = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.negatives_per_positive = 0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.warmup_fraction = 1.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.base_lr = 0.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
    cfg = TrainConfig{};
    cfg.clip_norm = 0.0;
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("negative sampling") {
    QAItem item;
    item.qa_id = 1;
    item.answer_kind = AnswerKind::fixed_vocab;
    item.answer_text = "Yes";

    // forced complement
    const std::vector<std::string> tiny_pool = {"Yes", "No"};
    CHECK(sample_negatives(item, tiny_pool, 1, 4) == std::vector<std::string>{"No"});

    const std::vector<std::string> pool = {"Yes", "No",   "0",     "1",      "2",
                                           "3",   "2001", "Spain", kRegToken};
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const std::vector<std::string> negs = sample_negatives(item, pool, 3, seed);
        CHECK(negs.size() == 3);
        std::set<std::string> uniq(negs.begin(), negs.end());
        CHECK(uniq.size() == 3);
        CHECK(uniq.count("Yes") == 0);
    }
    CHECK(sample_negatives(item, pool, 3, 9) == sample_negatives(item, pool, 3, 9));

    // numeric questions treat the regression flag as the correct answer
    QAItem reg_item;
    reg_item.answer_kind = AnswerKind::numeric;
    reg_item.answer_value = 12.5;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        const std::vector<std::string> negs = sample_negatives(reg_item, pool, 3, seed);
        for (const std::string& n : negs) CHECK(n != kRegToken);
    }

    CHECK_THROWS_AS(sample_negatives(item, tiny_pool, 2, 0), DataError);
    CHECK_THROWS_AS(sample_negatives(item, pool, 0, 0), ConfigError);
    QAItem broken;
    broken.answer_kind = AnswerKind::chart_text;
    CHECK_THROWS_AS(sample_negatives(broken, pool, 1, 0), DataError);
}

TEST_CASE("learning rate schedule") {
    TrainConfig cfg;
    cfg.base_lr = 0.01;
    cfg.warmup_fraction = 0.1;
    CHECK(lr_at(100, 100, cfg) == 0.0);
    CHECK(lr_at(10, 100, cfg) == doctest::Approx(0.01));
    CHECK(lr_at(5, 100, cfg) == doctest::Approx(0.005));
    CHECK(lr_at(55, 100, cfg) == doctest::Approx(0.005));
    CHECK(lr_at(0, 100, cfg) == 0.0);

    cfg.warmup_fraction = 0.0;
    CHECK(lr_at(50, 100, cfg) == doctest::Approx(0.005));
    CHECK(lr_at(0, 100, cfg) == doctest::Approx(0.01));

    CHECK_THROWS_AS(lr_at(0, 0, cfg), ConfigError);
    CHECK_THROWS_AS(lr_at(-1, 100, cfg), ConfigError);
    CHECK_THROWS_AS(lr_at(101, 100, cfg), ConfigError);
}

TEST_CASE("training runs deterministically end to end") {
    const Dataset ds = make_dataset(4, 3, 42);
    const TrainConfig cfg = quick_train(7);

    TrainResult a = train(ds.charts, ds.items, cfg, tiny_model());
    TrainResult b = train(ds.charts, ds.items, cfg, tiny_model());

    REQUIRE(a.history.size() == 2);
    for (const EpochStats& s : a.history) {
        CHECK(std::isfinite(s.mean_loss));
        CHECK(s.align_acc >= 0.0);
        CHECK(s.align_acc <= 1.0);
        CHECK(s.last_lr >= 0.0);
    }
    // the schedule decays to zero only at the very last update
    CHECK(a.history.front().last_lr > 0.0);
    CHECK(a.history.back().last_lr == 0.0);
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].mean_loss == b.history[e].mean_loss);
        CHECK(a.history[e].align_acc == b.history[e].align_acc);
        CHECK(a.history[e].last_lr == b.history[e].last_lr);
    }
    CHECK(params_equal(a.params, b.params));
    CHECK(a.model_cfg.vocab_size == a.vocab.size());
    CHECK(a.model_cfg == b.model_cfg);

    // a different seed moves the parameters
    TrainConfig other = cfg;
    other.seed = 8;
    const TrainResult c = train(ds.charts, ds.items, other, tiny_model());
    CHECK_FALSE(params_equal(a.params, c.params));

    // the trained bundle drives prediction
    const Scorer scorer = make_scorer(a);
    const std::vector<Detection> dets = oracle_detect(ds.charts[0].elements, JitterConfig{},
                                                      derive_seed(cfg.seed, 0xE7A1, 0));
    const Prediction pred = predict(scorer, ds.charts[0].chart, dets,
                                    ds.items[0].question_text);
    CHECK_FALSE(pred.all_scores.empty());
}

TEST_CASE("training errors are actionable") {
    const Dataset ds = make_dataset(2, 3, 43);
    const TrainConfig cfg = quick_train(1);
    CHECK_THROWS_AS(train({}, ds.items, cfg, tiny_model()), DataError);
    CHECK_THROWS_AS(train(ds.charts, {}, cfg, tiny_model()), DataError);

    std::vector<QAItem> orphan = ds.items;
    orphan[0].chart_id = 555;
    CHECK_THROWS_AS(train(ds.charts, orphan, cfg, tiny_model()), DataError);
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run bit-exactly") {
    const Dataset ds = make_dataset(3, 3, 44);
    ModelConfig mcfg = tiny_model();

    const std::string dir_a = "train_resume_a";
    const std::string dir_b = "train_resume_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);

    TrainConfig full = quick_train(11);
    full.epochs = 4;
    full.out_dir = dir_a;
    const TrainResult straight = train(ds.charts, ds.items, full, mcfg);

    // reconstruct the state a run killed after epoch 2 would have left behind
    std::filesystem::create_directories(dir_b);
    std::filesystem::copy_file(dir_a + "/epoch_2.ckpt", dir_b + "/epoch_2.ckpt");
    {
        std::istringstream all(read_file(dir_a + "/metrics.csv"));
        std::ofstream partial(dir_b + "/metrics.csv", std::ios::binary);
        std::string line;
        for (int i = 0; i < 3 && std::getline(all, line); ++i) partial << line << "\n";
    }

    TrainConfig rest = full;
    rest.out_dir = dir_b;
    const TrainResult resumed =
        train(ds.charts, ds.items, rest, mcfg, dir_b + "/epoch_2.ckpt");

    CHECK(params_equal(straight.params, resumed.params));
    CHECK(read_file(dir_a + "/epoch_4.ckpt") == read_file(dir_b + "/epoch_4.ckpt"));
    CHECK(read_file(dir_a + "/epoch_3.ckpt") == read_file(dir_b + "/epoch_3.ckpt"));
    CHECK(read_file(dir_a + "/metrics.csv") == read_file(dir_b + "/metrics.csv"));
    CHECK(read_file(dir_a + "/latest") == "epoch_4.ckpt\n");
    CHECK(read_file(dir_b + "/latest") == "epoch_4.ckpt\n");

    // resuming past the requested epochs is refused
    CHECK_THROWS_AS(train(ds.charts, ds.items, rest, mcfg, dir_b + "/epoch_4.ckpt"),
                    ConfigError);

    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("split-pipeline mode trains a second parameter set") {
    const Dataset ds = make_dataset(3, 3, 45);
    TrainConfig cfg = quick_train(13);
    cfg.two_pipelines = true;
    const std::string dir = "train_split";
    std::filesystem::remove_all(dir);
    cfg.out_dir = dir;

    const TrainResult result = train(ds.charts, ds.items, cfg, tiny_model());
    REQUIRE(result.reg_params.has_value());
    CHECK_FALSE(params_equal(result.params, *result.reg_params));
    CHECK(std::filesystem::exists(dir + "/epoch_2.ckpt"));
    CHECK(std::filesystem::exists(dir + "/epoch_2.reg.ckpt"));

    const Scorer scorer = make_scorer(result);
    REQUIRE(scorer.reg_params.has_value());
    const std::vector<Detection> dets = oracle_detect(ds.charts[0].elements, JitterConfig{},
                                                      derive_seed(cfg.seed, 0xE7A1, 0));
    const Prediction pred = predict(scorer, ds.charts[0].chart, dets,
                                    ds.items[0].question_text);
    CHECK_FALSE(pred.all_scores.empty());

    std::filesystem::remove_all(dir);
}

TEST_CASE("loss drops on a small overfit set") {
    const Dataset ds = make_dataset(4, 4, 46);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.base_lr = 1e-3;
    cfg.batch_size = 16;
    cfg.seed = 3;
    const TrainResult result = train(ds.charts, ds.items, cfg, tiny_model());
    REQUIRE(result.history.size() == 8);
    CHECK(result.history.back().mean_loss < result.history.front().mean_loss);
}
