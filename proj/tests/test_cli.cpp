#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crct/cli.hpp"

using namespace crct;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    CliRun r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

bool contains(const std::string& s, const std::string& sub) {
    return s.find(sub) != std::string::npos;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Scratch {
    std::string dir;
    explicit Scratch(const std::string& name) : dir(name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Scratch() { fs::remove_all(dir); }
    std::string operator/(const std::string& sub) const { return dir + "/" + sub; }
};

// tiny dataset + model shared by the trained-artifact cases
void gen_tiny(const Scratch& s) {
    const CliRun g = run({"gen", "--charts", "4", "--qa-per-chart", "3", "--seed", "5", "--out",
                          s / "data"});
    REQUIRE(g.code == 0);
}

void train_tiny(const Scratch& s) {
    const CliRun t = run({"train", "--data", s / "data", "--out", s / "model", "--epochs", "1",
                          "--d-model", "16", "--n-blocks", "1", "--n-heads", "2", "--d-ff", "32",
                          "--seed", "5"});
    REQUIRE(t.code == 0);
}

}  // namespace

TEST_CASE("gen writes datasets with the advertised counts") {
    Scratch s("cli_gen");
    const CliRun r = run({"gen", "--charts", "5", "--qa-per-chart", "4", "--seed", "1", "--out",
                          s / "data"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "charts: 5"));
    CHECK(contains(r.out, "qa: 20"));
    CHECK(fs::exists(s / "data/charts.v1.jsonl"));
    CHECK(fs::exists(s / "data/qa.v1.jsonl"));
    CHECK(fs::exists(s / "data/effective_config.json"));

    // refuses to clobber, honors --force
    const CliRun again = run({"gen", "--charts", "5", "--seed", "1", "--out", s / "data"});
    CHECK(again.code == 2);
    CHECK(contains(again.err, "--force"));
    const CliRun forced = run({"gen", "--charts", "5", "--qa-per-chart", "4", "--seed", "1",
                               "--out", s / "data", "--force"});
    CHECK(forced.code == 0);
}

TEST_CASE("gen rejects zero charts as usage") {
    Scratch s("cli_gen0");
    const CliRun r = run({"gen", "--charts", "0", "--out", s / "d"});
    CHECK(r.code == 1);
    CHECK(contains(r.err, "--charts"));
    const CliRun missing = run({"gen", "--out", s / "d"});
    CHECK(missing.code == 1);
}

TEST_CASE("gen output is byte-identical across reruns") {
    Scratch s("cli_gen_det");
    REQUIRE(run({"gen", "--charts", "4", "--seed", "9", "--out", s / "a"}).code == 0);
    REQUIRE(run({"gen", "--charts", "4", "--seed", "9", "--out", s / "b"}).code == 0);
    CHECK(slurp(s / "a/charts.v1.jsonl") == slurp(s / "b/charts.v1.jsonl"));
    CHECK(slurp(s / "a/qa.v1.jsonl") == slurp(s / "b/qa.v1.jsonl"));

    REQUIRE(run({"gen", "--charts", "4", "--seed", "10", "--out", s / "c"}).code == 0);
    CHECK(slurp(s / "a/charts.v1.jsonl") != slurp(s / "c/charts.v1.jsonl"));
}

TEST_CASE("config file merges under flags and rejects unknown keys") {
    Scratch s("cli_cfg");
    {
        std::ofstream f(s / "gen.json");
        f << "{\"charts\": 3, \"qa-per-chart\": 2, \"seed\": 7}\n";
    }
    const CliRun r = run({"gen", "--config", s / "gen.json", "--out", s / "d1"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "charts: 3"));
    CHECK(contains(r.out, "qa: 6"));
    const std::string echo = slurp(s / "d1/effective_config.json");
    CHECK(contains(echo, "\"charts\": 3"));
    CHECK(contains(echo, "\"seed\": 7"));

    // a flag beats the file
    const CliRun over = run({"gen", "--config", s / "gen.json", "--charts", "2", "--out",
                             s / "d2"});
    CHECK(over.code == 0);
    CHECK(contains(over.out, "charts: 2"));
    CHECK(contains(slurp(s / "d2/effective_config.json"), "\"charts\": 2"));

    {
        std::ofstream f(s / "bad.json");
        f << "{\"chartz\": 1}\n";
    }
    const CliRun bad = run({"gen", "--config", s / "bad.json", "--charts", "2", "--out", s / "d3"});
    CHECK(bad.code == 1);
    CHECK(contains(bad.err, "chartz"));

    {
        std::ofstream f(s / "mistyped.json");
        f << "{\"charts\": \"many\"}\n";
    }
    CHECK(run({"gen", "--config", s / "mistyped.json", "--out", s / "d4"}).code == 1);
    CHECK(run({"gen", "--config", s / "absent.json", "--charts", "1", "--out", s / "d5"}).code ==
          2);
}

TEST_CASE("seed falls back to the environment") {
    Scratch s("cli_env");
    REQUIRE(setenv("CRCT_SEED", "123", 1) == 0);
    const CliRun r = run({"gen", "--charts", "2", "--out", s / "d1"});
    CHECK(r.code == 0);
    CHECK(contains(slurp(s / "d1/effective_config.json"), "\"seed\": 123"));

    // explicit flag wins over the environment
    const CliRun flag = run({"gen", "--charts", "2", "--seed", "4", "--out", s / "d2"});
    CHECK(flag.code == 0);
    CHECK(contains(slurp(s / "d2/effective_config.json"), "\"seed\": 4"));

    REQUIRE(setenv("CRCT_SEED", "nope", 1) == 0);
    CHECK(run({"gen", "--charts", "2", "--out", s / "d3"}).code == 1);
    unsetenv("CRCT_SEED");
}

TEST_CASE("train smoke produces checkpoints and logs") {
    Scratch s("cli_train");
    gen_tiny(s);
    const CliRun t = run({"train", "--data", s / "data", "--out", s / "model", "--epochs", "2",
                          "--d-model", "16", "--n-blocks", "1", "--n-heads", "2", "--d-ff", "32",
                          "--seed", "5"});
    CHECK(t.code == 0);
    CHECK(contains(t.out, "epoch 1:"));
    CHECK(contains(t.out, "epoch 2:"));
    CHECK(fs::exists(s / "model/epoch_2.ckpt"));
    CHECK(fs::exists(s / "model/metrics.csv"));
    CHECK(fs::exists(s / "model/vocab.json"));
    CHECK(fs::exists(s / "model/effective_config.json"));
    CHECK(slurp(s / "model/latest") == "epoch_2.ckpt\n");

    const CliRun missing = run({"train", "--data", s / "nowhere", "--out", s / "m2"});
    CHECK(missing.code == 2);
    CHECK(contains(missing.err, s / "nowhere/charts.v1.jsonl"));

    // --resume latest reproduces the uninterrupted run
    fs::create_directories(s / "part");
    fs::copy_file(s / "model/epoch_1.ckpt", s / "part/epoch_1.ckpt");
    {
        std::istringstream all(slurp(s / "model/metrics.csv"));
        std::ofstream partial(s / "part/metrics.csv", std::ios::binary);
        std::string line;
        for (int i = 0; i < 2 && std::getline(all, line); ++i) partial << line << "\n";
        std::ofstream latest(s / "part/latest", std::ios::binary);
        latest << "epoch_1.ckpt\n";
    }
    const CliRun resumed = run({"train", "--data", s / "data", "--out", s / "part", "--epochs",
                                "2", "--d-model", "16", "--n-blocks", "1", "--n-heads", "2",
                                "--d-ff", "32", "--seed", "5", "--resume", "latest"});
    CHECK(resumed.code == 0);
    CHECK(slurp(s / "part/epoch_2.ckpt") == slurp(s / "model/epoch_2.ckpt"));
    CHECK(slurp(s / "part/metrics.csv") == slurp(s / "model/metrics.csv"));

    // resume with a mismatched architecture is a hard error
    const CliRun clash = run({"train", "--data", s / "data", "--out", s / "part", "--epochs", "3",
                              "--d-model", "32", "--n-blocks", "1", "--n-heads", "2", "--d-ff",
                              "32", "--seed", "5", "--resume", "latest"});
    CHECK(clash.code == 1);
}

TEST_CASE("eval writes a report bundle") {
    Scratch s("cli_eval");
    gen_tiny(s);
    train_tiny(s);
    const CliRun e = run({"eval", "--data", s / "data", "--model", s / "model", "--out",
                          s / "ev", "--seed", "5"});
    CHECK(e.code == 0);
    CHECK(contains(e.out, "overall:"));
    CHECK(contains(e.out, "structural:"));
    CHECK(fs::exists(s / "ev/report.csv"));
    CHECK(fs::exists(s / "ev/tick_curve.svg"));
    CHECK(fs::exists(s / "ev/er_histogram.svg"));
    CHECK(fs::exists(s / "ev/effective_config.json"));

    // rerun is byte-identical
    const CliRun e2 = run({"eval", "--data", s / "data", "--model", s / "model", "--out",
                           s / "ev2", "--seed", "5"});
    REQUIRE(e2.code == 0);
    CHECK(slurp(s / "ev/report.csv") == slurp(s / "ev2/report.csv"));

    const CliRun nomod = run({"eval", "--data", s / "data", "--model", s / "ghost", "--out",
                              s / "ev3"});
    CHECK(nomod.code == 2);
}

TEST_CASE("predict prints the chosen answer and its score") {
    Scratch s("cli_predict");
    gen_tiny(s);
    train_tiny(s);
    const CliRun p = run({"predict", "--data", s / "data", "--model", s / "model", "--chart-id",
                          "1", "--question", "How many series are plotted?", "--seed", "5"});
    CHECK(p.code == 0);
    CHECK(contains(p.out, "chosen: "));
    CHECK(contains(p.out, "score: "));

    const CliRun bad = run({"predict", "--data", s / "data", "--model", s / "model", "--chart-id",
                            "77", "--question", "x"});
    CHECK(bad.code == 2);
    CHECK(contains(bad.err, "available chart ids"));
    CHECK(run({"predict", "--data", s / "data", "--model", s / "model", "--chart-id", "1"}).code ==
          1);
}

TEST_CASE("attribute writes saliency files for a qa item") {
    Scratch s("cli_attr");
    gen_tiny(s);
    train_tiny(s);
    const CliRun a = run({"attribute", "--data", s / "data", "--model", s / "model", "--qa-id",
                          "2", "--out", s / "attr", "--seed", "5", "--steps", "4"});
    CHECK(a.code == 0);
    CHECK(contains(a.out, "elements: "));
    CHECK(fs::exists(s / "attr/attribution.csv"));
    CHECK(fs::exists(s / "attr/attribution.svg"));
    CHECK(contains(slurp(s / "attr/attribution.csv"), "saliency"));
    CHECK(contains(slurp(s / "attr/attribution.svg"), "<svg"));

    const CliRun bad = run({"attribute", "--data", s / "data", "--model", s / "model", "--qa-id",
                            "999", "--out", s / "attr2"});
    CHECK(bad.code == 2);
    CHECK(contains(bad.err, "available qa ids"));

    const CliRun mismatch = run({"attribute", "--data", s / "data", "--model", s / "model",
                                 "--qa-id", "2", "--chart-id", "3", "--out", s / "attr3"});
    CHECK(mismatch.code == 2);
}

TEST_CASE("plot renders a chart record") {
    Scratch s("cli_plot");
    gen_tiny(s);
    const CliRun p = run({"plot", "--data", s / "data", "--chart-id", "0", "--out", s / "plots"});
    CHECK(p.code == 0);
    CHECK(fs::exists(s / "plots/chart_0.svg"));
    CHECK(contains(slurp(s / "plots/chart_0.svg"), "<svg"));
    CHECK(run({"plot", "--data", s / "data", "--chart-id", "42", "--out", s / "p2"}).code == 2);
}

TEST_CASE("help lists every subcommand and flag") {
    const CliRun top = run({"--help"});
    CHECK(top.code == 0);
    for (const char* sub : {"gen", "train", "eval", "predict", "attribute", "plot"})
        CHECK(contains(top.out, sub));

    const CliRun tr = run({"train", "--help"});
    CHECK(tr.code == 0);
    for (const char* flag :
         {"--epochs", "--lr", "--batch-size", "--drop-legend-marker", "--drop-text-class-emb",
          "--drop-visual-class-emb", "--bbox-only", "--two-pipelines", "--resume", "--seed",
          "--config"})
        CHECK(contains(tr.out, flag));
    CHECK(contains(tr.out, "[20]"));  // epochs default is visible

    const CliRun none = run({});
    CHECK(none.code == 1);
}
