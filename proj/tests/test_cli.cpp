#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "disagg/dataio.hpp"
#include "disagg/kvconfig.hpp"
#include "disagg/model.hpp"

using namespace disagg;
namespace fs = std::filesystem;

namespace {

const std::string cli = DISAGG_CLI_PATH;

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "disagg_cli_test";
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = cli + " " + args + " >" +
                            (work_dir() / "stdout.txt").string() + " 2>" +
                            (work_dir() / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string last_stdout() {
    std::ifstream f(work_dir() / "stdout.txt");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("synth: baseline-only run is a constant trace") {
    const auto dir = work_dir() / "flat";
    REQUIRE(run("synth --out " + dir.string() +
                " --hours 0.1 --baseline 100 --noise 0 --loads ,") == 0);
    const auto r = ingest_csv((dir / "aggregate.csv").string());
    CHECK(r.series[0].samples.size() == 360);
    for (double v : r.series[0].samples) CHECK(v == 100.0);
    CHECK(fs::exists(dir / "aggregate.csv.manifest"));
}

TEST_CASE("synth: aggregate minus loads equals baseline (noise-free)") {
    const auto dir = work_dir() / "adds";
    REQUIRE(run("synth --out " + dir.string() +
                " --hours 0.5 --baseline 80 --noise 0 --seed 5") == 0);
    const auto agg = ingest_csv((dir / "aggregate.csv").string()).series[0];
    std::vector<double> sum(agg.size(), 0.0);
    for (const char* name : {"fridge", "kettle", "washer"}) {
        const auto load =
            ingest_csv((dir / (std::string(name) + ".csv")).string()).series[0];
        for (size_t i = 0; i < sum.size(); ++i) sum[i] += load.samples[i];
    }
    for (size_t i = 0; i < sum.size(); ++i)
        CHECK(agg.samples[i] - sum[i] == doctest::Approx(80.0).epsilon(1e-12));
}

TEST_CASE("extract-gt: kettle fixture reports 25 on-samples") {
    const auto dir = work_dir();
    const auto in = dir / "kettle_fixture.csv";
    {
        std::ofstream f(in);
        for (int i = 0; i < 60; ++i)
            f << i << ',' << (i < 25 ? 1200.0 : 0.0) << '\n';
    }
    const auto out = dir / "kettle_gt.csv";
    REQUIRE(run("extract-gt --input " + in.string() + " --load KT --out " +
                out.string()) == 0);
    const std::string report = last_stdout();
    CHECK(report.find("on_samples 25") != std::string::npos);
    const auto profile = read_profile_csv(out.string());
    REQUIRE(profile.states.size() == 60);
    for (int i = 0; i < 25; ++i) CHECK(profile.states[i] == 1);
    for (int i = 25; i < 60; ++i) CHECK(profile.states[i] == 0);
}

TEST_CASE("extract-gt: empty input fails without creating an output") {
    const auto dir = work_dir();
    const auto in = dir / "empty.csv";
    std::ofstream(in) << "";
    const auto out = dir / "should_not_exist.csv";
    fs::remove(out);
    CHECK(run("extract-gt --input " + in.string() + " --load FR --out " +
              out.string()) == 2);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("extract-gt: unknown load is a config error (exit 1)") {
    const auto dir = work_dir();
    const auto in = dir / "one.csv";
    std::ofstream(in) << "0,5\n1,5\n2,5\n";
    CHECK(run("extract-gt --input " + in.string() + " --load KL --out " +
              (dir / "x.csv").string()) == 1);
}

TEST_CASE("usage errors exit with code 1") {
    CHECK(run("train") == 1);           // missing required options
    CHECK(run("no-such-command") == 1);
    CHECK(run("--version") == 0);
}

TEST_CASE("train/predict/eval pipeline with folds, stats audit, determinism") {
    const auto dir = work_dir() / "pipe";
    fs::create_directories(dir);
    REQUIRE(run("synth --out " + dir.string() + " --hours 1 --seed 11") == 0);
    REQUIRE(run("extract-gt --input " + (dir / "fridge.csv").string() +
                " --load FR --out " + (dir / "gt.csv").string()) == 0);

    const std::string train_args =
        "train --aggregate " + (dir / "aggregate.csv").string() + " --truth " +
        (dir / "gt.csv").string() +
        " --preset desk --window 64 --epochs 2 --seed 3 --out " +
        (dir / "m.ckpt").string();
    REQUIRE(run(train_args) == 0);
    CHECK(fs::exists(dir / "m.ckpt"));
    CHECK(fs::exists(dir / "m.ckpt.history.tsv"));
    CHECK(fs::exists(dir / "m.ckpt.manifest"));

    // manifest carries command, version, seed
    const KvDoc manifest = KvDoc::load_file((dir / "m.ckpt.manifest").string());
    CHECK(manifest.get("run.command") == "train");
    CHECK(manifest.get_int("run.seed") == 3);

    // standardization statistics in the checkpoint come from the training
    // fraction only, never from the whole series (leakage audit)
    auto model = Model<float>::load_checkpoint((dir / "m.ckpt").string());
    const auto agg = ingest_csv((dir / "aggregate.csv").string()).series[0];
    const size_t n_train = static_cast<size_t>(0.6 * agg.size());
    const Standardizer z_train = Standardizer::fit(
        {agg.samples.begin(), agg.samples.begin() + n_train});
    const Standardizer z_all = Standardizer::fit(agg.samples);
    CHECK(model.input_mean == z_train.mean);
    CHECK(model.input_std == z_train.stddev);
    CHECK(model.input_mean != z_all.mean);

    // identical rerun produces a byte-identical checkpoint
    REQUIRE(run("train --aggregate " + (dir / "aggregate.csv").string() +
                " --truth " + (dir / "gt.csv").string() +
                " --preset desk --window 64 --epochs 2 --seed 3 --out " +
                (dir / "m2.ckpt").string()) == 0);
    std::ifstream a(dir / "m.ckpt", std::ios::binary);
    std::ifstream b(dir / "m2.ckpt", std::ios::binary);
    std::ostringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());

    // predict: short input gets one zero-padded window, truncated output
    const auto short_in = dir / "short.csv";
    {
        std::ofstream f(short_in);
        for (int i = 0; i < 20; ++i) f << i << ',' << (150.0 + i) << '\n';
    }
    REQUIRE(run("predict --checkpoint " + (dir / "m.ckpt").string() +
                " --input " + short_in.string() + " --out " +
                (dir / "short_pred.csv").string()) == 0);
    {
        std::ifstream f(dir / "short_pred.csv");
        std::string line;
        int rows = 0;
        while (std::getline(f, line)) {
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream is(line);
            double ts, posterior;
            int state;
            REQUIRE((is >> ts >> posterior >> state));
            CHECK(posterior > 0.0);
            CHECK(posterior < 1.0);
            CHECK(state == (posterior >= 0.5 ? 1 : 0));
            ++rows;
        }
        CHECK(rows == 20);  // truncated to the input length
    }

    // full-series predict + eval emits the Table-2-ordered report
    REQUIRE(run("predict --checkpoint " + (dir / "m.ckpt").string() +
                " --input " + (dir / "aggregate.csv").string() + " --out " +
                (dir / "pred.csv").string()) == 0);
    REQUIRE(run("eval --pred " + (dir / "pred.csv").string() + " --truth " +
                (dir / "gt.csv").string() + " --out " +
                (dir / "report").string()) == 0);
    {
        std::ifstream f(dir / "report.txt");
        std::string header;
        std::getline(f, header);
        CHECK(header == "rn\tTPA\tTPR\tB\tM\tf1\tMCC");
    }
    CHECK(fs::exists(dir / "report.kv"));
}

TEST_CASE("train with epochs 0 keeps the Glorot initialization") {
    const auto dir = work_dir() / "init";
    fs::create_directories(dir);
    REQUIRE(run("synth --out " + dir.string() + " --hours 0.2 --seed 2") == 0);
    REQUIRE(run("extract-gt --input " + (dir / "fridge.csv").string() +
                " --load FR --out " + (dir / "gt.csv").string()) == 0);
    REQUIRE(run("train --aggregate " + (dir / "aggregate.csv").string() +
                " --truth " + (dir / "gt.csv").string() +
                " --preset desk --window 32 --epochs 0 --seed 9 --out " +
                (dir / "init.ckpt").string()) == 0);

    auto trained = Model<float>::load_checkpoint((dir / "init.ckpt").string());
    auto fresh = Model<float>::build(ModelConfig::desk_preset(32), 9);
    CHECK(trained.save_state() == fresh.save_state());
}

TEST_CASE("eval reproduces the hand-counted table") {
    const auto dir = work_dir();
    const auto truth = dir / "truth10.csv";
    const auto pred = dir / "pred10.csv";
    {
        std::ofstream t(truth), p(pred);
        const int tv[10] = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
        const int pv[10] = {1, 1, 0, 1, 0, 0, 0, 0, 0, 0};
        for (int i = 0; i < 10; ++i) {
            t << i << ',' << tv[i] << '\n';
            p << i << ',' << pv[i] << '\n';
        }
    }
    REQUIRE(run("eval --pred " + pred.string() + " --truth " + truth.string() +
                " --out " + (dir / "hand").string()) == 0);
    const KvDoc kv = KvDoc::load_file((dir / "hand.kv").string());
    CHECK(kv.get_int("tp") == 2);
    CHECK(kv.get_int("fn") == 1);
    CHECK(kv.get_int("fp") == 1);
    CHECK(kv.get_int("tn") == 6);
    CHECK(kv.get_double("mcc") == doctest::Approx(11.0 / 21.0).epsilon(1e-6));
    CHECK(kv.get_double("f1") == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("model config file round trips through the CLI") {
    const auto dir = work_dir() / "cfgfile";
    fs::create_directories(dir);
    const auto cfg_path = dir / "custom.cfg";
    {
        auto cfg = ModelConfig::desk_preset(64);
        std::ofstream(cfg_path) << config_to_kv(cfg);
    }
    REQUIRE(run("synth --out " + dir.string() + " --hours 0.2 --seed 4") == 0);
    REQUIRE(run("extract-gt --input " + (dir / "fridge.csv").string() +
                " --load FR --out " + (dir / "gt.csv").string()) == 0);
    REQUIRE(run("train --aggregate " + (dir / "aggregate.csv").string() +
                " --truth " + (dir / "gt.csv").string() + " --model-config " +
                cfg_path.string() + " --epochs 1 --seed 1 --out " +
                (dir / "cfg.ckpt").string()) == 0);
    auto m = Model<float>::load_checkpoint((dir / "cfg.ckpt").string());
    CHECK(m.config().window == 64);
}
