#include "cesrnn/cli.hpp"
#include "cesrnn/errors.hpp"
#include "cesrnn/synthetic.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace cesrnn;
using cesrnn::testing::read_text;
using cesrnn::testing::TempDir;
using cesrnn::testing::write_text;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "cesrnn");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

// Small panel plus a config that keeps training to a fraction of a second.
struct Workspace {
    TempDir root{"cli"};
    fs::path data = root / "data";
    fs::path config = root / "tiny.cfg";

    explicit Workspace(int days = 160) {
        fs::create_directories(data);
        synthetic::PanelSpec spec;
        spec.days = days;
        cesrnn::testing::write_panel(data, synthetic::make_panel(spec));
        write_text(config, "input_window = 6\n"
                           "embedding = 2\n"
                           "context_size = 2\n"
                           "hidden1 = 4\n"
                           "hidden2 = 4\n"
                           "epochs = 2\n"
                           "batch_schedule = 2\n"
                           "steps_schedule = 15\n"
                           "updates_per_epoch = 4\n");
    }

    Outcome train(const std::string& out, std::vector<std::string> extra = {}) const {
        std::vector<std::string> args{"train", data.string(), "--config", config.string(), "--out", out, "--jobs", "1"};
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args);
    }
};

std::string loss_file(const fs::path& path, const std::vector<double>& losses) {
    std::string text = "coin,anchor_date,loss\n";
    for (std::size_t t = 0; t < losses.size(); ++t) {
        text += "BTC," + dataset::format_date(dataset::parse_date("2021-01-01") + std::chrono::days(t)) + "," +
                std::to_string(losses[t]) + "\n";
    }
    write_text(path, text);
    return path.string();
}

} // namespace

TEST(Cli, HelpAndUnknownCommand) {
    EXPECT_EQ(run({"--help"}).code, cli::exit_ok);
    EXPECT_EQ(run({"forecast"}).code, cli::exit_usage);
    EXPECT_EQ(run({}).code, cli::exit_usage);
}

TEST(Validate, CleanPanelExitsZero) {
    Workspace w;
    const Outcome o = run({"validate", w.data.string()});
    EXPECT_EQ(o.code, cli::exit_ok) << o.err;
    EXPECT_NE(o.out.find("ok"), std::string::npos);
}

TEST(Validate, MissingPriceColumnNamesIt) {
    Workspace w;
    const fs::path btc = w.data / "BTC.csv";
    std::string text = read_text(btc);
    const auto at = text.find("avg_price_per_day");
    ASSERT_NE(at, std::string::npos);
    text.replace(at, 17, "price");
    write_text(btc, text);
    const Outcome o = run({"validate", w.data.string()});
    EXPECT_EQ(o.code, cli::exit_data_error);
    EXPECT_NE((o.out + o.err).find("avg_price_per_day"), std::string::npos);
}

TEST(Validate, PlantedGapsWithForwardFillWarnOnly) {
    Workspace w;
    const fs::path eth = w.data / "ETH.csv";
    std::istringstream in(read_text(eth));
    std::string line, kept;
    for (int row = 0; std::getline(in, line); ++row) {
        if (row != 40 && row != 41 && row != 90) {
            kept += line + "\n";
        }
    }
    write_text(eth, kept);
    const Outcome o = run({"validate", w.data.string(), "--fill", "ffill"});
    EXPECT_EQ(o.code, cli::exit_ok) << o.err;
    EXPECT_NE(o.out.find("with warnings"), std::string::npos) << o.out;
    EXPECT_NE(o.out.find("ETH"), std::string::npos);
}

TEST(Validate, EmptyDirectoryIsDataError) {
    TempDir empty("cli-empty");
    EXPECT_EQ(run({"validate", empty.path().string()}).code, cli::exit_data_error);
}

TEST(Train, HorizonZeroIsUsageError) {
    Workspace w;
    EXPECT_EQ(w.train((w.root / "run").string(), {"--horizon", "0"}).code, cli::exit_usage);
}

TEST(Train, WritesFiveCheckpointsDeterministically) {
    Workspace w;
    const std::string a = (w.root / "a").string(), b = (w.root / "b").string();
    const std::vector<std::string> flags{"--horizon", "7", "--ensemble", "5", "--seed", "1"};
    const Outcome first = w.train(a, flags);
    ASSERT_EQ(first.code, cli::exit_ok) << first.err;
    for (int k = 0; k < 5; ++k) {
        EXPECT_TRUE(fs::exists(fs::path(a) / ("member_" + std::to_string(k) + ".ckpt"))) << k;
    }
    EXPECT_FALSE(fs::exists(fs::path(a) / "member_5.ckpt"));
    EXPECT_TRUE(fs::exists(fs::path(a) / "config.txt"));
    ASSERT_EQ(w.train(b, flags).code, cli::exit_ok);
    EXPECT_EQ(read_text(fs::path(a) / "train_log.csv"), read_text(fs::path(b) / "train_log.csv"));
    EXPECT_EQ(cli::file_checksum(fs::path(a) / "member_3.ckpt"), cli::file_checksum(fs::path(b) / "member_3.ckpt"));
}

TEST(Train, DivergenceExitsThree) {
    Workspace w;
    const Outcome o = w.train((w.root / "run").string(), {"--learning-rate", "1e305", "--ensemble", "1"});
    EXPECT_EQ(o.code, cli::exit_training_failure);
    EXPECT_NE(o.err.find("update"), std::string::npos) << o.err;
}

TEST(Backtest, CleanRunWritesTablesDeterministically) {
    Workspace w;
    const std::string run_dir = (w.root / "run").string();
    ASSERT_EQ(w.train(run_dir, {"--horizon", "1", "--ensemble", "2", "--test-start", "2020-05-10"}).code, cli::exit_ok);
    const fs::path a = w.root / "bt_a", b = w.root / "bt_b";
    for (const fs::path& out : {a, b}) {
        const Outcome o = run({"backtest", run_dir, w.data.string(), "--from", "2020-05-10", "--to", "2020-06-08",
                               "--out", out.string(), "--jobs", "1"});
        ASSERT_EQ(o.code, cli::exit_ok) << o.err;
    }
    const std::string metrics = read_text(a / "metrics.csv");
    EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "coin,horizon,mape,rmse,mpe,stdpe,coverage,crossing_rate");
    const std::string forecasts = read_text(a / "forecasts.csv");
    EXPECT_EQ(std::count(forecasts.begin(), forecasts.end(), '\n'), 1 + 3 * 30);
    EXPECT_EQ(forecasts, read_text(b / "forecasts.csv"));
    EXPECT_EQ(read_text(a / "losses.csv"), read_text(b / "losses.csv"));
}

TEST(Backtest, BadDatesAreUsageErrors) {
    Workspace w;
    const std::string run_dir = (w.root / "run").string();
    ASSERT_EQ(w.train(run_dir, {"--ensemble", "1"}).code, cli::exit_ok);
    const std::string out = (w.root / "bt").string();
    EXPECT_EQ(run({"backtest", run_dir, w.data.string(), "--from", "2020-13-01", "--to", "2020-05-01", "--out", out})
                  .code,
              cli::exit_usage);
    EXPECT_EQ(run({"backtest", run_dir, w.data.string(), "--from", "2020-05-01", "--to", "2020-04-01", "--out", out})
                  .code,
              cli::exit_usage);
    EXPECT_EQ(run({"backtest", run_dir, w.data.string(), "--from", "2030-01-01", "--to", "2030-02-01", "--out", out})
                  .code,
              cli::exit_usage);
}

TEST(Backtest, MissingRunIsDataError) {
    Workspace w;
    const Outcome o = run({"backtest", (w.root / "nothing").string(), w.data.string(), "--from", "2020-05-01", "--to",
                           "2020-05-10", "--out", (w.root / "bt").string()});
    EXPECT_EQ(o.code, cli::exit_data_error);
}

TEST(Gw, IdenticalFilesDoNotReject) {
    TempDir dir("cli-gw");
    std::vector<double> l;
    for (int t = 0; t < 120; ++t) {
        l.push_back(1.0 + 0.5 * std::sin(0.3 * t));
    }
    const Outcome o = run({"gw", loss_file(dir / "a.csv", l), loss_file(dir / "b.csv", l)});
    EXPECT_EQ(o.code, cli::exit_ok) << o.err;
    EXPECT_NE(o.out.find("none"), std::string::npos) << o.out;
}

TEST(Gw, PlantedDominanceRejects) {
    TempDir dir("cli-gw");
    cesrnn::testing::Gen g(5);
    std::vector<double> good, bad;
    for (int t = 0; t < 200; ++t) {
        const double base = g.uniform(1.0, 2.0);
        good.push_back(base);
        bad.push_back(base + 1.0 + 0.1 * g.normal());
    }
    const std::string matrix = (dir / "matrix.csv").string();
    const Outcome o = run({"gw", loss_file(dir / "good.csv", good), loss_file(dir / "bad.csv", bad), "--matrix",
                           matrix, "--label", "h1"});
    EXPECT_EQ(o.code, cli::exit_ok) << o.err;
    EXPECT_NE(o.out.find("(good)"), std::string::npos) << o.out;
    EXPECT_EQ(read_text(matrix), "horizon,good,bad\nh1,100.0,0.0\n");
}

TEST(Gw, MalformedCsvExitsSixtyFive) {
    TempDir dir("cli-gw");
    const std::string ok = loss_file(dir / "a.csv", std::vector<double>(40, 1.0));
    write_text(dir / "bad.csv", "coin,anchor_date,loss\nBTC,2021-01-01,abc\n");
    EXPECT_EQ(run({"gw", ok, (dir / "bad.csv").string()}).code, cli::exit_input_format);
    write_text(dir / "short.csv", "coin,anchor_date,loss\nBTC,2021-01-01\n");
    EXPECT_EQ(run({"gw", ok, (dir / "short.csv").string()}).code, cli::exit_input_format);
    EXPECT_THROW(cli::read_loss_csv(dir / "bad.csv"), ParseError);
}

TEST(Baseline, NaiveAndEsShareTheBacktestLayout) {
    Workspace w;
    for (const char* model : {"naive", "es"}) {
        const fs::path a = w.root / (std::string(model) + "_a"), b = w.root / (std::string(model) + "_b");
        for (const fs::path& out : {a, b}) {
            const Outcome o = run({"baseline", w.data.string(), "--model", model, "--horizon", "7", "--from",
                                   "2020-05-01", "--to", "2020-05-30", "--out", out.string()});
            ASSERT_EQ(o.code, cli::exit_ok) << model << ": " << o.err;
        }
        for (const char* f : {"forecasts.csv", "metrics.csv", "losses.csv"}) {
            EXPECT_TRUE(fs::exists(a / f)) << model << " " << f;
            EXPECT_EQ(read_text(a / f), read_text(b / f)) << model << " " << f;
        }
        const std::string forecasts = read_text(a / "forecasts.csv");
        EXPECT_EQ(forecasts.substr(0, forecasts.find('\n')), "coin,anchor_date,step,point,lower,upper,actual");
    }
    const Outcome bad = run({"baseline", w.data.string(), "--model", "arima", "--from", "2020-05-01", "--to",
                             "2020-05-30", "--out", (w.root / "x").string()});
    EXPECT_EQ(bad.code, cli::exit_usage);
    const Outcome dates = run({"baseline", w.data.string(), "--from", "2020-05-30", "--to", "2020-05-01", "--out",
                               (w.root / "y").string()});
    EXPECT_EQ(dates.code, cli::exit_usage);
}

TEST(Checksum, FnvOfKnownBytes) {
    TempDir dir("cli-sum");
    write_text(dir / "empty", "");
    EXPECT_EQ(cli::file_checksum(dir / "empty"), "cbf29ce484222325");
    write_text(dir / "a", "a");
    EXPECT_EQ(cli::file_checksum(dir / "a"), "af63dc4c8601ec8c");
}
