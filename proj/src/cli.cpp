#include "cesrnn/cli.hpp"

#include "cesrnn/config.hpp"
#include "cesrnn/dataset.hpp"
#include "cesrnn/errors.hpp"
#include "cesrnn/loss_metrics.hpp"
#include "cesrnn/trainer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace cesrnn::cli {

namespace fs = std::filesystem;

std::string file_checksum(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError("cannot read " + path.string());
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

LossTable read_loss_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot read loss file " + path.string());
    }
    const std::string file = path.string();
    std::string line;
    if (!std::getline(in, line) || trim(line) != "coin,anchor_date,loss") {
        throw ParseError(file, 1, 1, "expected header `coin,anchor_date,loss`");
    }
    LossTable table;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split(line, ',');
        if (cells.size() != 3) {
            throw ParseError(file, row, 1, "expected 3 fields, found " + std::to_string(cells.size()));
        }
        const std::string coin = trim(cells[0]);
        const std::string date = trim(cells[1]);
        const std::string value = trim(cells[2]);
        if (coin.empty()) {
            throw ParseError(file, row, 1, "empty coin id");
        }
        try {
            dataset::parse_date(date);
        } catch (const ArgumentError&) {
            throw ParseError(file, row, 2, "bad date `" + date + "`");
        }
        double loss = 0.0;
        const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), loss);
        if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(loss)) {
            throw ParseError(file, row, 3, "bad loss value `" + value + "`");
        }
        table.coins.push_back(coin);
        table.dates.push_back(date);
        table.losses.push_back(loss);
    }
    return table;
}

namespace {

int fail(std::ostream& err, const std::exception& e, int code) {
    err << "error: " << e.what() << '\n';
    return code;
}

// Maps library exceptions onto the exit-code contract; anything not
// otherwise classified exits with `fallback`.
template <class F>
int guarded(std::ostream& err, int fallback, F&& body) {
    try {
        return body();
    } catch (const DivergenceError& e) {
        return fail(err, e, exit_training_failure);
    } catch (const ParseError& e) {
        return fail(err, e, exit_input_format);
    } catch (const DataError& e) {
        return fail(err, e, exit_data_error);
    } catch (const ConfigError& e) {
        return fail(err, e, exit_usage);
    } catch (const ArgumentError& e) {
        return fail(err, e, exit_usage);
    } catch (const RangeError& e) {
        return fail(err, e, exit_usage);
    } catch (const StateError& e) {
        return fail(err, e, exit_data_error);
    } catch (const std::exception& e) {
        return fail(err, e, fallback);
    }
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw StateError("cannot write " + path.string());
    }
    out << text;
}

// defaults < config file < CESRNN_SEED < flags
KeyValueConfig resolve_config(const std::string& config_path, const std::map<std::string, std::string>& flags) {
    KeyValueConfig cfg;
    trainer::TrainingConfig{}.write(cfg);
    cfg.set("price_column", dataset::SchemaConfig{}.price_column);
    cfg.set("fill_policy", "ffill");
    if (!config_path.empty()) {
        if (!fs::exists(config_path)) {
            throw ArgumentError("config file " + config_path + " does not exist");
        }
        cfg.merge(KeyValueConfig::from_file(config_path));
    }
    if (const char* env = std::getenv("CESRNN_SEED"); env != nullptr && *env != '\0') {
        cfg.set("seed", env);
    }
    for (const auto& [k, v] : flags) {
        cfg.set(k, v);
    }
    return cfg;
}

void add_checksums(KeyValueConfig& manifest, const fs::path& data_dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".csv") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
        manifest.set("checksum." + f.filename().string(), file_checksum(f));
    }
}

int default_jobs() { return static_cast<int>(std::max(1U, std::thread::hardware_concurrency())); }

struct DataOptions {
    std::string data_dir;
    std::string config_path;
};

void write_backtest(const fs::path& out_dir, const dataset::SeriesPanel& panel, const trainer::BacktestResult& r,
                    KeyValueConfig manifest, const fs::path& data_dir, std::ostream& out) {
    fs::create_directories(out_dir);
    write_file(out_dir / "forecasts.csv", r.forecast_csv(panel));
    write_file(out_dir / "metrics.csv", r.report.to_csv());
    write_file(out_dir / "losses.csv", r.loss_csv(panel));
    add_checksums(manifest, data_dir);
    write_file(out_dir / "manifest.txt", manifest.to_text());
    out << r.report.to_table();
}

int cmd_validate(const DataOptions& o, const std::string& fill, std::ostream& out) {
    std::map<std::string, std::string> flags;
    if (!fill.empty()) {
        flags["fill_policy"] = fill;
    }
    const KeyValueConfig cfg = resolve_config(o.config_path, flags);
    const dataset::SeriesPanel panel = dataset::load_panel(o.data_dir, dataset::SchemaConfig::from_config(cfg));
    const dataset::ValidationReport report = dataset::validate_panel(panel);
    out << report.to_text();
    if (report.has_fatal()) {
        out << "fatal defects found\n";
        return exit_data_error;
    }
    out << (report.has_warnings() ? "ok (with warnings)\n" : "ok\n");
    return exit_ok;
}

struct TrainOptions {
    DataOptions data;
    std::string out_dir;
    std::map<std::string, std::string> flags;
    std::string train_end;
    std::string test_start;
    int jobs = 0;
};

int cmd_train(const TrainOptions& o, std::ostream& out) {
    KeyValueConfig cfg = resolve_config(o.data.config_path, o.flags);
    const dataset::SeriesPanel full = dataset::load_panel(o.data.data_dir, dataset::SchemaConfig::from_config(cfg));
    const auto n_exo = std::to_string(full.n_exogenous());
    if (cfg.contains("n_exogenous") && cfg.get_int("n_exogenous", 0) != 0 &&
        *cfg.get("n_exogenous") != n_exo) {
        throw ConfigError("config sets n_exogenous = " + *cfg.get("n_exogenous") + " but the panel has " + n_exo +
                          " exogenous columns");
    }
    cfg.set("n_exogenous", n_exo);

    std::ptrdiff_t last = full.last_day();
    if (!o.train_end.empty() && !o.test_start.empty()) {
        throw ArgumentError("give at most one of --train-end and --test-start");
    }
    if (!o.train_end.empty()) {
        last = full.day_of(dataset::parse_date(o.train_end));
    } else if (!o.test_start.empty()) {
        last = full.day_of(dataset::parse_date(o.test_start)) - 1;
    }
    if (last < 0 || last > full.last_day()) {
        throw RangeError("training end lies outside the panel " + dataset::format_date(full.date_of(0)) + ".." +
                         dataset::format_date(full.date_of(full.last_day())));
    }
    const dataset::SeriesPanel panel = dataset::truncate_panel(full, last);
    const trainer::TrainingConfig config = trainer::TrainingConfig::read(cfg);
    config.validate(panel.coins.size());

    const int jobs = o.jobs > 0 ? o.jobs : default_jobs();
    const std::vector<trainer::MemberResult> members = trainer::train_ensemble(panel, config, jobs);
    trainer::save_run(o.out_dir, config, members);

    KeyValueConfig manifest = cfg;
    manifest.set("command", "train");
    manifest.set("data_dir", o.data.data_dir);
    manifest.set("train_end", dataset::format_date(panel.date_of(last)));
    add_checksums(manifest, o.data.data_dir);
    write_file(fs::path(o.out_dir) / "manifest.txt", manifest.to_text());

    for (const auto& m : members) {
        out << "member " << m.checkpoint.metadata.get_string("member", "?") << ":";
        char buf[32];
        for (const auto& e : m.epochs) {
            std::snprintf(buf, sizeof buf, " %.5f", e.mean_loss);
            out << buf;
        }
        out << '\n';
    }
    out << "wrote " << members.size() << " checkpoints to " << o.out_dir << '\n';
    return exit_ok;
}

struct RangeOptions {
    std::string from;
    std::string to;
    std::string out_dir;
};

dataset::TestSplit parse_split(const dataset::SeriesPanel& panel, const RangeOptions& r) {
    return dataset::split_test(panel, dataset::parse_date(r.from), dataset::parse_date(r.to));
}

struct BacktestOptions {
    std::string run_dir;
    DataOptions data;
    RangeOptions range;
    std::string aggregation;
    int retrain_every = 0;
    int jobs = 0;
};

int cmd_backtest(const BacktestOptions& o, std::ostream& out) {
    if (!fs::exists(fs::path(o.run_dir) / "config.txt")) {
        throw StateError("no trained run at " + o.run_dir);
    }
    KeyValueConfig cfg;
    if (fs::exists(fs::path(o.run_dir) / "manifest.txt")) {
        cfg = KeyValueConfig::from_file(fs::path(o.run_dir) / "manifest.txt");
    }
    if (!o.data.config_path.empty()) {
        cfg.merge(KeyValueConfig::from_file(o.data.config_path));
    }
    // Dates are checked before any data is read.
    dataset::parse_date(o.range.from);
    dataset::parse_date(o.range.to);
    const dataset::SeriesPanel panel = dataset::load_panel(o.data.data_dir, dataset::SchemaConfig::from_config(cfg));
    const dataset::TestSplit test = parse_split(panel, o.range);
    const int jobs = o.jobs > 0 ? o.jobs : default_jobs();

    trainer::TrainingConfig config = trainer::load_run_config(o.run_dir);
    if (!o.aggregation.empty()) {
        config.aggregation = trainer::parse_aggregation(o.aggregation);
    }
    trainer::BacktestResult result;
    if (o.retrain_every > 0) {
        result = trainer::rolling_backtest(panel, config, test, o.retrain_every, jobs);
    } else {
        trainer::Ensemble ensemble = trainer::load_run(o.run_dir);
        ensemble.aggregation = config.aggregation;
        for (const auto& m : ensemble.members) {
            const std::string end = m.metadata.get_string("train_end", "");
            if (!end.empty() && dataset::parse_date(end) >= test.test_start) {
                throw ArgumentError("members were trained through " + end + ", inside the test period starting " +
                                    dataset::format_date(test.test_start));
            }
        }
        result = trainer::backtest(ensemble, panel, test, jobs);
    }
    KeyValueConfig manifest = cfg;
    KeyValueConfig resolved;
    config.write(resolved);
    manifest.merge(resolved);
    manifest.set("command", "backtest");
    manifest.set("run_dir", o.run_dir);
    manifest.set("data_dir", o.data.data_dir);
    manifest.set("test_from", o.range.from);
    manifest.set("test_to", o.range.to);
    manifest.set("retrain_every", std::to_string(o.retrain_every));
    write_backtest(o.range.out_dir, panel, result, manifest, o.data.data_dir, out);
    return exit_ok;
}

struct BaselineOptions {
    DataOptions data;
    RangeOptions range;
    std::string model = "naive";
    int horizon = 7;
    double alpha = 0.3;
};

int cmd_baseline(const BaselineOptions& o, std::ostream& out) {
    if (o.horizon < 1) {
        throw ArgumentError("--horizon must be a positive integer");
    }
    const trainer::BaselineModel model = trainer::parse_baseline(o.model);
    dataset::parse_date(o.range.from);
    dataset::parse_date(o.range.to);
    KeyValueConfig cfg = resolve_config(o.data.config_path, {});
    const dataset::SeriesPanel panel = dataset::load_panel(o.data.data_dir, dataset::SchemaConfig::from_config(cfg));
    const dataset::TestSplit test = parse_split(panel, o.range);
    const trainer::BacktestResult result = trainer::baseline_backtest(panel, test, o.horizon, model, o.alpha);
    cfg.set("command", "baseline");
    cfg.set("model", o.model);
    cfg.set("horizon", std::to_string(o.horizon));
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", o.alpha);
    cfg.set("es_alpha", buf);
    cfg.set("data_dir", o.data.data_dir);
    cfg.set("test_from", o.range.from);
    cfg.set("test_to", o.range.to);
    write_backtest(o.range.out_dir, panel, result, cfg, o.data.data_dir, out);
    return exit_ok;
}

struct GwOptions {
    std::vector<std::string> files;
    double alpha = 0.05;
    std::string matrix_path;
    std::string label = "h";
};

const char* favored_name(metrics::Favored f) {
    switch (f) {
    case metrics::Favored::first:
        return "first";
    case metrics::Favored::second:
        return "second";
    default:
        return "none";
    }
}

int cmd_gw(const GwOptions& o, std::ostream& out) {
    if (o.files.size() < 2) {
        throw ArgumentError("gw needs at least two loss files");
    }
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) {
        throw ArgumentError("--alpha must lie in (0, 1)");
    }
    std::vector<std::map<std::string, std::map<std::string, double>>> tables; // [model][coin][date]
    std::vector<std::string> names;
    for (const std::string& f : o.files) {
        const LossTable t = read_loss_csv(f);
        std::map<std::string, std::map<std::string, double>> by_coin;
        for (std::size_t i = 0; i < t.losses.size(); ++i) {
            by_coin[t.coins[i]][t.dates[i]] = t.losses[i];
        }
        tables.push_back(std::move(by_coin));
        names.push_back(fs::path(f).stem().string());
    }
    if (std::set<std::string>(names.begin(), names.end()).size() != names.size()) {
        // Same file names in different directories: label by directory.
        for (std::size_t m = 0; m < names.size(); ++m) {
            const fs::path p(o.files[m]);
            names[m] = (p.parent_path().filename() / p.stem()).string();
        }
    }
    // Per coin: dates present in every file, in date order.
    std::vector<std::string> coins;
    std::vector<std::vector<std::vector<double>>> aligned(tables.size()); // [model][coin][t]
    for (const auto& [coin, first_dates] : tables.front()) {
        std::vector<std::string> dates;
        for (const auto& [date, loss] : first_dates) {
            bool everywhere = true;
            for (std::size_t m = 1; m < tables.size() && everywhere; ++m) {
                const auto c = tables[m].find(coin);
                everywhere = c != tables[m].end() && c->second.count(date) != 0;
            }
            if (everywhere) {
                dates.push_back(date);
            }
        }
        if (dates.size() < 30) {
            out << coin << ": " << dates.size() << " common observations, need 30; skipped\n";
            continue;
        }
        coins.push_back(coin);
        for (std::size_t m = 0; m < tables.size(); ++m) {
            std::vector<double> series;
            for (const std::string& d : dates) {
                series.push_back(tables[m].at(coin).at(d));
            }
            aligned[m].push_back(std::move(series));
        }
    }
    if (coins.empty()) {
        throw DataError("no coin has 30 common observations across the loss files");
    }
    char buf[256];
    if (tables.size() == 2) {
        std::snprintf(buf, sizeof buf, "%-8s %6s %12s %12s %s\n", "coin", "n", "statistic", "p_value", "favored");
        out << buf;
        for (std::size_t c = 0; c < coins.size(); ++c) {
            const metrics::GwResult r = metrics::gw_test(aligned[0][c], aligned[1][c], o.alpha);
            const char* who = r.favored == metrics::Favored::first    ? names[0].c_str()
                              : r.favored == metrics::Favored::second ? names[1].c_str()
                                                                       : "none";
            std::snprintf(buf, sizeof buf, "%-8s %6zu %12.6f %12.6g %s (%s)\n", coins[c].c_str(), r.observations,
                          r.statistic, r.p_value, favored_name(r.favored), who);
            out << buf;
        }
    }
    if (tables.size() > 2 || !o.matrix_path.empty()) {
        const metrics::GwMatrix matrix = metrics::gw_matrix(names, aligned, o.alpha);
        for (std::size_t m = 0; m < names.size(); ++m) {
            std::snprintf(buf, sizeof buf, "%-16s %6.1f%%\n", names[m].c_str(), matrix.percent[m]);
            out << buf;
        }
        if (!o.matrix_path.empty()) {
            write_file(o.matrix_path, matrix.to_csv(o.label));
        }
    }
    return exit_ok;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hybrid exponential smoothing + dilated RNN forecaster for daily coin panels", "cesrnn"};
    app.require_subcommand(1);

    DataOptions vdata;
    std::string fill;
    CLI::App* validate = app.add_subcommand("validate", "Load a data directory and report defects");
    validate->add_option("data_dir", vdata.data_dir, "Directory of per-coin CSV files")->required();
    validate->add_option("--config", vdata.config_path, "Key-value config file");
    validate->add_option("--fill", fill, "Gap policy: ffill or exclude");

    TrainOptions topt;
    int horizon = 0, ensemble = 0, epochs = 0, updates = 0;
    long long seed = -1;
    double lr = 0.0;
    std::string context;
    CLI::App* train = app.add_subcommand("train", "Train an ensemble and write a run directory");
    train->add_option("data_dir", topt.data.data_dir, "Directory of per-coin CSV files")->required();
    train->add_option("--config", topt.data.config_path, "Key-value config file");
    train->add_option("--out", topt.out_dir, "Run directory to create")->required();
    train->add_option("--horizon", horizon, "Forecast horizon in days");
    train->add_option("--ensemble", ensemble, "Number of members");
    train->add_option("--seed", seed, "Base seed (overrides CESRNN_SEED)");
    train->add_option("--jobs", topt.jobs, "Parallel members (default: all cores)");
    train->add_option("--epochs", epochs, "Training epochs");
    train->add_option("--updates-per-epoch", updates, "Updates per epoch (0: horizon default)");
    train->add_option("--learning-rate", lr, "Initial learning rate");
    train->add_option("--context", context, "Context-track coin");
    train->add_option("--train-end", topt.train_end, "Last training date (YYYY-MM-DD)");
    train->add_option("--test-start", topt.test_start, "First test date; training stops the day before");

    BacktestOptions bopt;
    CLI::App* backtest = app.add_subcommand("backtest", "Rolling-origin evaluation of a trained run");
    backtest->add_option("run_dir", bopt.run_dir, "Run directory written by `train`")->required();
    backtest->add_option("data_dir", bopt.data.data_dir, "Directory of per-coin CSV files")->required();
    backtest->add_option("--config", bopt.data.config_path, "Key-value config file (schema keys)");
    backtest->add_option("--from", bopt.range.from, "First test date")->required();
    backtest->add_option("--to", bopt.range.to, "Last test date")->required();
    backtest->add_option("--out", bopt.range.out_dir, "Output directory")->required();
    backtest->add_option("--aggregation", bopt.aggregation, "mean or median");
    backtest->add_option("--retrain-every", bopt.retrain_every, "Retrain every K anchors (0: never)");
    backtest->add_option("--jobs", bopt.jobs, "Parallel members (default: all cores)");

    GwOptions gopt;
    CLI::App* gw = app.add_subcommand("gw", "Giacomini-White comparison of loss files");
    gw->add_option("losses", gopt.files, "Loss CSV files (coin,anchor_date,loss)")->required()->expected(2, -1);
    gw->add_option("--alpha", gopt.alpha, "Significance level");
    gw->add_option("--matrix", gopt.matrix_path, "Write the win-percentage row to this CSV");
    gw->add_option("--label", gopt.label, "Row label of the matrix CSV");

    BaselineOptions nopt;
    CLI::App* baseline = app.add_subcommand("baseline", "Backtest a reference model");
    baseline->add_option("data_dir", nopt.data.data_dir, "Directory of per-coin CSV files")->required();
    baseline->add_option("--config", nopt.data.config_path, "Key-value config file");
    baseline->add_option("--model", nopt.model, "naive or es");
    baseline->add_option("--horizon", nopt.horizon, "Forecast horizon in days");
    baseline->add_option("--alpha", nopt.alpha, "Smoothing coefficient of the es model");
    baseline->add_option("--from", nopt.range.from, "First test date")->required();
    baseline->add_option("--to", nopt.range.to, "Last test date")->required();
    baseline->add_option("--out", nopt.range.out_dir, "Output directory")->required();

    std::vector<std::string> argv_store = args;
    if (argv_store.empty()) {
        argv_store.push_back("cesrnn");
    }
    std::vector<char*> argv;
    for (std::string& a : argv_store) {
        argv.push_back(a.data());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n' << "run `cesrnn --help` for usage\n";
        return exit_usage;
    }

    if (validate->parsed()) {
        return guarded(err, exit_data_error, [&] { return cmd_validate(vdata, fill, out); });
    }
    if (train->parsed()) {
        if (train->count("--horizon")) {
            topt.flags["horizon"] = std::to_string(horizon);
        }
        if (train->count("--ensemble")) {
            topt.flags["ensemble_size"] = std::to_string(ensemble);
        }
        if (train->count("--seed")) {
            topt.flags["seed"] = std::to_string(seed);
        }
        if (train->count("--epochs")) {
            topt.flags["epochs"] = std::to_string(epochs);
        }
        if (train->count("--updates-per-epoch")) {
            topt.flags["updates_per_epoch"] = std::to_string(updates);
        }
        if (train->count("--learning-rate")) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", lr);
            topt.flags["learning_rate"] = buf;
        }
        if (train->count("--context")) {
            topt.flags["context_series"] = context;
        }
        if (train->count("--horizon") && horizon < 1) {
            err << "usage error: --horizon must be a positive integer\n";
            return exit_usage;
        }
        return guarded(err, exit_training_failure, [&] { return cmd_train(topt, out); });
    }
    if (backtest->parsed()) {
        return guarded(err, exit_data_error, [&] { return cmd_backtest(bopt, out); });
    }
    if (gw->parsed()) {
        return guarded(err, exit_data_error, [&] { return cmd_gw(gopt, out); });
    }
    if (baseline->parsed()) {
        return guarded(err, exit_data_error, [&] { return cmd_baseline(nopt, out); });
    }
    return exit_usage;
}

} // namespace cesrnn::cli
