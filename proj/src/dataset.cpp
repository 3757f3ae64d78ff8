#include "cesrnn/dataset.hpp"

#include "cesrnn/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace cesrnn::dataset {

namespace fs = std::filesystem;
using std::chrono::days;

Date parse_date(std::string_view text) {
    const std::string s = trim(text);
    int y = 0;
    unsigned m = 0, d = 0;
    auto digits = [&](std::size_t pos, std::size_t len, auto& out) {
        if (pos + len > s.size()) {
            return false;
        }
        const auto [ptr, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        return ec == std::errc() && ptr == s.data() + pos + len;
    };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !digits(0, 4, y) || !digits(5, 2, m) || !digits(8, 2, d)) {
        throw ArgumentError("invalid date `" + s + "` (expected YYYY-MM-DD)");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) {
        throw ArgumentError("invalid calendar date `" + s + "`");
    }
    return Date(ymd);
}

std::string format_date(Date date) {
    const std::chrono::year_month_day ymd{date};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

SchemaConfig SchemaConfig::from_config(const KeyValueConfig& config) {
    SchemaConfig schema;
    schema.price_column = config.get_string("price_column", schema.price_column);
    schema.excluded_columns = config.get_list("excluded_columns");
    const std::string policy = config.get_string("fill_policy", "ffill");
    if (policy == "ffill") {
        schema.fill_policy = FillPolicy::forward_fill;
    } else if (policy == "exclude") {
        schema.fill_policy = FillPolicy::exclude;
    } else {
        throw ConfigError("fill_policy must be `ffill` or `exclude`, got `" + policy + "`");
    }
    schema.coins = config.get_list("coins");
    schema.min_history_days = config.get_int("min_history_days", 0);
    return schema;
}

std::optional<std::size_t> SeriesPanel::find(std::string_view coin_id) const {
    for (std::size_t i = 0; i < coins.size(); ++i) {
        if (coins[i].coin_id == coin_id) {
            return i;
        }
    }
    return std::nullopt;
}

const CoinSeries& SeriesPanel::coin(std::string_view coin_id) const {
    const auto i = find(coin_id);
    if (!i) {
        throw ArgumentError("coin `" + std::string(coin_id) + "` is not in the panel");
    }
    return coins[*i];
}

namespace {

struct RawRow {
    Date date;
    std::vector<double> values; // price first, then exogenous in schema order; NaN = missing
};

struct RawCoin {
    std::string coin_id;
    std::vector<RawRow> rows;
};

bool is_missing_token(const std::string& cell) {
    return cell.empty() || cell == "NA" || cell == "na" || cell == "nan" || cell == "NaN";
}

std::vector<std::string> read_header(std::istream& in, const std::string& file) {
    std::string line;
    if (!std::getline(in, line)) {
        throw SchemaError(file + ": empty file (no header row)");
    }
    std::vector<std::string> columns;
    for (const std::string& c : split(line, ',')) {
        columns.push_back(trim(c));
    }
    if (columns.empty() || columns.front() != "date") {
        throw SchemaError(file + ": first column must be `date`");
    }
    return columns;
}

RawCoin read_coin(const fs::path& path, const SchemaConfig& schema, const std::string& price_name,
                  std::vector<std::string>& exo_names, bool first_file) {
    const std::string file = path.string();
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot open " + file);
    }
    const std::vector<std::string> header = read_header(in, file);

    std::set<std::string> excluded(schema.excluded_columns.begin(), schema.excluded_columns.end());
    std::vector<std::string> kept;
    std::vector<std::size_t> kept_pos;
    bool has_price = false;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (excluded.count(header[c]) != 0) {
            continue;
        }
        if (std::find(kept.begin(), kept.end(), header[c]) != kept.end()) {
            throw SchemaError(file + ": duplicate column `" + header[c] + "`");
        }
        kept.push_back(header[c]);
        kept_pos.push_back(c);
        has_price = has_price || header[c] == price_name;
    }
    if (!has_price) {
        throw SchemaError(file + ": missing price column `" + price_name + "`");
    }

    std::vector<std::string> file_exo;
    for (const std::string& k : kept) {
        if (k != price_name) {
            file_exo.push_back(k);
        }
    }
    if (first_file) {
        exo_names = file_exo;
    } else {
        std::vector<std::string> a = exo_names, b = file_exo;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        if (a != b) {
            throw SchemaError(file + ": column set differs from the panel schema");
        }
    }

    // Map canonical slot -> file column position.
    std::vector<std::size_t> slot_pos(exo_names.size() + 1);
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (kept[i] == price_name) {
            slot_pos[0] = kept_pos[i];
        } else {
            const auto at = std::find(exo_names.begin(), exo_names.end(), kept[i]) - exo_names.begin();
            slot_pos[static_cast<std::size_t>(at) + 1] = kept_pos[i];
        }
    }

    RawCoin coin;
    coin.coin_id = path.stem().string();
    std::string line;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) {
            continue;
        }
        std::vector<std::string> cells = split(line, ',');
        if (cells.size() != header.size()) {
            throw ParseError(file, row_no, cells.size(),
                             "expected " + std::to_string(header.size()) + " cells, found " +
                                 std::to_string(cells.size()));
        }
        RawRow row;
        try {
            row.date = parse_date(cells[0]);
        } catch (const ArgumentError& e) {
            throw ParseError(file, row_no, 1, e.what());
        }
        row.values.resize(slot_pos.size());
        for (std::size_t s = 0; s < slot_pos.size(); ++s) {
            const std::string cell = trim(cells[slot_pos[s]]);
            if (is_missing_token(cell)) {
                row.values[s] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                throw ParseError(file, row_no, slot_pos[s] + 1, "non-numeric cell `" + cell + "`");
            }
            row.values[s] = v;
        }
        if (!coin.rows.empty() && row.date <= coin.rows.back().date) {
            throw ParseError(file, row_no, 1,
                             "date " + format_date(row.date) + " is not after " + format_date(coin.rows.back().date));
        }
        coin.rows.push_back(std::move(row));
    }
    return coin;
}

struct Assembled {
    std::optional<CoinSeries> series;
    std::optional<ExcludedCoin> excluded;
    Date first{};
};

Assembled assemble(RawCoin raw, const SchemaConfig& schema, std::size_t n_exo) {
    Assembled out;
    if (raw.rows.empty()) {
        out.excluded = ExcludedCoin{raw.coin_id, "no data rows", {}};
        return out;
    }

    std::vector<Date> gaps;
    for (std::size_t r = 1; r < raw.rows.size(); ++r) {
        for (Date d = raw.rows[r - 1].date + days(1); d < raw.rows[r].date; d += days(1)) {
            gaps.push_back(d);
        }
    }
    std::size_t missing = 0;
    for (const RawRow& row : raw.rows) {
        missing += static_cast<std::size_t>(
            std::count_if(row.values.begin(), row.values.end(), [](double v) { return std::isnan(v); }));
    }

    if (schema.fill_policy == FillPolicy::exclude && (!gaps.empty() || missing > 0)) {
        std::string reason = std::to_string(gaps.size()) + " missing day(s), " + std::to_string(missing) +
                             " missing cell(s) under fill_policy=exclude";
        out.excluded = ExcludedCoin{raw.coin_id, reason, gaps};
        return out;
    }
    for (double v : raw.rows.front().values) {
        if (std::isnan(v)) {
            out.excluded = ExcludedCoin{raw.coin_id, "missing value on the first day cannot be forward-filled", gaps};
            return out;
        }
    }

    CoinSeries s;
    s.coin_id = raw.coin_id;
    s.exogenous.assign(n_exo, {});
    s.missing_cells = missing;
    std::vector<double> last = raw.rows.front().values;
    auto append = [&](const std::vector<double>& values) {
        s.prices.push_back(values[0]);
        for (std::size_t i = 0; i < n_exo; ++i) {
            s.exogenous[i].push_back(values[i + 1]);
        }
    };
    for (std::size_t r = 0; r < raw.rows.size(); ++r) {
        if (r > 0) {
            for (Date d = raw.rows[r - 1].date + days(1); d < raw.rows[r].date; d += days(1)) {
                s.filled_days.push_back(static_cast<std::ptrdiff_t>(s.prices.size()));
                append(last);
            }
        }
        std::vector<double> values = raw.rows[r].values;
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (std::isnan(values[k])) {
                values[k] = last[k];
            }
        }
        append(values);
        last = std::move(values);
    }

    if (schema.min_history_days > 0 && s.length() < static_cast<std::size_t>(schema.min_history_days)) {
        out.excluded = ExcludedCoin{raw.coin_id,
                                    "insufficient history: " + std::to_string(s.length()) + " days < " +
                                        std::to_string(schema.min_history_days),
                                    gaps};
        return out;
    }
    out.first = raw.rows.front().date;
    out.series = std::move(s);
    return out;
}

} // namespace

SeriesPanel make_panel(Date calendar_start, std::vector<std::string> exogenous_names, std::vector<CoinSeries> coins) {
    SeriesPanel panel;
    panel.exogenous_names = std::move(exogenous_names);
    if (coins.empty()) {
        panel.calendar_start = calendar_start;
        return panel;
    }
    std::ptrdiff_t lo = coins.front().offset, hi = coins.front().last_day();
    for (const CoinSeries& c : coins) {
        if (c.exogenous.size() != panel.exogenous_names.size()) {
            throw SchemaError("coin `" + c.coin_id + "` has " + std::to_string(c.exogenous.size()) +
                              " exogenous variables, schema has " + std::to_string(panel.exogenous_names.size()));
        }
        for (const auto& p : c.exogenous) {
            if (p.size() != c.prices.size()) {
                throw SchemaError("coin `" + c.coin_id + "`: exogenous length differs from price length");
            }
        }
        lo = std::min(lo, c.offset);
        hi = std::max(hi, c.last_day());
    }
    panel.calendar_start = calendar_start + days(lo);
    panel.calendar_days = static_cast<std::size_t>(hi - lo + 1);
    for (CoinSeries& c : coins) {
        c.offset -= lo;
    }
    panel.coins = std::move(coins);
    return panel;
}

SeriesPanel load_panel(const fs::path& directory, const SchemaConfig& schema) {
    if (!fs::is_directory(directory)) {
        throw LoadError("data directory " + directory.string() + " does not exist");
    }
    std::vector<fs::path> files;
    if (!schema.coins.empty()) {
        for (const std::string& coin : schema.coins) {
            const fs::path p = directory / (coin + ".csv");
            if (!fs::exists(p)) {
                throw LoadError("missing file for coin `" + coin + "`: " + p.string());
            }
            files.push_back(p);
        }
    } else {
        for (const auto& entry : fs::directory_iterator(directory)) {
            if (entry.is_regular_file() && entry.path().extension() == ".csv") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
    }
    if (files.empty()) {
        throw LoadError("no coin CSV files found in " + directory.string() + " (0 files)");
    }

    std::vector<std::string> exo_names;
    std::vector<RawCoin> raws;
    for (std::size_t i = 0; i < files.size(); ++i) {
        raws.push_back(read_coin(files[i], schema, schema.price_column, exo_names, i == 0));
    }

    std::vector<CoinSeries> coins;
    std::vector<Date> firsts;
    std::vector<ExcludedCoin> excluded;
    for (RawCoin& raw : raws) {
        Assembled a = assemble(std::move(raw), schema, exo_names.size());
        if (a.series) {
            firsts.push_back(a.first);
            coins.push_back(std::move(*a.series));
        } else {
            excluded.push_back(std::move(*a.excluded));
        }
    }

    Date start{};
    if (!firsts.empty()) {
        start = *std::min_element(firsts.begin(), firsts.end());
    }
    for (std::size_t i = 0; i < coins.size(); ++i) {
        coins[i].offset = (firsts[i] - start).count();
    }
    SeriesPanel panel = make_panel(start, std::move(exo_names), std::move(coins));
    panel.price_name = schema.price_column;
    panel.excluded = std::move(excluded);
    return panel;
}

void write_coin_csv(const fs::path& path, const SeriesPanel& panel, const CoinSeries& coin) {
    std::ofstream out(path);
    if (!out) {
        throw LoadError("cannot write " + path.string());
    }
    out << "date," << panel.price_name;
    for (const std::string& name : panel.exogenous_names) {
        out << ',' << name;
    }
    out << '\n';
    char buf[64];
    for (std::size_t t = 0; t < coin.length(); ++t) {
        out << format_date(panel.date_of(coin.offset + static_cast<std::ptrdiff_t>(t)));
        std::snprintf(buf, sizeof buf, ",%.17g", coin.prices[t]);
        out << buf;
        for (const auto& p : coin.exogenous) {
            std::snprintf(buf, sizeof buf, ",%.17g", p[t]);
            out << buf;
        }
        out << '\n';
    }
}

bool ValidationReport::has_fatal() const {
    return std::any_of(coins.begin(), coins.end(),
                       [](const CoinReport& c) { return c.nonpositive_prices > 0 || c.negative_exogenous > 0; });
}

bool ValidationReport::has_warnings() const {
    return std::any_of(coins.begin(), coins.end(), [](const CoinReport& c) {
        return !c.gap_dates.empty() || c.missing_cells > 0 || c.excluded;
    });
}

std::string ValidationReport::to_text() const {
    std::ostringstream out;
    out << "coin        status    nonpos_price  neg_exog  missing_cells  gap_days\n";
    for (const CoinReport& c : coins) {
        char line[160];
        std::snprintf(line, sizeof line, "%-10s  %-8s  %12zu  %8zu  %13zu  %8zu\n", c.coin_id.c_str(),
                      c.excluded ? "excluded" : "ok", c.nonpositive_prices, c.negative_exogenous, c.missing_cells,
                      c.gap_dates.size());
        out << line;
        if (!c.gap_dates.empty()) {
            out << "  gaps:";
            for (Date d : c.gap_dates) {
                out << ' ' << format_date(d);
            }
            out << '\n';
        }
        if (!c.note.empty()) {
            out << "  note: " << c.note << '\n';
        }
    }
    return out.str();
}

ValidationReport validate_panel(const SeriesPanel& panel) {
    ValidationReport report;
    for (const CoinSeries& c : panel.coins) {
        CoinReport r;
        r.coin_id = c.coin_id;
        r.nonpositive_prices =
            static_cast<std::size_t>(std::count_if(c.prices.begin(), c.prices.end(), [](double z) { return !(z > 0.0); }));
        for (const auto& p : c.exogenous) {
            r.negative_exogenous +=
                static_cast<std::size_t>(std::count_if(p.begin(), p.end(), [](double v) { return !(v >= 0.0); }));
        }
        for (std::ptrdiff_t d : c.filled_days) {
            r.gap_dates.push_back(panel.date_of(c.offset + d));
        }
        r.missing_cells = c.missing_cells;
        if (!r.gap_dates.empty()) {
            r.note = "forward-filled " + std::to_string(r.gap_dates.size()) + " missing day(s)";
        }
        report.coins.push_back(std::move(r));
    }
    for (const ExcludedCoin& e : panel.excluded) {
        CoinReport r;
        r.coin_id = e.coin_id;
        r.excluded = true;
        r.gap_dates = e.gap_dates;
        r.note = e.reason;
        report.coins.push_back(std::move(r));
    }
    return report;
}

WindowPair make_windows(std::size_t series_length, int n, int h, std::ptrdiff_t anchor, WindowMode mode) {
    if (n < 1 || h < 1) {
        throw RangeError("window sizes must be positive (n=" + std::to_string(n) + ", h=" + std::to_string(h) + ")");
    }
    const auto length = static_cast<std::ptrdiff_t>(series_length);
    if (anchor < n - 1 || anchor > length - 1) {
        throw RangeError("anchor " + std::to_string(anchor) + " outside [" + std::to_string(n - 1) + ", " +
                         std::to_string(length - 1) + "] for n=" + std::to_string(n));
    }
    WindowPair w;
    w.anchor = anchor;
    w.input = DayRange{anchor - n + 1, n};
    w.output = DayRange{anchor + 1, h};
    w.missing_output = std::max<std::ptrdiff_t>(0, anchor + h - (length - 1));
    if (mode == WindowMode::training && w.truncated()) {
        throw RangeError("training window at anchor " + std::to_string(anchor) + " needs " + std::to_string(h) +
                         " output days, series ends at " + std::to_string(length - 1));
    }
    return w;
}

bool TestSplit::truncated(const CoinSeries& coin, std::ptrdiff_t anchor, int h) const {
    const std::ptrdiff_t last = anchors.empty() ? coin.last_day() : std::min(coin.last_day(), anchors.back() + 1);
    return anchor + h > last;
}

TestSplit split_test(const SeriesPanel& panel, Date test_start, Date test_end) {
    if (test_end < test_start) {
        throw RangeError("test period ends (" + format_date(test_end) + ") before it starts (" +
                         format_date(test_start) + ")");
    }
    const std::ptrdiff_t first = panel.day_of(test_start);
    const std::ptrdiff_t last = panel.day_of(test_end);
    if (first < 1 || last > panel.last_day()) {
        throw RangeError("test period " + format_date(test_start) + ".." + format_date(test_end) +
                         " is outside the panel range " + format_date(panel.date_of(1)) + ".." +
                         format_date(panel.date_of(panel.last_day())));
    }
    TestSplit split;
    split.test_start = test_start;
    split.test_end = test_end;
    split.train_end = first - 1;
    for (std::ptrdiff_t day = first; day <= last; ++day) {
        split.anchors.push_back(day - 1);
    }
    return split;
}

SeriesPanel truncate_panel(const SeriesPanel& panel, std::ptrdiff_t last_day) {
    SeriesPanel out;
    out.calendar_start = panel.calendar_start;
    out.calendar_days = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(last_day + 1, 0, panel.last_day() + 1));
    out.price_name = panel.price_name;
    out.exogenous_names = panel.exogenous_names;
    out.excluded = panel.excluded;
    for (const CoinSeries& c : panel.coins) {
        if (c.offset > last_day) {
            continue;
        }
        CoinSeries t = c;
        const auto keep = static_cast<std::size_t>(std::min(c.last_day(), last_day) - c.offset + 1);
        t.prices.resize(keep);
        for (auto& p : t.exogenous) {
            p.resize(keep);
        }
        std::erase_if(t.filled_days, [&](std::ptrdiff_t d) { return d >= static_cast<std::ptrdiff_t>(keep); });
        out.coins.push_back(std::move(t));
    }
    return out;
}

} // namespace cesrnn::dataset
