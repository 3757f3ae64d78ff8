#pragma once

#include "cesrnn/config.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cesrnn::dataset {

using Date = std::chrono::sys_days;

// Strict YYYY-MM-DD.
Date parse_date(std::string_view text);
std::string format_date(Date date);

enum class FillPolicy { forward_fill, exclude };

struct SchemaConfig {
    std::string price_column = "avg_price_per_day";
    std::vector<std::string> excluded_columns;
    FillPolicy fill_policy = FillPolicy::forward_fill;
    // When non-empty, exactly these coins are loaded and a missing file is an error.
    std::vector<std::string> coins;
    // Coins with fewer days than this are reported and dropped.
    int min_history_days = 0;

    // Reads `price_column`, `excluded_columns`, `fill_policy` (ffill|exclude),
    // `coins` and `min_history_days`.
    static SchemaConfig from_config(const KeyValueConfig& config);
};

// One coin's daily history. Day k of the series is panel day `offset + k`.
struct CoinSeries {
    std::string coin_id;
    std::ptrdiff_t offset = 0;
    std::vector<double> prices;
    std::vector<std::vector<double>> exogenous; // [variable][day]
    // Local day indices whose values were forward-filled during loading.
    std::vector<std::ptrdiff_t> filled_days;
    std::size_t missing_cells = 0;

    std::size_t length() const { return prices.size(); }
    std::ptrdiff_t first_day() const { return offset; }
    std::ptrdiff_t last_day() const { return offset + static_cast<std::ptrdiff_t>(prices.size()) - 1; }
    bool covers(std::ptrdiff_t panel_day) const { return panel_day >= first_day() && panel_day <= last_day(); }
    std::ptrdiff_t local(std::ptrdiff_t panel_day) const { return panel_day - offset; }
};

struct ExcludedCoin {
    std::string coin_id;
    std::string reason;
    std::vector<Date> gap_dates;
};

// Per-coin daily panel sharing one variable schema and one calendar.
// Immutable after loading.
struct SeriesPanel {
    Date calendar_start{};
    std::size_t calendar_days = 0;
    std::string price_name = "avg_price_per_day";
    std::vector<std::string> exogenous_names;
    std::vector<CoinSeries> coins;
    std::vector<ExcludedCoin> excluded;

    std::size_t n_exogenous() const { return exogenous_names.size(); }
    Date date_of(std::ptrdiff_t day) const { return calendar_start + std::chrono::days(day); }
    std::ptrdiff_t day_of(Date date) const { return (date - calendar_start).count(); }
    std::ptrdiff_t last_day() const { return static_cast<std::ptrdiff_t>(calendar_days) - 1; }

    std::optional<std::size_t> find(std::string_view coin_id) const;
    const CoinSeries& coin(std::string_view coin_id) const;
};

// Loads one `<coin_id>.csv` per coin from `directory`.
// Throws LoadError, SchemaError or ParseError.
SeriesPanel load_panel(const std::filesystem::path& directory, const SchemaConfig& schema);

// Builds a panel from in-memory series, recomputing the calendar from the offsets.
SeriesPanel make_panel(Date calendar_start, std::vector<std::string> exogenous_names, std::vector<CoinSeries> coins);

// Writes a coin in the loader's CSV format.
void write_coin_csv(const std::filesystem::path& path, const SeriesPanel& panel, const CoinSeries& coin);

struct CoinReport {
    std::string coin_id;
    std::size_t nonpositive_prices = 0;
    std::size_t negative_exogenous = 0;
    std::vector<Date> gap_dates;
    std::size_t missing_cells = 0;
    bool excluded = false;
    std::string note;

    bool operator==(const CoinReport&) const = default;
};

struct ValidationReport {
    std::vector<CoinReport> coins;

    // Nonpositive prices or negative exogenous values.
    bool has_fatal() const;
    // Gaps, filled cells or excluded coins.
    bool has_warnings() const;
    std::string to_text() const;

    bool operator==(const ValidationReport&) const = default;
};

ValidationReport validate_panel(const SeriesPanel& panel);

struct DayRange {
    std::ptrdiff_t first = 0;
    std::ptrdiff_t count = 0;

    std::ptrdiff_t last() const { return first + count - 1; }
    bool contains(std::ptrdiff_t day) const { return day >= first && day < first + count; }
};

// Input window ends at `anchor`; output window covers the h following days.
struct WindowPair {
    std::ptrdiff_t anchor = 0;
    DayRange input;
    DayRange output;
    // Days of the output range that lie past the end of the series.
    std::ptrdiff_t missing_output = 0;

    bool truncated() const { return missing_output > 0; }
};

enum class WindowMode {
    training,  // the full output range must exist
    inference, // the output range may run past the series end
};

// Zero-based local day indices. Requires n - 1 <= anchor <= length - 1 and,
// in training mode, anchor + h <= length - 1. Throws RangeError.
WindowPair make_windows(std::size_t series_length, int n, int h, std::ptrdiff_t anchor,
                        WindowMode mode = WindowMode::training);

// Rolling test geometry. The test period [test_start, test_end] gets one
// anchor per day: anchor = target day - 1, so the first forecast day is
// test_start and anchor t only sees data up to t.
struct TestSplit {
    Date test_start{};
    Date test_end{};
    std::ptrdiff_t train_end = 0; // last panel day usable for training
    std::vector<std::ptrdiff_t> anchors;

    // True when the h-day window after `anchor` runs past the test period or
    // past the coin's last day.
    bool truncated(const CoinSeries& coin, std::ptrdiff_t anchor, int h) const;
};

TestSplit split_test(const SeriesPanel& panel, Date test_start, Date test_end);

// Copy of the panel with every day after `last_day` removed. Coins that end
// up empty are dropped.
SeriesPanel truncate_panel(const SeriesPanel& panel, std::ptrdiff_t last_day);

} // namespace cesrnn::dataset
