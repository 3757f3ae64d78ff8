#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cesrnn::cli {

// Fixed exit-code contract of the `cesrnn` binary.
enum ExitCode : int {
    exit_ok = 0,
    exit_data_error = 2,
    exit_training_failure = 3,
    exit_usage = 64,
    exit_input_format = 65,
};

// Entry point: `cesrnn <validate|train|backtest|gw|baseline> ...`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

struct LossTable {
    std::vector<std::string> coins;
    std::vector<std::string> dates;
    std::vector<double> losses;
};

// Reads `coin,anchor_date,loss`; throws ParseError on malformed input.
LossTable read_loss_csv(const std::filesystem::path& path);

} // namespace cesrnn::cli
