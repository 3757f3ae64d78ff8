#pragma once

// Shared helpers for the unit tests: a small seeded generator for property
// tests and a scratch directory that cleans up after itself.

#include "cesrnn/autodiff.hpp"
#include "cesrnn/dataset.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace cesrnn::testing {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    // Positive value spread over several orders of magnitude.
    double positive(double lo_exp = -3.0, double hi_exp = 6.0) { return std::pow(10.0, uniform(lo_exp, hi_exp)); }

    std::vector<double> normals(std::size_t n, double sd = 1.0) {
        std::vector<double> v(n);
        for (double& x : v) {
            x = normal(sd);
        }
        return v;
    }
    std::vector<double> positives(std::size_t n, double lo_exp = -3.0, double hi_exp = 6.0) {
        std::vector<double> v(n);
        for (double& x : v) {
            x = positive(lo_exp, hi_exp);
        }
        return v;
    }
    ad::Vector vector(Eigen::Index n, double scale = 1.0) {
        ad::Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v[i] = uniform(-scale, scale);
        }
        return v;
    }
    void fill(ad::Parameter& p, double scale) {
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            p.value().data()[i] = uniform(-scale, scale);
        }
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

// Runs `body` on `cases` generators seeded from `seed`; failures report the case.
inline void for_all(int cases, std::uint64_t seed, const std::function<void(Gen&)>& body) {
    for (int k = 0; k < cases; ++k) {
        SCOPED_TRACE("property case " + std::to_string(k));
        Gen g(seed * 1000003u + static_cast<std::uint64_t>(k));
        body(g);
        if (::testing::Test::HasFatalFailure()) {
            return;
        }
    }
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("cesrnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_panel(const std::filesystem::path& dir, const dataset::SeriesPanel& panel) {
    for (const auto& coin : panel.coins) {
        dataset::write_coin_csv(dir / (coin.coin_id + ".csv"), panel, coin);
    }
}

} // namespace cesrnn::testing
