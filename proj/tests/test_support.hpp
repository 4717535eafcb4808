#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "focusgate/trace_io.hpp"

namespace testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("focusgate_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Row-stochastic float rows from exponentiated normals.
inline void fill_stochastic(std::span<float> values, std::size_t row_len, std::mt19937_64& rng) {
    std::normal_distribution<double> z;
    for (std::size_t start = 0; start < values.size(); start += row_len) {
        std::vector<double> w(row_len);
        double sum = 0.0;
        for (double& x : w) {
            x = std::exp(z(rng));
            sum += x;
        }
        for (std::size_t i = 0; i < row_len; ++i) values[start + i] = static_cast<float>(w[i] / sum);
    }
}

inline focusgate::AttentionTrace random_full_trace(std::vector<int> layers, std::size_t heads, std::size_t n_total,
                                                   bool has_cls, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    focusgate::AttentionTrace t(focusgate::vision_header("rand", std::move(layers), heads, n_total, has_cls));
    fill_stochastic(t.values(), n_total, rng);
    return t;
}

}  // namespace testing
