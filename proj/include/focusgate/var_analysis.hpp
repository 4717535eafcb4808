#pragma once

// Visual Attention Ratio: the attention mass a generated token puts on the
// visual span of the decoder context, aggregated per image and per
// (layer, head), with a Welch test for shifts between conditions.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focusgate/trace_io.hpp"

namespace focusgate {

struct VarStats {
    std::string condition_label;
    std::vector<int> layer_ids;
    std::size_t num_heads = 0;
    std::size_t num_tokens = 0;
    std::vector<double> values;  // [token][layer][head]
    std::vector<double> grid;    // [layer][head], mean over tokens
    double image_mean = 0.0;

    double at(std::size_t token, std::size_t layer_pos, std::size_t head) const;
    double grid_at(std::size_t layer_pos, std::size_t head) const;
};

struct WelchResult {
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    double mean_a = 0.0;
    double mean_b = 0.0;
    std::string direction;  // "a>b", "a<b" or "a=b"
};

double var_per_token(const DecoderTrace& trace, std::size_t token, std::size_t layer_pos, std::size_t head);

VarStats var_stats(const DecoderTrace& trace, std::string label);

// Welch's unequal-variance t-test, two-sided.
WelchResult compare_conditions(const std::vector<double>& a, const std::vector<double>& b);

// Columns: layer,head,mean_var
std::string grid_csv(const VarStats& stats);
nlohmann::json to_json(const WelchResult& r);

}  // namespace focusgate
