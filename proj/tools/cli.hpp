#pragma once

// Command-line front end. run() is the whole program; the stage functions are
// exposed so tests and benchmarks can drive them without going through files.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focusgate/attention_dynamics.hpp"
#include "focusgate/dpp_select.hpp"
#include "focusgate/mask_engine.hpp"
#include "focusgate/trace_io.hpp"

namespace focusgate::cli {

enum ExitCode : int {
    kOk = 0,
    kNoFocus = 2,
    kUsage = 64,
    kDataFormat = 65,
    kInternal = 70,
};

// Thrown for bad flag combinations and unresolvable inputs; maps to exit 64.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// "7-11", "7,8,9", "3,7-9"
std::vector<int> parse_layer_list(const std::string& text);

enum class SelectionMethod { Dpp, TopK };

struct SelectConfig {
    SelectionMethod method = SelectionMethod::Dpp;
    std::optional<double> ratio;
    bool ratio_means_retained = false;
    std::optional<std::vector<int>> source_layers;
    std::optional<int> feature_layer;
    std::optional<std::vector<int>> target_layers;
    std::optional<ModelMaskProfile> profile;
    PhaseConfig phases;
    double jitter_rel = 1e-6;
    unsigned threads = 0;
};

struct ResolvedLayers {
    std::vector<int> source_layers;
    int feature_layer = 0;
    std::vector<int> target_layers;
    double ratio = 0.0;
    // Where each value came from: "flag", "profile", "phases" or "features".
    nlohmann::json origin;
};

ResolvedLayers resolve_layers(const SelectConfig& cfg, const AttentionTrace& trace, const FeatureDump& features);

struct SelectionRun {
    ResolvedLayers layers;
    SelectionResult selection;
    AdditiveMask mask;
    double selection_seconds = 0.0;  // importance + similarity + kernel + greedy
};

SelectionRun select_stage(const SelectConfig& cfg, const AttentionTrace& trace, const FeatureDump& features);

nlohmann::json selection_json(const SelectionRun& run, const SelectConfig& cfg);

ModelMaskProfile find_profile(const std::string& name_or_path);

int run(int argc, char** argv);
int run(const std::vector<std::string>& args);

}  // namespace focusgate::cli
