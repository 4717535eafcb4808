#pragma once

// Additive attention masks (0 / -inf per token) and continuous logit shifts
// for the focus-phase intervention, plus the mask.json contract consumed by
// the model bridge.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focusgate/dpp_select.hpp"
#include "focusgate/trace_io.hpp"

namespace focusgate {

inline constexpr int kMaskFileVersion = 1;

struct ModelMaskProfile {
    std::string model_id;
    double masking_ratio = 0.0;  // fraction of patch tokens suppressed
    std::vector<int> source_layers;
    int feature_layer = 0;
    std::vector<int> target_layers;

    void validate() const;
};

ModelMaskProfile profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelMaskProfile& profile);
ModelMaskProfile load_profile(const std::filesystem::path& path);

enum class ModulationMode { Mask, InverseMask, LogitShift };

std::string to_string(ModulationMode mode);
ModulationMode modulation_mode_from_string(const std::string& s);

// Per-token additive logit bias with its bookkeeping. build_mask always yields
// mode Mask; build_modulation covers all three modes.
struct AdditiveMask {
    std::string model_id;
    std::vector<int> target_layers;
    std::size_t n_total = 0;
    std::optional<std::size_t> cls_index;
    ModulationMode mode = ModulationMode::Mask;
    std::vector<std::size_t> retained;  // absolute token indices, ascending
    std::vector<std::size_t> group;     // modulated tokens (modulation specs only)
    double delta = 0.0;                 // logit shift, LogitShift only
    // 0 for retained tokens, -inf for suppressed ones, delta for shifted ones.
    std::vector<double> values;

    bool is_suppressed(std::size_t token) const;
};

using ModulationSpec = AdditiveMask;

// Retains the selected patches (patch ids, 0-based) and the CLS token.
AdditiveMask build_mask(const SelectionResult& selection, const TraceHeader& header,
                        const std::vector<int>& target_layers);

// `group` holds absolute token indices.
ModulationSpec build_modulation(const std::vector<std::size_t>& group, ModulationMode mode, double delta,
                                const std::vector<int>& target_layers, std::size_t n_total,
                                std::optional<std::size_t> cls_index, std::string model_id = {});

// Patch tokens not in `selection`, as absolute token indices: the low-attention
// group used for modulation experiments.
std::vector<std::size_t> complement_group(const SelectionResult& selection, const TraceHeader& header);

// softmax(logits + mask) with suppressed entries forced to exactly zero.
std::vector<double> apply_mask_offline(std::span<const double> logits, const AdditiveMask& mask);

nlohmann::json to_json(const AdditiveMask& mask);
AdditiveMask mask_from_json(const nlohmann::json& j);

}  // namespace focusgate
