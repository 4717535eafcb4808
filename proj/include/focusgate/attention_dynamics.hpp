#pragma once

// Layer-wise attention concentration (max score over entropy) and detection
// of the diffusion / focus / rediffusion phase boundaries.

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "focusgate/trace_io.hpp"

namespace focusgate {

struct LayerHeadStats {
    int layer = 0;
    std::size_t head = 0;
    double entropy = 0.0;    // nats
    double max_score = 0.0;
};

struct ConcentrationProfile {
    std::vector<int> layer_ids;
    std::vector<double> mean_max;
    std::vector<double> mean_entropy;
    std::vector<double> ratio;                 // R per layer
    std::vector<std::optional<double>> delta;  // R(l) - R(l-1); empty for the first layer

    std::size_t size() const { return ratio.size(); }
};

struct PhaseConfig {
    double lambda = 2.0;
    double baseline_fraction = 0.25;
    double window_fraction = 0.30;
    // Choose 0.30 or 0.40 from the width of the post-onset plateau.
    bool auto_window = false;
    double sigma_floor = 1e-6;

    void validate() const;
};

// Inclusive range of absolute layer ids.
struct LayerInterval {
    int first = 0;
    int last = 0;
};

struct PhaseProfile {
    int l_start = 0;             // absolute layer ids
    int l_end = 0;
    std::size_t start_pos = 0;   // positions within the profile
    std::size_t end_pos = 0;
    std::size_t window = 0;      // K
    double window_fraction = 0.0;
    double baseline_mean = 0.0;
    double baseline_std = 0.0;
    double threshold = 0.0;
    double lambda = 0.0;
    std::optional<LayerInterval> diffusion;
    LayerInterval focus;
    std::optional<LayerInterval> rediffusion;

    // "diffusion", "focus" or "rediffusion" for the layer at `pos`.
    std::string phase_of(std::size_t pos) const;
};

// No ΔR crossed the onset threshold.
struct NoFocusDetected {
    double baseline_mean = 0.0;
    double baseline_std = 0.0;
    double threshold = 0.0;
    double max_delta = 0.0;
};

using PhaseOutcome = std::variant<PhaseProfile, NoFocusDetected>;

// CLS attention over the N patch tokens, CLS self-weight removed and
// renormalized.
std::vector<double> cls_distribution(const AttentionTrace& trace, int layer_id, std::size_t head);

// Column means of the patch-to-patch block of a full attention matrix. With a
// CLS token present its row and column are dropped and the result renormalized.
std::vector<double> query_averaged_distribution(const AttentionTrace& trace, int layer_id, std::size_t head);

// cls_distribution when the trace has a CLS token, query averaging otherwise.
std::vector<double> layer_distribution(const AttentionTrace& trace, int layer_id, std::size_t head);

// Shannon entropy in nats, 0 ln 0 = 0. Throws on negative entries.
double entropy(std::span<const double> dist);
double max_score(std::span<const double> dist);

std::vector<LayerHeadStats> layer_head_stats(const AttentionTrace& trace);

ConcentrationProfile concentration_profile(const AttentionTrace& trace, double sigma_floor = 1e-6);
// Profile from precomputed per-layer head means.
ConcentrationProfile concentration_profile(std::vector<int> layer_ids, std::vector<double> mean_max,
                                           std::vector<double> mean_entropy, double sigma_floor = 1e-6);
// Profile from raw R values (synthetic curves, re-analysis of exported CSVs).
ConcentrationProfile profile_from_ratios(std::vector<int> layer_ids, std::vector<double> ratio);

PhaseOutcome detect_phases(const ConcentrationProfile& profile, const PhaseConfig& cfg = {});

nlohmann::json to_json(const ConcentrationProfile& profile);
nlohmann::json to_json(const PhaseProfile& phases);
nlohmann::json to_json(const NoFocusDetected& outcome);
// Columns: layer,R,delta_R,phase. phase is empty when no focus was detected.
std::string profile_csv(const ConcentrationProfile& profile, const PhaseProfile* phases);

}  // namespace focusgate
