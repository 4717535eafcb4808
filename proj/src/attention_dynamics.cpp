#include "focusgate/attention_dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

constexpr std::size_t kMinLayersForPhases = 8;
constexpr double kDistributionTolerance = 1e-4;
constexpr double kPlateauLevel = 0.8;
constexpr double kPlateauSpan = 0.35;
constexpr double kSharpWindow = 0.30;
constexpr double kBroadWindow = 0.40;

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

void normalize(std::vector<double>& v) {
    const double sum = std::accumulate(v.begin(), v.end(), 0.0);
    if (!(sum > 0.0)) invalid("attention distribution has no mass outside the CLS token");
    for (double& x : v) x /= sum;
}

}  // namespace

void PhaseConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) invalid("lambda must be a finite non-negative number");
    if (!(baseline_fraction > 0.0 && baseline_fraction < 1.0)) invalid("baseline_fraction must lie in (0, 1)");
    if (!(window_fraction > 0.0 && window_fraction < 1.0)) invalid("window_fraction must lie in (0, 1)");
    if (!(sigma_floor > 0.0)) invalid("sigma_floor must be positive");
}

std::string PhaseProfile::phase_of(std::size_t pos) const {
    if (pos < start_pos) return "diffusion";
    if (pos <= end_pos) return "focus";
    return "rediffusion";
}

std::vector<double> cls_distribution(const AttentionTrace& trace, int layer_id, std::size_t head) {
    const TraceHeader& h = trace.header();
    if (!h.has_cls) invalid("cls_distribution requires a CLS token; use query_averaged_distribution");
    const auto row = trace.cls_row(h.layer_position(layer_id), head);
    std::vector<double> dist(row.begin() + 1, row.end());
    normalize(dist);
    return dist;
}

std::vector<double> query_averaged_distribution(const AttentionTrace& trace, int layer_id, std::size_t head) {
    const TraceHeader& h = trace.header();
    if (h.storage != Storage::Full) invalid("query averaging needs full attention matrices");
    const std::size_t pos = h.layer_position(layer_id);
    const std::size_t off = h.patch_offset();
    const std::size_t n = h.patch_count();
    std::vector<double> dist(n, 0.0);
    for (std::size_t j = off; j < h.num_tokens; ++j) {
        const auto row = trace.row(pos, head, j);
        for (std::size_t i = 0; i < n; ++i) dist[i] += row[i + off];
    }
    if (h.has_cls) {
        normalize(dist);
    } else {
        for (double& x : dist) x /= static_cast<double>(n);
    }
    return dist;
}

std::vector<double> layer_distribution(const AttentionTrace& trace, int layer_id, std::size_t head) {
    return trace.header().has_cls ? cls_distribution(trace, layer_id, head)
                                  : query_averaged_distribution(trace, layer_id, head);
}

double entropy(std::span<const double> dist) {
    double h = 0.0;
    double sum = 0.0;
    for (double p : dist) {
        if (p < 0.0) invalid("entropy of a distribution with negative entries");
        sum += p;
        if (p > 0.0) h -= p * std::log(p);
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance) invalid("entropy input does not sum to 1");
    return std::max(h, 0.0);
}

double max_score(std::span<const double> dist) {
    if (dist.empty()) invalid("max_score of an empty distribution");
    return *std::max_element(dist.begin(), dist.end());
}

std::vector<LayerHeadStats> layer_head_stats(const AttentionTrace& trace) {
    const TraceHeader& h = trace.header();
    std::vector<LayerHeadStats> out;
    out.reserve(h.num_layers * h.num_heads);
    for (int layer : h.layer_ids) {
        for (std::size_t head = 0; head < h.num_heads; ++head) {
            const auto dist = layer_distribution(trace, layer, head);
            out.push_back({layer, head, entropy(dist), max_score(dist)});
        }
    }
    return out;
}

ConcentrationProfile concentration_profile(const AttentionTrace& trace, double sigma_floor) {
    const TraceHeader& h = trace.header();
    std::vector<double> mean_max(h.num_layers, 0.0);
    std::vector<double> mean_entropy(h.num_layers, 0.0);
    for (const LayerHeadStats& s : layer_head_stats(trace)) {
        const std::size_t pos = h.layer_position(s.layer);
        mean_max[pos] += s.max_score;
        mean_entropy[pos] += s.entropy;
    }
    const auto heads = static_cast<double>(h.num_heads);
    for (std::size_t l = 0; l < h.num_layers; ++l) {
        mean_max[l] /= heads;
        mean_entropy[l] /= heads;
    }
    return concentration_profile(h.layer_ids, std::move(mean_max), std::move(mean_entropy), sigma_floor);
}

ConcentrationProfile concentration_profile(std::vector<int> layer_ids, std::vector<double> mean_max,
                                           std::vector<double> mean_entropy, double sigma_floor) {
    if (layer_ids.size() != mean_max.size() || layer_ids.size() != mean_entropy.size()) {
        invalid("per-layer statistics have mismatched lengths");
    }
    std::vector<double> ratio(layer_ids.size());
    for (std::size_t l = 0; l < ratio.size(); ++l) {
        ratio[l] = mean_max[l] / std::max(mean_entropy[l], sigma_floor);
    }
    auto profile = profile_from_ratios(std::move(layer_ids), std::move(ratio));
    profile.mean_max = std::move(mean_max);
    profile.mean_entropy = std::move(mean_entropy);
    return profile;
}

ConcentrationProfile profile_from_ratios(std::vector<int> layer_ids, std::vector<double> ratio) {
    if (layer_ids.size() != ratio.size() || ratio.empty()) invalid("layer ids and R values must align");
    ConcentrationProfile p;
    p.layer_ids = std::move(layer_ids);
    p.ratio = std::move(ratio);
    p.delta.resize(p.ratio.size());
    for (std::size_t l = 1; l < p.ratio.size(); ++l) p.delta[l] = p.ratio[l] - p.ratio[l - 1];
    return p;
}

PhaseOutcome detect_phases(const ConcentrationProfile& profile, const PhaseConfig& cfg) {
    cfg.validate();
    const std::size_t L = profile.size();
    if (L < kMinLayersForPhases) {
        invalid("phase detection needs at least " + std::to_string(kMinLayersForPhases) + " layers, got " +
                std::to_string(L));
    }
    for (std::size_t l = 1; l < L; ++l) {
        if (!profile.delta[l] || !std::isfinite(*profile.delta[l])) invalid("non-finite ΔR at layer position " + std::to_string(l));
    }

    // ΔR exists from the second layer on, so the baseline window of
    // ceil(f * L) layers contributes ceil(f * L) - 1 differences.
    const auto baseline_layers =
        std::min<std::size_t>(L, static_cast<std::size_t>(std::ceil(cfg.baseline_fraction * static_cast<double>(L))));
    std::vector<double> base;
    for (std::size_t l = 1; l < std::max<std::size_t>(baseline_layers, 2); ++l) base.push_back(*profile.delta[l]);
    const double mu = std::accumulate(base.begin(), base.end(), 0.0) / static_cast<double>(base.size());
    double var = 0.0;
    for (double d : base) var += (d - mu) * (d - mu);
    const double sigma = std::sqrt(var / static_cast<double>(base.size()));
    const double threshold = mu + cfg.lambda * std::max(sigma, cfg.sigma_floor);

    std::optional<std::size_t> start;
    double max_delta = -std::numeric_limits<double>::infinity();
    for (std::size_t l = 1; l < L; ++l) {
        max_delta = std::max(max_delta, *profile.delta[l]);
        if (!start && *profile.delta[l] > threshold) start = l;
    }
    if (!start) return NoFocusDetected{mu, sigma, threshold, max_delta};

    double rho = cfg.window_fraction;
    if (cfg.auto_window) {
        const double peak = *std::max_element(profile.ratio.begin() + static_cast<std::ptrdiff_t>(*start), profile.ratio.end());
        const auto plateau = std::count_if(profile.ratio.begin() + static_cast<std::ptrdiff_t>(*start), profile.ratio.end(),
                                           [&](double r) { return r >= kPlateauLevel * peak; });
        rho = static_cast<double>(plateau) > kPlateauSpan * static_cast<double>(L) ? kBroadWindow : kSharpWindow;
    }
    const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rho * static_cast<double>(L))));
    const std::size_t end = std::min(*start + window - 1, L - 1);

    PhaseProfile out;
    out.start_pos = *start;
    out.end_pos = end;
    out.l_start = profile.layer_ids[*start];
    out.l_end = profile.layer_ids[end];
    out.window = window;
    out.window_fraction = rho;
    out.baseline_mean = mu;
    out.baseline_std = sigma;
    out.threshold = threshold;
    out.lambda = cfg.lambda;
    out.diffusion = LayerInterval{profile.layer_ids.front(), profile.layer_ids[*start - 1]};
    out.focus = LayerInterval{out.l_start, out.l_end};
    if (end + 1 < L) out.rediffusion = LayerInterval{profile.layer_ids[end + 1], profile.layer_ids.back()};
    return out;
}

namespace {

nlohmann::json interval_json(const std::optional<LayerInterval>& i) {
    if (!i) return nullptr;
    return {i->first, i->last};
}

}  // namespace

nlohmann::json to_json(const ConcentrationProfile& p) {
    nlohmann::json delta = nlohmann::json::array();
    for (const auto& d : p.delta) delta.push_back(d ? nlohmann::json(*d) : nlohmann::json(nullptr));
    nlohmann::json j{{"layer_ids", p.layer_ids}, {"R", p.ratio}, {"delta_R", delta}};
    if (!p.mean_max.empty()) {
        j["mean_max"] = p.mean_max;
        j["mean_entropy"] = p.mean_entropy;
    }
    return j;
}

nlohmann::json to_json(const PhaseProfile& p) {
    return {{"status", "focus_detected"},
            {"l_start", p.l_start},
            {"l_end", p.l_end},
            {"window", p.window},
            {"window_fraction", p.window_fraction},
            {"mu_base", p.baseline_mean},
            {"sigma_base", p.baseline_std},
            {"threshold", p.threshold},
            {"lambda", p.lambda},
            {"phases",
             {{"diffusion", interval_json(p.diffusion)},
              {"focus", interval_json(p.focus)},
              {"rediffusion", interval_json(p.rediffusion)}}}};
}

nlohmann::json to_json(const NoFocusDetected& o) {
    return {{"status", "NoFocusDetected"},
            {"mu_base", o.baseline_mean},
            {"sigma_base", o.baseline_std},
            {"threshold", o.threshold},
            {"max_delta_R", o.max_delta}};
}

std::string profile_csv(const ConcentrationProfile& profile, const PhaseProfile* phases) {
    std::ostringstream out;
    out.precision(17);
    out << "layer,R,delta_R,phase\n";
    for (std::size_t l = 0; l < profile.size(); ++l) {
        out << profile.layer_ids[l] << ',' << profile.ratio[l] << ',';
        if (profile.delta[l]) out << *profile.delta[l];
        out << ',';
        if (phases) out << phases->phase_of(l);
        out << '\n';
    }
    return out.str();
}

}  // namespace focusgate
