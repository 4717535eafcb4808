#include "focusgate/synth_fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

// Softmax of `logits / temperature` written into a float row.
void softmax_into(const std::vector<double>& logits, double temperature, std::span<float> out) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> e(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp((logits[i] - peak) / temperature);
        sum += e[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
}

// Random probability vector of length n scaled to `mass`.
void random_mass(FixtureRng& rng, std::span<float> out, double mass) {
    std::vector<double> w(out.size());
    for (double& x : w) x = std::exp(rng.normal());
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(mass * w[i] / sum);
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

double FixtureRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double FixtureRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::size_t FixtureRng::index(std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

// --- phase fixtures ----------------------------------------------------------

void PhaseFixtureSpec::validate() const {
    if (num_layers < 2 || num_heads < 1 || num_tokens < 2) invalid("phase fixture needs L >= 2, H >= 1, N_total >= 2");
    if (!(boundary > 0 && window > 0 && boundary + window <= num_layers)) {
        invalid("phase fixture needs 0 < b < b + K_true <= L");
    }
    if (!(diffusion_temperature > 0.0 && focus_temperature > 0.0 && rediffusion_temperature > 0.0)) {
        invalid("temperatures must be positive");
    }
    if (noise_std < 0.0 || query_jitter < 0.0) invalid("noise parameters must be non-negative");
    const std::size_t patches = has_cls ? num_tokens - 1 : num_tokens;
    if (focus_tokens < 1 || focus_tokens > patches) invalid("focus_tokens must lie in [1, N]");
    if (storage == Storage::ClsReduced && !has_cls) invalid("cls_reduced storage requires has_cls");
}

PhaseFixtureSpec phase_spec_from_json(const nlohmann::json& j) {
    try {
        PhaseFixtureSpec s;
        s.model_id = get_or(j, "model_id", s.model_id);
        s.num_layers = get_or(j, "L", s.num_layers);
        s.num_heads = get_or(j, "H", s.num_heads);
        s.num_tokens = get_or(j, "N_total", s.num_tokens);
        s.has_cls = get_or(j, "has_cls", s.has_cls);
        s.storage = get_or<std::string>(j, "storage", to_string(s.storage)) == "full" ? Storage::Full
                                                                                     : Storage::ClsReduced;
        s.boundary = get_or(j, "boundary", s.boundary);
        s.window = get_or(j, "window", s.window);
        s.diffusion_temperature = get_or(j, "diffusion_temperature", s.diffusion_temperature);
        s.focus_temperature = get_or(j, "focus_temperature", s.focus_temperature);
        s.rediffusion_temperature = get_or(j, "rediffusion_temperature", s.rediffusion_temperature);
        s.noise_std = get_or(j, "noise_std", s.noise_std);
        s.focus_tokens = get_or(j, "focus_tokens", s.focus_tokens);
        s.peak_gain = get_or(j, "peak_gain", s.peak_gain);
        s.query_jitter = get_or(j, "query_jitter", s.query_jitter);
        s.seed = get_or(j, "seed", s.seed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("malformed phase fixture spec: ") + e.what());
    }
}

nlohmann::json to_json(const PhaseFixtureSpec& s) {
    return {{"type", "phase"},
            {"model_id", s.model_id},
            {"L", s.num_layers},
            {"H", s.num_heads},
            {"N_total", s.num_tokens},
            {"has_cls", s.has_cls},
            {"storage", to_string(s.storage)},
            {"boundary", s.boundary},
            {"window", s.window},
            {"diffusion_temperature", s.diffusion_temperature},
            {"focus_temperature", s.focus_temperature},
            {"rediffusion_temperature", s.rediffusion_temperature},
            {"noise_std", s.noise_std},
            {"focus_tokens", s.focus_tokens},
            {"peak_gain", s.peak_gain},
            {"query_jitter", s.query_jitter},
            {"seed", s.seed}};
}

AttentionTrace gen_phase_trace(const PhaseFixtureSpec& spec) {
    spec.validate();
    FixtureRng rng(spec.seed);
    const std::size_t n_total = spec.num_tokens;
    const std::size_t offset = spec.has_cls ? 1 : 0;

    // Fixed peak subset, partial Fisher-Yates over patch ids.
    std::vector<std::size_t> patches(n_total - offset);
    std::iota(patches.begin(), patches.end(), offset);
    for (std::size_t i = 0; i < spec.focus_tokens; ++i) {
        std::swap(patches[i], patches[i + rng.index(patches.size() - i)]);
    }
    std::vector<double> bonus(n_total, 0.0);
    for (std::size_t i = 0; i < spec.focus_tokens; ++i) bonus[patches[i]] = spec.peak_gain;

    std::vector<std::vector<double>> head_logits(spec.num_heads, std::vector<double>(n_total));
    for (auto& z : head_logits) {
        for (std::size_t i = 0; i < n_total; ++i) z[i] = rng.normal() + bonus[i];
    }
    std::vector<double> temperature(spec.num_layers);
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        const double base = l < spec.boundary                 ? spec.diffusion_temperature
                            : l < spec.boundary + spec.window ? spec.focus_temperature
                                                              : spec.rediffusion_temperature;
        temperature[l] = base * std::exp(spec.noise_std * rng.normal());
    }

    std::vector<int> layer_ids(spec.num_layers);
    std::iota(layer_ids.begin(), layer_ids.end(), 0);
    AttentionTrace trace(vision_header(spec.model_id, layer_ids, spec.num_heads, n_total, spec.has_cls, spec.storage));
    std::vector<double> logits(n_total);
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
        for (std::size_t h = 0; h < spec.num_heads; ++h) {
            for (std::size_t q = 0; q < trace.rows_per_head(); ++q) {
                const bool clean = spec.has_cls && q == 0;
                for (std::size_t i = 0; i < n_total; ++i) {
                    logits[i] = head_logits[h][i] + (clean ? 0.0 : spec.query_jitter * rng.normal());
                }
                softmax_into(logits, temperature[l], trace.row(l, h, q));
            }
        }
    }
    return trace;
}

// --- feature fixtures --------------------------------------------------------

void FeatureFixtureSpec::validate() const {
    if (num_patches < 1 || dim < 1) invalid("feature fixture needs N >= 1 and C >= 1");
    if (clusters < 1 || clusters > num_patches) invalid("cluster_count must lie in [1, N]");
    if (noise_std < 0.0) invalid("noise_std must be non-negative");
}

FeatureFixtureSpec feature_spec_from_json(const nlohmann::json& j) {
    try {
        FeatureFixtureSpec s;
        s.model_id = get_or(j, "model_id", s.model_id);
        s.num_patches = get_or(j, "N", s.num_patches);
        s.dim = get_or(j, "C", s.dim);
        s.clusters = get_or(j, "clusters", s.clusters);
        s.noise_std = get_or(j, "noise_std", s.noise_std);
        s.has_cls = get_or(j, "has_cls", s.has_cls);
        s.source_layer = get_or(j, "source_layer", s.source_layer);
        s.seed = get_or(j, "seed", s.seed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("malformed feature fixture spec: ") + e.what());
    }
}

nlohmann::json to_json(const FeatureFixtureSpec& s) {
    return {{"type", "features"},   {"model_id", s.model_id},         {"N", s.num_patches},
            {"C", s.dim},           {"clusters", s.clusters},         {"noise_std", s.noise_std},
            {"has_cls", s.has_cls}, {"source_layer", s.source_layer}, {"seed", s.seed}};
}

FeatureFixture gen_feature_dump(const FeatureFixtureSpec& spec) {
    spec.validate();
    FixtureRng rng(spec.seed);
    std::vector<double> centers(spec.clusters * spec.dim);
    for (double& c : centers) c = rng.normal();

    const std::size_t n_total = spec.num_patches + (spec.has_cls ? 1 : 0);
    FeatureFixture out{FeatureDump(feature_header(spec.model_id, spec.source_layer, n_total, spec.has_cls, spec.dim)),
                       std::vector<std::size_t>(spec.num_patches)};
    for (std::size_t i = 0; i < spec.num_patches; ++i) {
        const std::size_t k = i % spec.clusters;
        out.cluster[i] = k;
        auto row = out.dump.row(i);
        for (std::size_t c = 0; c < spec.dim; ++c) {
            const double noise = spec.noise_std > 0.0 ? spec.noise_std * rng.normal() : 0.0;
            row[c] = static_cast<float>(centers[k * spec.dim + c] + noise);
        }
    }
    return out;
}

// --- decoder fixtures --------------------------------------------------------

void DecoderFixtureSpec::validate() const {
    if (tokens < 1 || layer_ids.empty() || num_heads < 1) invalid("decoder fixture needs tokens, layers and heads");
    if (!(target_var >= 0.0 && target_var <= 1.0)) invalid("target_var must lie in [0, 1]");
    if (visual_span.begin >= visual_span.end || visual_span.end > context_length) invalid("invalid visual span");
    const bool has_outside = visual_span.size() < context_length;
    if (!has_outside && target_var < 1.0) invalid("visual span covers the context but target_var < 1");
    if (row_noise < 0.0 || image_jitter < 0.0) invalid("noise parameters must be non-negative");
}

DecoderFixtureSpec decoder_spec_from_json(const nlohmann::json& j) {
    try {
        DecoderFixtureSpec s;
        s.model_id = get_or(j, "model_id", s.model_id);
        s.tokens = get_or(j, "tokens", s.tokens);
        s.layer_ids = get_or(j, "layer_ids", s.layer_ids);
        s.num_heads = get_or(j, "H", s.num_heads);
        s.context_length = get_or(j, "context_length", s.context_length);
        if (j.contains("visual_span")) {
            const auto span = j.at("visual_span").get<std::vector<std::size_t>>();
            if (span.size() != 2) invalid("visual_span must be [start, end]");
            s.visual_span = {span[0], span[1]};
        }
        s.target_var = get_or(j, "target_var", s.target_var);
        s.row_noise = get_or(j, "row_noise", s.row_noise);
        s.image_jitter = get_or(j, "image_jitter", s.image_jitter);
        s.seed = get_or(j, "seed", s.seed);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("malformed decoder fixture spec: ") + e.what());
    }
}

nlohmann::json to_json(const DecoderFixtureSpec& s) {
    return {{"type", "decoder"},
            {"model_id", s.model_id},
            {"tokens", s.tokens},
            {"layer_ids", s.layer_ids},
            {"H", s.num_heads},
            {"context_length", s.context_length},
            {"visual_span", {s.visual_span.begin, s.visual_span.end}},
            {"target_var", s.target_var},
            {"row_noise", s.row_noise},
            {"image_jitter", s.image_jitter},
            {"seed", s.seed}};
}

DecoderTrace gen_decoder_trace(const DecoderFixtureSpec& spec) {
    spec.validate();
    FixtureRng rng(spec.seed);
    const double headroom = std::min(spec.target_var, 1.0 - spec.target_var);
    const double image_target =
        spec.target_var + rng.uniform(-1.0, 1.0) * std::min(spec.image_jitter, headroom);
    const double row_amp = std::min({spec.row_noise, image_target, 1.0 - image_target});

    DecoderTrace trace(decoder_header(spec.model_id, spec.layer_ids, spec.num_heads, spec.context_length,
                                      spec.visual_span, spec.tokens));
    const TokenSpan span = spec.visual_span;
    for (std::size_t t = 0; t < spec.tokens; ++t) {
        for (std::size_t l = 0; l < spec.layer_ids.size(); ++l) {
            for (std::size_t h = 0; h < spec.num_heads; ++h) {
                const double v = std::clamp(image_target + rng.uniform(-1.0, 1.0) * row_amp, 0.0, 1.0);
                auto row = trace.row(t, l, h);
                random_mass(rng, row.subspan(span.begin, span.size()), v);
                if (span.begin > 0 || span.end < row.size()) {
                    // Outside mass spread over the positions before and after the span.
                    std::vector<float> rest(row.size() - span.size());
                    random_mass(rng, rest, 1.0 - v);
                    std::copy(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(span.begin), row.begin());
                    std::copy(rest.begin() + static_cast<std::ptrdiff_t>(span.begin), rest.end(),
                              row.begin() + static_cast<std::ptrdiff_t>(span.end));
                }
            }
        }
    }
    return trace;
}

}  // namespace focusgate
