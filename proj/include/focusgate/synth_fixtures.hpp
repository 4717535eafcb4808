#pragma once

// Seeded synthetic traces with known ground truth.
//
// Randomness comes from std::mt19937_64, whose output sequence is fixed by the
// C++ standard. Uniforms use the top 53 bits of each draw; normals use the
// Box-Muller transform. The standard library distributions are avoided because
// their output differs between implementations.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "focusgate/trace_io.hpp"

namespace focusgate {

class FixtureRng {
public:
    explicit FixtureRng(std::uint64_t seed) : engine_(seed) {}

    double uniform();  // [0, 1)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();   // standard normal
    std::size_t index(std::size_t n);  // uniform in [0, n)

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct PhaseFixtureSpec {
    std::string model_id = "synthetic";
    std::size_t num_layers = 24;
    std::size_t num_heads = 8;
    std::size_t num_tokens = 577;
    bool has_cls = true;
    Storage storage = Storage::ClsReduced;
    std::size_t boundary = 11;  // first focus layer
    std::size_t window = 7;     // focus layers
    double diffusion_temperature = 8.0;
    double focus_temperature = 0.5;
    double rediffusion_temperature = 2.0;
    // Per-layer log-normal jitter on the temperature.
    double noise_std = 0.0;
    std::size_t focus_tokens = 8;  // size of the fixed peak subset
    double peak_gain = 4.0;        // logit bonus of the peak subset
    double query_jitter = 0.5;     // per-row logit noise for non-CLS query rows
    std::uint64_t seed = 0;

    void validate() const;
};

PhaseFixtureSpec phase_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PhaseFixtureSpec& spec);

// Rows are softmax((z_h + peak_gain * 1[peak subset]) / T_l); T_l follows the
// diffusion / focus / rediffusion temperatures. Layer ids are 0..L-1.
AttentionTrace gen_phase_trace(const PhaseFixtureSpec& spec);

struct FeatureFixture {
    FeatureDump dump;
    std::vector<std::size_t> cluster;  // cluster label per patch token
};

struct FeatureFixtureSpec {
    std::string model_id = "synthetic";
    std::size_t num_patches = 576;
    std::size_t dim = 64;
    std::size_t clusters = 4;
    double noise_std = 0.0;  // relative to the unit-variance cluster centers
    bool has_cls = true;
    int source_layer = 11;
    std::uint64_t seed = 0;

    void validate() const;
};

FeatureFixtureSpec feature_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FeatureFixtureSpec& spec);

// Token i belongs to cluster i % clusters; its features are the cluster center
// plus isotropic noise.
FeatureFixture gen_feature_dump(const FeatureFixtureSpec& spec);

struct DecoderFixtureSpec {
    std::string model_id = "synthetic";
    std::size_t tokens = 50;
    std::vector<int> layer_ids{0, 1, 2, 3};
    std::size_t num_heads = 4;
    std::size_t context_length = 64;
    TokenSpan visual_span{8, 40};
    double target_var = 0.5;
    // Each row's visual mass is target_var + u * min(noise, target, 1 - target), u in [-1, 1].
    double row_noise = 0.05;
    // Constant shift per trace, drawn the same way.
    double image_jitter = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

DecoderFixtureSpec decoder_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DecoderFixtureSpec& spec);

DecoderTrace gen_decoder_trace(const DecoderFixtureSpec& spec);

}  // namespace focusgate
